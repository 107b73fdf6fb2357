"""Command-line front end.

Each subcommand writes ``<out>.json`` and ``<out>.csv`` and prints one
summary line. Flags may also come from a flat ``key = value`` file given
with ``--config``; command-line flags win. Exit codes: 0 success, 1 bad
configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as E
from .ensemble import (RandomPotential, deterministic_coefficients, parse_law, potential_grid_csv,
                       sample_coefficients)
from .errors import ConfigError, HoplabError, NumericalError
from .limits import constants_report
from .profiles import moment_summary, parse_profile
from .resonances import Box, find_resonances, resonant_pair
from .sobolev import alpha_matrix, hnorm_spectral, hw_tail_experiment, quadratic_form

COMMANDS = ("profile-info", "potential-dump", "resonances", "hnorm", "hw-tail", "limits", "case-study",
            "localize", "free-region", "counterexample", "replay")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


@dataclass
class RunConfig:
    """Effective settings of one invocation (the output path is not part of the digest)."""

    subcommand: str
    values: dict = field(default_factory=dict)
    output: str = ""

    @property
    def digest(self) -> str:
        return E.config_digest({"subcommand": self.subcommand, **self.values})

    def to_text(self) -> str:
        lines = [f"subcommand = {self.subcommand}"]
        lines += [f"{k} = {json.dumps(v)}" for k, v in sorted(self.values.items())]
        if self.output:
            lines.append(f"out = {json.dumps(self.output)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        data = parse_config_text(text)
        sub = data.pop("subcommand", "")
        out = data.pop("out", "")
        return cls(sub, data, out)


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; values are JSON when they parse as JSON, else raw strings."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    if isinstance(text, int):
        return [text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _complex(text) -> complex:
    if isinstance(text, (list, tuple)):
        return complex(*text)
    try:
        return complex(str(text).replace(" ", ""))
    except ValueError:
        raise ConfigError(f"bad complex number {text!r}") from None


def _box(text) -> Box:
    if isinstance(text, (list, tuple)):
        return Box(*(float(v) for v in text))
    return Box.parse(str(text))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hoplab", description="Resonances of random highly oscillatory potentials.")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common(sp, *, potential=True):
        sp.add_argument("--config", help="flat key = value file; flags override it")
        sp.add_argument("--out", help="output path prefix (writes .json and .csv)")
        sp.add_argument("--workers", type=int, help="worker processes (default: logical cores)")
        if potential:
            sp.add_argument("--q0")
            sp.add_argument("--q")
            sp.add_argument("--law")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--pattern", help="alternating or all_ones instead of a random law")

    sp = sub.add_parser("profile-info", help="support, moments, vanishing order")
    common(sp, potential=False)
    sp.add_argument("--q")
    sp.add_argument("--d", type=int)

    sp = sub.add_parser("potential-dump", help="V_N on a grid")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--points", type=int)

    sp = sub.add_parser("resonances", help="certified resonances in a box")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--box")

    sp = sub.add_parser("hnorm", help="H^-s norm of V_# by both routes")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--s", type=float)

    sp = sub.add_parser("hw-tail", help="tail of the quadratic form")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--s", type=float)
    sp.add_argument("--M", type=int)
    sp.add_argument("--t2", help="comma-separated thresholds t^2")

    sp = sub.add_parser("limits", help="limit constants for (q, q0, lam0)")
    common(sp, potential=False)
    sp.add_argument("--q0")
    sp.add_argument("--q")
    sp.add_argument("--d", type=int)
    sp.add_argument("--lam0")
    sp.add_argument("--N")

    sp = sub.add_parser("case-study", help="Monte Carlo shifts of one resonance")
    common(sp)
    sp.add_argument("--case")
    sp.add_argument("--lam0")
    sp.add_argument("--N")
    sp.add_argument("--M", type=int)
    sp.add_argument("--method")
    sp.add_argument("--spot-checks", type=int)

    sp = sub.add_parser("localize", help="disk inclusion around background resonances")
    common(sp)
    sp.add_argument("--R", type=float)
    sp.add_argument("--N")
    sp.add_argument("--M", type=int)
    sp.add_argument("--radius-factors")

    sp = sub.add_parser("free-region", help="highest resonance after removing the one near 0")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--M", type=int)
    sp.add_argument("--box")

    sp = sub.add_parser("counterexample", help="all-ones coefficients against the unit barrier")
    common(sp)
    sp.add_argument("--N")
    sp.add_argument("--box")

    sp = sub.add_parser("replay", help="rerun a saved report and diff")
    sp.add_argument("report")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--out")
    return p


_DEFAULTS = {
    "profile-info": {"q": "psi", "d": 1},
    "potential-dump": {"q0": "zero", "q": "psi", "law": "rademacher", "seed": 0, "N": "20", "points": 2001},
    "resonances": {"q0": "zero", "q": "psi", "law": "rademacher", "seed": 0, "N": "20", "box": "-3,3,-3,0.5"},
    "hnorm": {"q0": "zero", "q": "psi", "law": "rademacher", "seed": 0, "N": "20", "s": 2.0},
    "hw-tail": {"q0": "zero", "q": "psi", "law": "rademacher", "seed": 0, "N": "20", "s": 2.0, "M": 5000,
                "t2": "0.05,0.1,0.2,0.4,0.8"},
    "limits": {"q0": "zero", "q": "psi", "d": 1, "lam0": "0"},
    "case-study": {"q0": "zero", "q": "psi", "law": "rademacher", "seed": 0, "case": "I", "lam0": "0",
                   "N": "40", "M": 2000, "method": "series", "spot_checks": 0},
    "localize": {"q0": "lincomb(-8*psi)", "q": "psi", "law": "rademacher", "seed": 0, "R": 2.5, "N": "40",
                 "M": 100, "radius_factors": "1"},
    "free-region": {"q": "psi", "law": "rademacher", "seed": 0, "N": "8,16,32", "M": 20,
                    "box": "-0.5,20,-10,0.5"},
    "counterexample": {"q": "normalized(psi)", "N": "10,20,40", "box": "0,8,-4,0.5"},
}

_NOT_HASHED = {"config", "out", "workers", "subcommand", "report"}


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the config file and flags (later wins)."""
    values = dict(_DEFAULTS.get(args.subcommand, {}))
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        data = parse_config_text(text)
        data.pop("subcommand", None)
        unknown = set(data) - set(values) - _NOT_HASHED - {"pattern"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(data)
    for k, v in vars(args).items():
        if v is not None and k not in _NOT_HASHED:
            values[k] = v
    out = getattr(args, "out", None) or values.pop("out", None) or f"hoplab_{args.subcommand.replace('-', '_')}"
    values.pop("out", None)
    return RunConfig(args.subcommand, values, out)


def _single_N(values) -> int:
    Ns = _ints(values["N"])
    if len(Ns) != 1:
        raise ConfigError("this subcommand takes a single N")
    return Ns[0]


def _potential(v: dict, N: int) -> RandomPotential:
    q0, q = parse_profile(v["q0"]), parse_profile(v["q"])
    if v.get("pattern"):
        return RandomPotential(q0, q, deterministic_coefficients(v["pattern"], N))
    return RandomPotential(q0, q, sample_coefficients(parse_law(v["law"]), N, 1, int(v["seed"])))


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _cmd_profile_info(v, workers):
    q = parse_profile(v["q"])
    ms = moment_summary(q, int(v["d"]))
    result = {"support": list(q.support), "feature": q.feature, "integral": E._cpair(ms.integral),
              "first_moment": E._cpair(ms.first_moment), "moments": [E._cpair(m) for m in q.moments],
              "vanishing_order": ms.vanishing_order, "gamma": str(ms.gamma), "sup_norm": q.sup_norm()}
    a, b = q.support
    x = np.linspace(a, b, 401)
    vals = np.asarray(q(x), dtype=complex)
    table = _rows_csv(["x", "Req", "Imq"], [(float(s), float(t.real), float(t.imag)) for s, t in zip(x, vals)])
    return result, table, f"m={ms.vanishing_order} gamma={ms.gamma} integral={ms.integral.real:.6g}"


def _cmd_potential_dump(v, workers):
    N = _single_N(v)
    V = _potential(v, N)
    a, b = V.support
    x = np.linspace(a, b, int(v["points"]))
    result = {"N": N, "support": [a, b], "coefficient_bound": V.coeffs.bound, "real": V.is_real}
    return result, potential_grid_csv(V, x), f"N={N} points={len(x)} support=[{a:.4g},{b:.4g}]"


def _cmd_resonances(v, workers):
    N = _single_N(v)
    V = _potential(v, N)
    box = _box(v["box"])
    found = find_resonances(V, box)
    result = {"N": N, "box": box.as_list(), "resonances": [r.to_json() for r in found]}
    table = _rows_csv(["re", "im", "multiplicity", "residual"],
                      [(r.lam.real, r.lam.imag, r.multiplicity, float(r.residual)) for r in found])
    return result, table, f"{len(found)} resonances in {box.as_list()}"


def _cmd_hnorm(v, workers):
    N = _single_N(v)
    V = _potential(v, N)
    s = float(v["s"])
    spectral = hnorm_spectral(V, s)
    A = alpha_matrix(V.q, N, 1, s)
    quad = quadratic_form(A, V.coeffs)
    gap = abs(quad - spectral**2) / max(spectral**2, 1e-300)
    result = {"N": N, "s": s, "hnorm_spectral": spectral, "quadratic_form": quad, "relative_gap": gap}
    table = _rows_csv(["route", "squared_norm"], [("spectral", spectral**2), ("alpha_matrix", quad)])
    return result, table, f"|V#|^2_H^-{s:g} = {spectral**2:.6e} (gap {gap:.1e})"


def _cmd_hw_tail(v, workers):
    N = _single_N(v)
    A = alpha_matrix(parse_profile(v["q"]), N, 1, float(v["s"]))
    curve = hw_tail_experiment(A, parse_law(v["law"]), _floats(v["t2"]), int(v["M"]), int(v["seed"]))
    result = {"N": N, "M": curve.M, "t2": curve.t2.tolist(), "p": curve.p.tolist(), "counts": curve.counts.tolist(),
              "wilson": [curve.wilson_lo.tolist(), curve.wilson_hi.tolist()], "hs_norm": curve.hs_norm,
              "trace": curve.trace, "mean": curve.mean, "std_error": curve.std_error,
              "decay_rate": E._num(curve.decay_rate), "monotone": curve.monotone, "filtered": list(curve.filtered)}
    return result, curve.to_csv(), f"tail decay rate {curve.decay_rate:.4g}, monotone={curve.monotone}"


def _cmd_limits(v, workers):
    d = int(v["d"])
    q = parse_profile(v["q"])
    N = _single_N(v) if v.get("N") else None
    if d == 1:
        pair = resonant_pair(parse_profile(v["q0"]), _complex(v["lam0"]))
    else:
        pair = 0.5
    report = constants_report(q, pair, d, N)
    table = _rows_csv(["key", "value"], [(k, json.dumps(val)) for k, val in sorted(report.items())])
    return report, table, f"case {report['case']} gamma={report['gamma']}"


def _report_out(report: E.ExperimentReport, summary: str):
    return report, report.to_csv(), summary


def _cmd_case_study(v, workers):
    r = E.run_case_study(v["case"], v.get("q0", "zero"), v["q"], _complex(v["lam0"]), _ints(v["N"]), int(v["M"]),
                         int(v["seed"]), v["law"], v["method"], int(v["spot_checks"]), workers=workers)
    return _report_out(r, f"case {v['case']}: rejection rate {r.rejection_rate():.3f}")


def _cmd_localize(v, workers):
    r = E.localization_check(v["q0"], v["q"], v["law"], float(v["R"]), _single_N(v), int(v["M"]), int(v["seed"]),
                             _floats(v["radius_factors"]), workers)
    first = next(iter(r.statistics["per_factor"].values()))
    return _report_out(r, f"satisfied fraction {first['fraction']:.3f}")


def _cmd_free_region(v, workers):
    r = E.resonance_free_scan(v["q"], v["law"], _ints(v["N"]), int(v["M"]), _box(v["box"]), int(v["seed"]),
                              workers)
    return _report_out(r, f"slope vs ln N {r.statistics.get('slope_vs_lnN', float('nan')):.4g}")


def _cmd_counterexample(v, workers):
    r = E.counterexample_study(v["q"], _ints(v["N"]), _box(v["box"]), workers)
    rate = r.statistics.get("hnorm_rate", {}).get("slope", float("nan"))
    return _report_out(r, f"H^-2 distance slope {rate:.4g}")


_HANDLERS = {
    "profile-info": _cmd_profile_info, "potential-dump": _cmd_potential_dump, "resonances": _cmd_resonances,
    "hnorm": _cmd_hnorm, "hw-tail": _cmd_hw_tail, "limits": _cmd_limits, "case-study": _cmd_case_study,
    "localize": _cmd_localize, "free-region": _cmd_free_region, "counterexample": _cmd_counterexample,
}


def _write(out: str, payload: dict, table: str) -> None:
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{out}.json").write_text(json.dumps(payload, sort_keys=True, indent=1, allow_nan=False) + "\n")
    Path(f"{out}.csv").write_text(table)


def _replay(args, workers) -> int:
    try:
        saved = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from None
    if saved.get("schema") != E.SCHEMA:
        raise ConfigError("unsupported report schema")
    if "campaign" in saved and saved["campaign"] in E.CAMPAIGNS:
        fresh = json.loads(E.run_config(saved["config"], workers).to_json())
        if "run_config" in saved:
            fresh["run_config"] = saved["run_config"]
    else:
        ns = argparse.Namespace(subcommand=saved.get("subcommand"), **{"config": None})
        if ns.subcommand not in _HANDLERS:
            raise ConfigError("report has no replayable subcommand")
        cfg = RunConfig(ns.subcommand, saved["config"])
        result, _, _ = _HANDLERS[ns.subcommand](cfg.values, workers)
        fresh = _envelope(cfg, result)
    diffs = E.diff_reports(saved, fresh)
    if args.out:
        _write(args.out, {"schema": E.SCHEMA, "subcommand": "replay", "source": str(args.report), "diff": diffs},
               _rows_csv(["path"], [(d,) for d in diffs]))
    print(f"replay {args.report}: {len(diffs)} differences")
    for d in diffs[:20]:
        print(f"  {d}")
    return 0 if not diffs else 2


def _envelope(cfg: RunConfig, result) -> dict:
    return {"schema": E.SCHEMA, "subcommand": cfg.subcommand, "config": cfg.values, "digest": cfg.digest,
            "result": result}


_VALUE_FLAGS = ("--box", "--lam0", "--t2", "--radius-factors")


def _join_values(argv: list[str]) -> list[str]:
    """Attach values such as ``-3,3,-3,0.5`` that argparse would read as options."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok in _VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def parse_and_dispatch(argv=None) -> int:
    argv = _join_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = build_parser().parse_args(argv)
        workers = args.workers if getattr(args, "workers", None) else (os.cpu_count() or 1)
        if args.subcommand == "replay":
            return _replay(args, workers)
        cfg = resolve(args)
        result, table, summary = _HANDLERS[cfg.subcommand](cfg.values, workers)
        if isinstance(result, E.ExperimentReport):
            payload = result.to_dict()
            payload["run_config"] = {"subcommand": cfg.subcommand, "digest": cfg.digest}
        else:
            payload = _envelope(cfg, result)
        _write(cfg.output, payload, table)
        digest = payload.get("digest", cfg.digest)
        print(f"{cfg.subcommand} [{digest}] {summary} -> {cfg.output}.json")
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except HoplabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
