"""Monte Carlo campaigns over the random model and least-squares rate fits.

Every campaign is a pure function of its config dict. Per-sample work runs
through ``_pmap``, which keeps task order, so reports do not depend on the
worker count. Samples that fail the uniqueness or accuracy checks are kept
as rejected records and counted.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import kstest, linregress

from .ensemble import RandomPotential, deterministic_coefficients, parse_law, sample_coefficients
from .errors import ConfigError, NotInRegime, NumericalError
from .limits import antiderivative_energy, case_classifier, constant_L, sigma2_corollary
from .perturbation import CharacteristicSeries, phi_root
from .profiles import gamma_exponent, parse_profile, vanishing_order
from .resonances import (WORK_ABS, WORK_IM, Box, find_resonances, resonant_pair, square_barrier_resonances,
                         winding_number)
from .sobolev import hnorm_difference, sample_seed

SCHEMA = 1
CAMPAIGNS = ("case_study", "localization", "free_region", "counterexample", "deterministic")
DISK_FACTOR = 4.0


def config_digest(config: dict) -> str:
    """Content hash of a config; key order does not matter."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _cpair(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _num(x):
    """JSON-safe float: NaN and inf become None."""
    if x is None:
        return None
    x = float(x)
    return x if np.isfinite(x) else None


@dataclass
class ExperimentReport:
    campaign: str
    config: dict
    N_list: list[int]
    M: int
    records: list[dict] = field(default_factory=list)
    statistics: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return config_digest(self.config)

    def to_dict(self) -> dict:
        return {"schema": SCHEMA, "campaign": self.campaign, "config": self.config, "digest": self.digest,
                "N_list": list(self.N_list), "M": self.M, "records": self.records,
                "statistics": self.statistics, "tolerances": self.tolerances}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        data = json.loads(text)
        if data.get("schema") != SCHEMA:
            raise ConfigError("unsupported report schema")
        return cls(data["campaign"], data["config"], data["N_list"], data["M"], data["records"],
                   data["statistics"], data["tolerances"])

    def to_csv(self) -> str:
        """One row per record, scalar fields only."""
        buf = io.StringIO()
        if not self.records:
            return ""
        keys = sorted({k for r in self.records for k, v in r.items() if not isinstance(v, (list, dict))})
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in self.records:
            w.writerow({k: r.get(k) for k in keys})
        return buf.getvalue()

    def rejection_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(bool(r.get("rejected")) for r in self.records) / len(self.records)


def _pmap(fn, tasks: list, workers: int = 1) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def rate_fit(points) -> tuple[float, float]:
    """Slope and its standard error of ln(delta) against ln(N)."""
    pts = [(float(n), float(d)) for n, d in points]
    if len(pts) < 3:
        raise ConfigError("rate_fit needs at least 3 points")
    if any(d <= 0 or n <= 0 for n, d in pts):
        raise ConfigError("rate_fit needs positive N and delta")
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    fit = linregress(x, y)
    return float(fit.slope), float(fit.stderr)


@lru_cache(maxsize=8)
def _profile(text: str):
    return parse_profile(text)


@lru_cache(maxsize=8)
def _pair(q0_text: str, lam0: tuple[float, float]):
    return resonant_pair(_profile(q0_text), complex(*lam0))


def _gamma(q_text: str) -> float:
    # a zero profile has no vanishing order; its disks are never used
    qp = _profile(q_text)
    return 0.5 if qp.is_zero else float(gamma_exponent(1, vanishing_order(qp)))


def _potential(cfg: dict, N: int, index: int) -> tuple[RandomPotential, int | None]:
    q0, q = _profile(cfg["q0"]), _profile(cfg["q"])
    if cfg.get("pattern"):
        return RandomPotential(q0, q, deterministic_coefficients(cfg["pattern"], N)), None
    seed = sample_seed(cfg["seed"], index)
    return RandomPotential(q0, q, sample_coefficients(parse_law(cfg["law"]), N, 1, seed)), seed


def _disk_radius(cfg: dict, N: int) -> float:
    if cfg.get("radius"):
        return float(cfg["radius"])
    gamma = _gamma(cfg["q"])
    return min(DISK_FACTOR * N ** (-gamma / 2), 1.0)


# ---------------------------------------------------------------- case study

_CASE_POWER = {"I": 0.5, "II": 1.5, "III": 2.0}


def _solver_shift(V, lam0: complex, radius: float, series_fallback) -> tuple[complex | None, str]:
    box = Box.around(lam0, radius)
    try:
        found = [r for r in find_resonances(V, box) if abs(r.lam - lam0) < radius]
    except NumericalError:
        try:
            if winding_number(V, box) == 1:
                return series_fallback(), "fallback"
        except NumericalError:
            pass
        return None, "solver_failed"
    total = sum(r.multiplicity for r in found)
    if total == 0:
        return None, "no_candidate"
    if total > 1:
        return None, "ambiguous"
    return found[0].lam - lam0, ""


def _case_sample(task) -> dict:
    cfg, N, index = task
    lam0 = complex(*cfg["lam0"])
    V, seed = _potential(cfg, N, index)
    rec = {"N": N, "index": index, "seed": seed, "rejected": False, "reason": ""}
    if _profile(cfg["q"]).is_zero:
        rec["shift"] = [0.0, 0.0]
        return rec
    pair = _pair(cfg["q0"], tuple(cfg["lam0"]))
    radius = _disk_radius(cfg, N)
    series = CharacteristicSeries(pair, V, K=0)

    def series_root():
        return phi_root(series, pair.lambda0, radius) - pair.lambda0

    try:
        if cfg["method"] == "series":
            shift, reason = series_root(), ""
        else:
            shift, reason = _solver_shift(V, pair.lambda0, radius, series_root)
    except NotInRegime:
        shift, reason = None, "not_in_regime"
    if shift is None:
        rec.update(rejected=True, reason=reason)
        return rec
    rec["reason"] = reason
    rec["shift"] = _cpair(shift)
    if cfg["method"] == "series" and index < cfg.get("spot_checks", 0):
        solved, why = _solver_shift(V, pair.lambda0, radius, lambda: None)
        rec["spot_gap"] = _num(abs(solved - shift)) if solved is not None else None
        rec["spot_reason"] = why
    return rec


def _normalizer(case: str, q) -> complex:
    if case == "I":
        return 1j * q.integral()
    if case == "II":
        return 1j * q.moments[1]
    return 1.0


def _ks(values: np.ndarray, var: float) -> float | None:
    if len(values) < 2 or not var > 0:
        return None
    return float(kstest(values / np.sqrt(var), "norm").statistic)


def _gaussian_stats(y: np.ndarray, sigma2: float) -> dict:
    var = float(np.mean(y**2)) if len(y) else float("nan")
    conv = {"theorem": sigma2, "text": sigma2 / 2}
    return {
        "count": int(len(y)),
        "mean": _num(np.mean(y)) if len(y) else None,
        "variance": _num(var),
        "ks_fit": _ks(y, var),
        "conventions": {k: {"sigma2": _num(v), "ks": _ks(y, v), "ratio": _num(var / v) if v else None}
                        for k, v in conv.items()},
    }


def run_case_study(case: str, q0: str, q: str, lam0: complex = 0j, N_list=(40,), M: int = 2000, seed: int = 0,
                   law: str = "rademacher", method: str = "series", spot_checks: int = 0,
                   radius: float | None = None, workers: int = 1) -> ExperimentReport:
    """Shifts of the resonance nearest lam0, rescaled by the case's N-power and normalizer.

    ``method`` is ``series`` (root of the k=0 characteristic equation) or
    ``solver`` (argument-principle search in the isolation disk). With
    ``spot_checks`` > 0 the first samples of a series run are also solved.
    """
    if case not in _CASE_POWER:
        raise ConfigError(f"unknown case {case!r}")
    if method not in ("series", "solver"):
        raise ConfigError(f"unknown method {method!r}")
    cfg = {"campaign": "case_study", "case": case, "q0": q0, "q": q, "lam0": _cpair(lam0),
           "N_list": [int(n) for n in N_list], "M": int(M), "seed": int(seed), "law": law,
           "method": method, "spot_checks": int(spot_checks), "radius": radius}
    parse_law(law)
    qp = _profile(q)
    degenerate = qp.is_zero
    pair = None
    if not degenerate:
        pair = _pair(q0, tuple(cfg["lam0"]))
        found = case_classifier(1, qp, pair)
        if found != case:
            raise ConfigError(f"classifier gives case {found}, not {case}")
    tasks = [(cfg, N, i) for N in cfg["N_list"] for i in range(M)]
    records = _pmap(_case_sample, tasks, workers)

    stats = {"degenerate": degenerate, "per_N": {}}
    if pair is not None:
        s2 = sigma2_corollary(case, pair, 1, qp) if (pair.free or pair.axis_type) else None
        stats["sigma2_corollary"] = _cpair(s2) if s2 is not None else None
        if case == "III":
            L = constant_L(qp, pair)
            stats["L"] = _cpair(L)
            stats["int_Q2"] = _num(antiderivative_energy(qp).real)
    rms_points = []
    means = {}
    for N in cfg["N_list"]:
        rows = [r for r in records if r["N"] == N]
        ok = [r for r in rows if not r["rejected"]]
        shifts = np.array([complex(*r["shift"]) for r in ok])
        entry = {"accepted": len(ok), "rejected": len(rows) - len(ok),
                 "rejection_rate": (len(rows) - len(ok)) / len(rows) if rows else 0.0}
        if len(shifts):
            entry["max_abs_re_shift"] = _num(np.max(np.abs(shifts.real)))
            rms = float(np.sqrt(np.mean(np.abs(shifts) ** 2)))
            entry["rms_shift"] = rms
            if rms > 0:
                rms_points.append((N, rms))
            gaps = [r["spot_gap"] for r in ok if r.get("spot_gap") is not None]
            if gaps:
                entry["spot_checks"] = len(gaps)
                entry["max_spot_gap"] = max(gaps)
        if not degenerate and len(shifts):
            scaled = N ** _CASE_POWER[case] * shifts / _normalizer(case, qp)
            for r, z in zip(ok, scaled):
                r["rescaled"] = _cpair(z)
            if case == "III":
                mean = complex(np.mean(scaled))
                means[N] = mean
                entry["mean_N2_shift"] = _cpair(mean)
                entry["ratio_to_L"] = _num((mean / (1j * L)).real)
                entry["ratio_to_int_Q2"] = _num((mean / (1j * stats["int_Q2"])).real)
            elif s2 is not None:
                entry.update(_gaussian_stats(scaled.real, s2.real))
                entry["max_abs_im_rescaled"] = _num(np.max(np.abs(scaled.imag)))
        stats["per_N"][str(N)] = entry
    if len(rms_points) >= 3:
        slope, err = rate_fit(rms_points)
        stats["rate"] = {"slope": slope, "stderr": err, "expected": -_CASE_POWER[case]}
    if case == "III" and len(means) >= 2:
        Ns = sorted(means)
        stats["cauchy_gaps"] = [{"N": [a, b], "gap": _num(abs(means[b] - means[a]) / abs(means[b]))}
                                for a, b in zip(Ns, Ns[1:])]
    return ExperimentReport("case_study", cfg, cfg["N_list"], M, records, stats,
                            {"disk_factor": DISK_FACTOR, "series_tol": 1e-13})


def deterministic_study(pattern: str, q: str, N_list, lam0: complex = 0j, q0: str = "zero",
                        workers: int = 1) -> ExperimentReport:
    """|lam_N - lam0| for a deterministic coefficient pattern, with its rate fit."""
    cfg = {"campaign": "deterministic", "pattern": pattern, "q0": q0, "q": q, "lam0": _cpair(lam0),
           "N_list": [int(n) for n in N_list], "method": "solver", "radius": None}
    deterministic_coefficients(pattern, 1)
    records = _pmap(_deterministic_sample, [(cfg, N, 0) for N in cfg["N_list"]], workers)
    pts = [(r["N"], np.hypot(*r["shift"])) for r in records if not r["rejected"]]
    stats = {"distances": {str(n): d for n, d in pts}}
    if len(pts) >= 3 and all(d > 0 for _, d in pts):
        slope, err = rate_fit(pts)
        stats["rate"] = {"slope": slope, "stderr": err}
    return ExperimentReport("deterministic", cfg, cfg["N_list"], 1, records, stats, {"disk_factor": DISK_FACTOR})


def _deterministic_sample(task) -> dict:
    cfg, N, _ = task
    V, _ = _potential(cfg, N, 0)
    pair = _pair(cfg["q0"], tuple(cfg["lam0"]))
    series = CharacteristicSeries(pair, V, K=0)
    radius = _disk_radius(cfg, N)
    shift, reason = _solver_shift(V, pair.lambda0, radius,
                                  lambda: phi_root(series, pair.lambda0, radius) - pair.lambda0)
    rec = {"N": N, "seed": None, "rejected": shift is None, "reason": reason}
    if shift is not None:
        rec["shift"] = _cpair(shift)
    return rec


# ---------------------------------------------------------------- localization

def _localization_sample(task) -> dict:
    cfg, N, index = task
    V, seed = _potential(cfg, N, index)
    rec = {"N": N, "index": index, "seed": seed, "rejected": False, "reason": ""}
    try:
        found = find_resonances(V, Box(*cfg["box"]))
    except NumericalError as exc:
        rec.update(rejected=True, reason=type(exc).__name__)
        return rec
    rec["resonances"] = [[*_cpair(r.lam), r.multiplicity] for r in found]
    return rec


def _check_inclusion(found, background, R: float, radius_of) -> tuple[bool, float]:
    """Inclusion and per-disk counts; returns (ok, worst distance / disk radius)."""
    inside = [(complex(a, b), m) for a, b, m in found if abs(complex(a, b)) < R]
    worst = 0.0
    ok = True
    for z, _ in inside:
        ratio = min(abs(z - lam) / radius_of(m) for lam, m in background)
        worst = max(worst, ratio)
        ok &= ratio < 1.0
    for lam, m in background:
        if abs(lam) >= R:
            continue
        count = sum(mz for z, mz in [(complex(a, b), mm) for a, b, mm in found] if abs(z - lam) < radius_of(m))
        ok &= count == m
    return bool(ok), worst


def localization_check(q0: str, q: str, law: str = "rademacher", R: float = 2.5, N: int = 40, M: int = 100,
                       seed: int = 0, radius_factors=(1.0,), workers: int = 1) -> ExperimentReport:
    """Fraction of samples whose resonances in D(0,R) sit in the disks D(lam, c N^{-gamma/(2 m_lam)}).

    One solver pass per sample serves every factor c in ``radius_factors``.
    """
    if R <= 0:
        raise ConfigError("R must be positive")
    gamma = _gamma(q)
    pad = max(radius_factors) * N ** (-gamma / 2)
    box = Box(max(-R - pad, -WORK_ABS), min(R + pad, WORK_ABS), max(-R - pad, -WORK_IM), min(R + pad, WORK_IM))
    cfg = {"campaign": "localization", "q0": q0, "q": q, "law": law, "R": float(R), "N_list": [int(N)],
           "M": int(M), "seed": int(seed), "radius_factors": [float(c) for c in radius_factors],
           "box": box.as_list()}
    parse_law(law)
    q0p = _profile(q0)
    background = [] if q0p.is_zero else [(r.lam, r.multiplicity) for r in find_resonances(q0p, box)]
    if q0p.is_zero:
        background = [(0j, 1)]
    for lam, m in background:
        if abs(abs(lam) - R) < 2 * N ** (-gamma / (2 * m)):
            raise ConfigError(f"background resonance {lam} is too close to the circle |lambda| = R")
    records = _pmap(_localization_sample, [(cfg, N, i) for i in range(M)], workers)
    stats = {"background": [[*_cpair(lam), m] for lam, m in background], "gamma": gamma, "per_factor": {}}
    for c in cfg["radius_factors"]:
        def radius_of(m, c=c):
            return c * N ** (-gamma / (2 * m))
        sat = vio = rej = 0
        worst = (0.0, None)
        for r in records:
            if r["rejected"]:
                rej += 1
                continue
            if _profile(q).is_zero:
                ok, w = True, 0.0
            else:
                ok, w = _check_inclusion(r["resonances"], background, R, radius_of)
            sat += ok
            vio += not ok
            if w > worst[0]:
                worst = (w, r["seed"])
        stats["per_factor"][repr(c)] = {
            "satisfied": sat, "violated": vio, "rejected": rej,
            "fraction": sat / M, "violated_fraction": vio / M, "rejected_fraction": rej / M,
            "worst_ratio": worst[0], "worst_seed": worst[1]}
    return ExperimentReport("localization", cfg, [N], M, records, stats, {"disk_exponent": -gamma / 2})


# ---------------------------------------------------------------- resonance-free region

def _free_sample(task) -> dict:
    cfg, N, index = task
    V, seed = _potential(cfg, N, index)
    rec = {"N": N, "index": index, "seed": seed, "rejected": False, "reason": ""}
    try:
        lams = [r.lam for r in find_resonances(V, Box(*cfg["box"]))]
    except NumericalError as exc:
        rec.update(rejected=True, reason=type(exc).__name__)
        return rec
    rec["count"] = len(lams)
    if lams:
        k = int(np.argmin(np.abs(lams)))
        near = lams.pop(k)
        gamma = _gamma(cfg["q"])
        rec["excluded"] = _cpair(near)
        rec["excluded_in_disk"] = bool(abs(near) < DISK_FACTOR * N ** (-gamma / 2))
    rec["top_im"] = max(z.imag for z in lams) if lams else None
    return rec


def resonance_free_scan(q: str, law: str = "rademacher", N_list=(8, 16, 32), M: int = 20,
                        box=(-0.5, 20.0, -10.0, 0.5), seed: int = 0, workers: int = 1) -> ExperimentReport:
    """Highest resonance after removing the one nearest 0, per N, and its fit against ln N."""
    b = box if isinstance(box, Box) else Box(*box)
    b.check_working_range()
    cfg = {"campaign": "free_region", "q0": "zero", "q": q, "law": law, "N_list": [int(n) for n in N_list],
           "M": int(M), "seed": int(seed), "box": b.as_list()}
    parse_law(law)
    records = _pmap(_free_sample, [(cfg, N, i) for N in cfg["N_list"] for i in range(M)], workers)
    table = []
    for N in cfg["N_list"]:
        rows = [r for r in records if r["N"] == N and not r["rejected"]]
        tops = [r["top_im"] for r in rows if r.get("top_im") is not None]
        flags = [r["excluded_in_disk"] for r in rows if "excluded_in_disk" in r]
        table.append({"N": N, "max_top_im": max(tops) if tops else None,
                      "min_neg_im": -max(tops) if tops else None,
                      "excluded_in_disk_fraction": (sum(flags) / len(flags)) if flags else None,
                      "rejected": sum(1 for r in records if r["N"] == N and r["rejected"])})
    stats = {"table": table}
    pts = [(row["N"], row["max_top_im"]) for row in table if row["max_top_im"] is not None]
    if len(pts) >= 2:
        fit = linregress(np.log([p[0] for p in pts]), [p[1] for p in pts])
        stats["slope_vs_lnN"] = float(fit.slope)
        stats["A_fit"] = -float(fit.slope)
    return ExperimentReport("free_region", cfg, cfg["N_list"], M, records, stats, {"disk_factor": DISK_FACTOR})


# ---------------------------------------------------------------- counterexample

def _counter_sample(task) -> dict:
    cfg, N, _ = task
    V, _ = _potential(cfg, N, 0)
    found = find_resonances(V, Box(*cfg["box"]))
    return {"N": N, "seed": None, "rejected": False, "reason": "",
            "resonances": [_cpair(r.lam) for r in found],
            "hnorm_distance": hnorm_difference(V, 2.0)}


def counterexample_study(q: str, N_list=(10, 20, 40), box=(0.0, 8.0, -4.0, 0.5),
                         workers: int = 1) -> ExperimentReport:
    """All-ones coefficients: resonances of V_N against those of the unit barrier on [-1, 1]."""
    qp = _profile(q)
    if abs(qp.integral() - 1.0) > 1e-8:
        raise ConfigError("counterexample study needs a unit-mass profile")
    b = box if isinstance(box, Box) else Box(*box)
    b.check_working_range()
    cfg = {"campaign": "counterexample", "q0": "zero", "q": q, "pattern": "all_ones",
           "N_list": [int(n) for n in N_list], "box": b.as_list()}
    barrier = square_barrier_resonances(1.0, b)
    records = _pmap(_counter_sample, [(cfg, N, 0) for N in cfg["N_list"]], workers)
    tracked = []
    for lam in barrier:
        dists = []
        for r in records:
            found = [complex(*z) for z in r["resonances"]]
            dists.append(min(abs(z - lam) for z in found) if found else None)
        ok = all(d is not None for d in dists)
        tracked.append({"barrier": _cpair(lam), "distances": dists,
                        "decreasing": bool(ok and all(b2 < a for a, b2 in zip(dists, dists[1:])))})
    stats = {"tracked": tracked, "counts": {str(r["N"]): len(r["resonances"]) for r in records},
             "hnorm_distance": {str(r["N"]): r["hnorm_distance"] for r in records}}
    if len(records) >= 3:
        slope, err = rate_fit([(r["N"], r["hnorm_distance"]) for r in records])
        stats["hnorm_rate"] = {"slope": slope, "stderr": err}
    return ExperimentReport("counterexample", cfg, cfg["N_list"], 1, records, stats, {"solver_tol": 1e-10})


# ---------------------------------------------------------------- replay

def run_config(config: dict, workers: int = 1) -> ExperimentReport:
    """Rerun a campaign from the config embedded in a report."""
    c = dict(config)
    kind = c.pop("campaign", None)
    if kind == "case_study":
        return run_case_study(c["case"], c["q0"], c["q"], complex(*c["lam0"]), c["N_list"], c["M"], c["seed"],
                              c["law"], c["method"], c["spot_checks"], c["radius"], workers)
    if kind == "localization":
        R = c["R"]
        return localization_check(c["q0"], c["q"], c["law"], R, c["N_list"][0], c["M"], c["seed"],
                                  c["radius_factors"], workers)
    if kind == "free_region":
        return resonance_free_scan(c["q"], c["law"], c["N_list"], c["M"], c["box"], c["seed"], workers)
    if kind == "counterexample":
        return counterexample_study(c["q"], c["N_list"], c["box"], workers)
    if kind == "deterministic":
        return deterministic_study(c["pattern"], c["q"], c["N_list"], complex(*c["lam0"]), c["q0"], workers)
    raise ConfigError(f"unknown campaign {kind!r}")


def diff_reports(a: dict, b: dict, path: str = "") -> list[str]:
    """Paths at which two JSON-like trees differ."""
    if isinstance(a, dict) and isinstance(b, dict):
        out = []
        for k in sorted(set(a) | set(b)):
            out += diff_reports(a.get(k), b.get(k), f"{path}/{k}")
        return out
    if isinstance(a, list) and isinstance(b, list) and len(a) == len(b):
        out = []
        for i, (x, y) in enumerate(zip(a, b)):
            out += diff_reports(x, y, f"{path}[{i}]")
        return out
    return [] if a == b else [path or "/"]
