"""Acceptance criteria 1-15, one test each; every test prints a PASS/FAIL line.

Campaign reports are kept in ``_REPORTS`` so the reproducibility check can
rerun them with a different worker count.
"""

import json
import time

import numpy as np
import pytest

from hoplab import experiments as E
from hoplab.ensemble import RandomPotential, parse_law, sample_coefficients
from hoplab.errors import NotInRegime
from hoplab.perturbation import CharacteristicSeries, calibrate
from hoplab.profiles import box, parse_profile, zero
from hoplab.resonances import Box, find_resonances, free_pair, outgoing_defect, square_barrier_resonances
from hoplab.sobolev import (alpha_matrix, hnorm_spectral, hw_tail_experiment, quadratic_form, quadratic_forms,
                            sample_field_batch, sample_seed)

pytestmark = pytest.mark.acceptance

_REPORTS: dict[str, E.ExperimentReport] = {}
_VALUES: dict[str, str] = {}
WELL = "lincomb(-8*psi)"
WELL_LAM0 = 1.139005569217367j


def _fmt(x):
    return f"{x:.4g}"


# ------------------------------------------------------------------ 1

def test_criterion_01_free_line(criterion):
    find_resonances(zero(), Box(-1, 1, -1, 1))  # compile the integrator first
    t = time.perf_counter()
    res = find_resonances(zero(), Box(-1, 1, -1, 1))
    lam = np.linspace(-1, 1, 10)[:, None] + 1j * np.linspace(-1, 1, 10)[None, :]
    dev = float(np.max(np.abs(outgoing_defect(zero(), lam.ravel()) - 1j * lam.ravel())))
    dt = time.perf_counter() - t
    ok = (len(res) == 1 and abs(res[0].lam) < 1e-10 and res[0].multiplicity == 1 and dev < 1e-10 and dt < 1)
    assert criterion(1, ok, f"roots={len(res)} |lam|={_fmt(abs(res[0].lam))} max|F-i lam|={_fmt(dev)} "
                            f"t={dt:.2f}s")


# ------------------------------------------------------------------ 2

def test_criterion_02_barrier_richardson(criterion):
    t = time.perf_counter()
    region = Box(0, 7, -3, 0)
    exact = np.array(square_barrier_resonances(4.0, region))
    lams = {}
    for w in (0.1, 0.05, 0.025):
        lams[w] = np.array([r.lam for r in find_resonances(box(-1, 1, w).scaled(4.0), region)])
    counts = [len(v) for v in lams.values()]
    ok = len(exact) == 4 and counts == [4, 4, 4]
    err = np.inf
    if ok:
        # errors go like w^2; the next level uses w^3
        r1 = (4 * lams[0.05] - lams[0.1]) / 3
        r2 = (4 * lams[0.025] - lams[0.05]) / 3
        best = (8 * r2 - r1) / 7
        err = float(np.max(np.abs(best - exact)))
    dt = time.perf_counter() - t
    ok = ok and err < 1e-5 and dt < 30
    assert criterion(2, ok, f"roots={counts} max err={_fmt(err)} t={dt:.1f}s")


# ------------------------------------------------------------------ 3

def test_criterion_03_parseval(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    profiles = ["psi", "psi_prime", "d2(psi)", "lincomb(psi + 0.4*affine(psi_prime, 0.3, 0.6))"]
    laws = [parse_law("rademacher"), parse_law("uniform_scaled")]
    worst = 0.0
    for i in range(50):
        N = int(rng.integers(1, 33))
        s = float(rng.choice([1.0, 2.0]))
        q = parse_profile(profiles[i % len(profiles)])
        u = sample_coefficients(laws[i % 2], N, 1, sample_seed(3, i))
        a = quadratic_form(alpha_matrix(q, N, 1, s), u)
        b = hnorm_spectral(RandomPotential(zero(), q, u), s) ** 2
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    dt = time.perf_counter() - t
    assert criterion(3, worst < 1e-6 and dt < 60, f"50 instances max rel gap={_fmt(worst)} t={dt:.1f}s")


# ------------------------------------------------------------------ 4

def test_criterion_04_trace_identity(criterion):
    t = time.perf_counter()
    A = alpha_matrix(parse_profile("psi"), 16, 1, 2.0)
    parts, ok = [], True
    for name in ("rademacher", "uniform_scaled"):
        Q = quadratic_forms(A, sample_field_batch(parse_law(name), 16, [sample_seed(4, m) for m in range(5000)]))
        se = Q.std(ddof=1) / np.sqrt(len(Q))
        z = abs(Q.mean() - A.trace) / se
        ok &= z < 3
        parts.append(f"{name} z={z:.2f}")
    dt = time.perf_counter() - t
    _VALUES["c4"] = json.dumps(parts)
    assert criterion(4, bool(ok) and dt < 60, f"trace={_fmt(A.trace)} {' '.join(parts)} t={dt:.1f}s")


# ------------------------------------------------------------------ 5

def _tail_curve():
    A = alpha_matrix(parse_profile("psi"), 16, 1, 2.0)
    return hw_tail_experiment(A, parse_law("rademacher"), A.trace * np.array([2.0, 3, 4, 5, 6, 7]), 5000, 5)


def test_criterion_05_tail_direction(criterion):
    t = time.perf_counter()
    c = _tail_curve()
    pos = c.counts > 0
    x = c.t2[pos] / c.hs_norm
    local = np.diff(np.log(c.p[pos])) / np.diff(x)
    inside = bool(np.all((c.wilson_lo <= c.p) & (c.p <= c.wilson_hi)))
    separated = bool(c.wilson_hi[-1] < c.wilson_lo[0])
    dt = time.perf_counter() - t
    ok = (c.monotone and bool(np.all(pos)) and bool(np.all(local < 0)) and c.decay_rate < 0 and inside
          and separated and not c.filtered and dt < 120)
    _VALUES["c5"] = c.to_csv()
    assert criterion(5, ok, f"p={np.round(c.p, 4).tolist()} slope={_fmt(c.decay_rate)} "
                            f"local max={_fmt(local.max())} t={dt:.1f}s")


# ------------------------------------------------------------------ 6

def _median_slopes():
    law = parse_law("rademacher")
    out = {}
    for q, gamma in (("psi", 0.5), ("psi_prime", 1.5)):
        pts = []
        for N in (8, 16, 32, 64):
            U = sample_field_batch(law, N, [sample_seed(6, i) for i in range(200)])
            pts.append((N, float(np.median(quadratic_forms(alpha_matrix(parse_profile(q), N, 1, 2.0), U)))))
        out[q] = (E.rate_fit(pts)[0], -2 * gamma)
    return out


def test_criterion_06_negative_norm_scaling(criterion):
    t = time.perf_counter()
    slopes = _median_slopes()
    dt = time.perf_counter() - t
    ok = all(abs(s - e) < 0.15 for s, e in slopes.values()) and dt < 300
    _VALUES["c6"] = json.dumps(slopes)
    assert criterion(6, ok, " ".join(f"{q}: {s:.3f} (want {e})" for q, (s, e) in slopes.items()) + f" t={dt:.1f}s")


# ------------------------------------------------------------------ 7

def test_criterion_07_series_root_equals_solver(criterion):
    t = time.perf_counter()
    law, pair, q = parse_law("rademacher"), free_pair(), parse_profile("psi")

    def pot(seed):
        return RandomPotential(zero(), q, sample_coefficients(law, 20, 1, seed))

    cal = calibrate([pot(sample_seed(1007, i)) for i in range(20)], pair, 2)
    done, bad, worst, i = 0, 0, 0.0, 0
    while done < 50 and i < 200:
        V = pot(sample_seed(7, i))
        i += 1
        s = CharacteristicSeries(pair, V, K=2, calibration=cal)
        try:
            root = s.root()
        except NotInRegime:
            continue
        near = min((r.lam for r in find_resonances(V, Box.around(0j, 0.5))), key=abs)
        bound = max(s.tail_estimate, 1e-8)
        worst = max(worst, abs(root - near) / bound)
        bad += abs(root - near) > bound
        done += 1
    dt = time.perf_counter() - t
    ok = done == 50 and bad == 0 and dt < 600
    assert criterion(7, ok, f"C={_fmt(cal.C)} samples={done} drawn={i} failures={bad} max gap/bound={_fmt(worst)} "
                            f"t={dt:.1f}s")


# ------------------------------------------------------------------ 8

def test_criterion_08_case_one_gaussian(criterion):
    t = time.perf_counter()
    rows, picks = [], set()
    ok = True
    for q in ("normalized(psi)", "normalized(affine(psi, 0.25, 0.5))"):
        rep = E.run_case_study("I", "zero", q, 0j, (40,), 2000, 0, "uniform_scaled", "series", spot_checks=50)
        _REPORTS[f"c8 {q}"] = rep
        e = rep.statistics["per_N"]["40"]
        conv = {k: v["ratio"] for k, v in e["conventions"].items()}
        match = [k for k, r in conv.items() if abs(r - 1) < 0.1]
        picks.add(tuple(match))
        ok &= (e["accepted"] == 2000 and e["max_abs_re_shift"] < 1e-8 and e["ks_fit"] < 0.05
               and len(match) == 1 and e.get("spot_checks") == 50)
        rows.append(f"[{q}] var={_fmt(e['variance'])} ks={_fmt(e['ks_fit'])} ratios={ {k: round(v, 3) for k, v in conv.items()} } "
                    f"max|Re|={_fmt(e['max_abs_re_shift'])} spot max gap={_fmt(e['max_spot_gap'])}")
    dt = time.perf_counter() - t
    ok = ok and len(picks) == 1 and dt < 900
    assert criterion(8, ok, f"convention={sorted(picks)} " + " ".join(rows) + f" t={dt:.1f}s")


# ------------------------------------------------------------------ 9

def test_criterion_09_case_three_limit(criterion):
    t = time.perf_counter()
    ratios, ok, gap = {}, True, None
    for q in ("psi_prime", "d2(psi)", "affine(d1(psi), 0, 0.5)"):
        rep = E.run_case_study("III", "zero", q, 0j, (10, 20, 40, 80), 1, 0, "rademacher", "solver")
        _REPORTS[f"c9 {q}"] = rep
        for N, e in rep.statistics["per_N"].items():
            mean = complex(*e["mean_N2_shift"])
            ok &= e["rejected"] == 0 and e["max_abs_re_shift"] < 1e-8 and mean.imag > 0
        ratios[q] = rep.statistics["per_N"]["80"]["ratio_to_int_Q2"]
        if q == "psi_prime":
            gap = rep.statistics["cauchy_gaps"][-1]["gap"]
    pinned = [c for c in (1.0, 0.5) if all(abs(r / c - 1) < 0.05 for r in ratios.values())]
    dt = time.perf_counter() - t
    ok = ok and gap < 0.05 and len(pinned) == 1 and dt < 1200
    assert criterion(9, ok, f"psi_prime top gap={_fmt(gap)} ratios at N=80={ {k: round(v, 4) for k, v in ratios.items()} } "
                            f"convention={pinned} t={dt:.1f}s")


# ------------------------------------------------------------------ 10

def test_criterion_10_case_two_rate(criterion):
    t = time.perf_counter()
    rep = E.run_case_study("II", WELL, "d1(psi)", WELL_LAM0, (10, 20, 40), 200, 0, "rademacher", "series")
    _REPORTS["c10"] = rep
    slope = rep.statistics["rate"]["slope"]
    dt = time.perf_counter() - t
    ok = abs(slope + 1.5) < 0.2 and dt < 600
    assert criterion(10, ok, f"slope={slope:.3f} rejected={[e['rejected'] for e in rep.statistics['per_N'].values()]} "
                             f"t={dt:.1f}s")


# ------------------------------------------------------------------ 11

def test_criterion_11_localization(criterion):
    t = time.perf_counter()
    rep = E.localization_check(WELL, "psi", "rademacher", 2.5, 40, 100, 0, (0.25, 1.0, 4.0))
    _REPORTS["c11"] = rep
    per = rep.statistics["per_factor"]
    sat = [per[k]["satisfied"] for k in ("0.25", "1.0", "4.0")]
    dt = time.perf_counter() - t
    ok = len(rep.statistics["background"]) >= 2 and sat[1] >= 95 and sat[0] <= sat[1] <= sat[2] and dt < 1800
    assert criterion(11, ok, f"background={len(rep.statistics['background'])} satisfied(0.25,1,4)={sat} "
                             f"t={dt:.1f}s")


# ------------------------------------------------------------------ 12

def test_criterion_12_resonance_free_region(criterion):
    t = time.perf_counter()
    rep = E.resonance_free_scan("psi", "rademacher", (8, 16, 32), 20, (-0.5, 20.0, -10.0, 0.5), 0)
    _REPORTS["c12"] = rep
    tops = [None if row["max_top_im"] is None else float(row["max_top_im"]) for row in rep.statistics["table"]]
    slope = rep.statistics.get("slope_vs_lnN", np.nan)
    dt = time.perf_counter() - t
    ok = None not in tops and all(b < a for a, b in zip(tops, tops[1:])) and slope < 0 and dt < 1200
    assert criterion(12, ok, f"max Im={[round(v, 3) for v in tops]} slope vs ln N={_fmt(slope)} t={dt:.1f}s")


# ------------------------------------------------------------------ 13

def test_criterion_13_counterexample(criterion):
    t = time.perf_counter()
    rep = E.counterexample_study("normalized(psi)", (10, 20, 40), (0.0, 8.0, -4.0, 0.5))
    _REPORTS["c13"] = rep
    matched = sum(tr["decreasing"] for tr in rep.statistics["tracked"])
    slope = rep.statistics["hnorm_rate"]["slope"]
    dt = time.perf_counter() - t
    ok = matched >= 3 and abs(slope + 1) < 0.2 and dt < 600
    assert criterion(13, ok, f"tracked with decreasing distance={matched}/{len(rep.statistics['tracked'])} "
                             f"H^-2 slope={slope:.3f} t={dt:.1f}s")


# ------------------------------------------------------------------ 14

def test_criterion_14_alternating(criterion):
    t = time.perf_counter()
    rep = E.deterministic_study("alternating", "d1(psi)", (10, 20, 40, 80))
    _REPORTS["c14"] = rep
    slope = rep.statistics["rate"]["slope"]
    dt = time.perf_counter() - t
    assert criterion(14, abs(slope + 2) < 0.2 and dt < 300, f"slope={slope:.3f} t={dt:.1f}s")


# ------------------------------------------------------------------ 15

def test_criterion_15_reproducibility(criterion):
    t = time.perf_counter()
    if not _REPORTS:
        _REPORTS["c14"] = E.deterministic_study("alternating", "d1(psi)", (10, 20, 40, 80))
        _REPORTS["c10"] = E.run_case_study("II", WELL, "d1(psi)", WELL_LAM0, (10, 20, 40), 200, 0)
    mismatched = [name for name, rep in _REPORTS.items()
                  if E.run_config(rep.config, workers=2).to_json() != rep.to_json()]
    same_values = True
    if "c5" in _VALUES:
        same_values &= _tail_curve().to_csv() == _VALUES["c5"]
    if "c6" in _VALUES:
        same_values &= json.dumps(_median_slopes()) == _VALUES["c6"]
    dt = time.perf_counter() - t
    ok = not mismatched and same_values
    assert criterion(15, ok, f"reports rerun with 2 workers: {len(_REPORTS)} mismatched={mismatched} "
                             f"tail/median reruns identical={same_values} t={dt:.1f}s")
