"""Characteristic series for the resonance that a small oscillating potential
pulls out of a simple resonance lam0 of the background q0.

    phi(lam) = lam - lam0 + i * sum_k (-1)^k a_k(lam),
    a_k(lam) = < (V_# L)^k V_# f, conj g >,

where L has kernel K(lam, |x - y|) = i (e^{i lam r} - 1) / (2 lam), the free
resolvent with its pole at 0 removed. The kernel is known in closed form only
for q0 = 0, so terms with k >= 1 require a free background.

Applying L costs O(n) on a Gauss grid: the kernel splits into one-sided
cumulative integrals, of exponentials e^{-+ i lam y} when |lam| * diam is not
small, and of monomials y^m (a truncated power series in lam) otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial

import numpy as np

from ._quad import composite_rule, cumulative_matrix, panel_edges
from .ensemble import RandomPotential, weak_pairing
from .errors import ConfigError, NotInRegime, NumericalError
from .resonances import ResonantPair
from .sobolev import hnorm_spectral

_SERIES_SWITCH = 0.5  # use the power series when |lam| * diameter is below this
_SERIES_TERMS = 18
_GRID_NODES = 24
_PANELS_PER_FEATURE = 8


def regularized_kernel(lam, r) -> np.ndarray:
    """K(lam, r) = i (e^{i lam r} - 1) / (2 lam), continuous at lam = 0 where it is -r/2."""
    lam, r = np.broadcast_arrays(np.asarray(lam, dtype=complex), np.asarray(r, dtype=float))
    if np.any(r < 0):
        raise ConfigError("r must be nonnegative")
    z = 1j * lam * r
    small = np.abs(z) < 1e-4
    out = np.empty(z.shape, dtype=complex)
    zs = z[small]
    # i/(2 lam) * (e^z - 1) = -(r/2) * (1 + z/2 + z^2/6 + z^3/24 + z^4/120)
    out[small] = -0.5 * r[small] * (1 + zs / 2 * (1 + zs / 3 * (1 + zs / 4 * (1 + zs / 5))))
    big = ~small
    out[big] = 1j * np.expm1(z[big]) / (2 * lam[big])
    return out if out.ndim else out[()]


class _Grid:
    """Panel Gauss grid on an interval with one-sided cumulative integration."""

    def __init__(self, breaks, max_width: float, n: int = _GRID_NODES):
        edges = panel_edges(breaks, max_width)
        x, w = composite_rule(edges, n)
        self.n = n
        self.panels = len(edges) - 1
        self.x = x
        self.w = w
        self.half = (0.5 * np.diff(edges))[:, None]
        self.S = cumulative_matrix(n)
        self.diameter = float(edges[-1] - edges[0])
        self.center = 0.5 * float(edges[0] + edges[-1])

    @cached_property
    def powers(self) -> np.ndarray:
        x = self.x - self.center
        return np.cumprod(np.vstack([np.ones_like(x)] + [x] * (_SERIES_TERMS + 1)), axis=0)

    def left(self, vals: np.ndarray) -> np.ndarray:
        """Integral from the left end to each node; vals has shape (..., n_nodes)."""
        shape = vals.shape
        v = vals.reshape(shape[:-1] + (self.panels, self.n))
        local = self.half * (v @ self.S.T)
        totals = np.sum(v * self.w.reshape(self.panels, self.n), axis=-1)
        offsets = np.cumsum(totals, axis=-1) - totals
        return (local + offsets[..., None]).reshape(shape)

    def total(self, vals: np.ndarray) -> np.ndarray:
        return vals @ self.w

    def apply_kernel(self, lam: complex, psi: np.ndarray) -> np.ndarray:
        """(L psi)(x_i) = sum over the grid of K(lam, |x_i - y|) psi(y)."""
        lam = complex(lam)
        if abs(lam) * self.diameter >= _SERIES_SWITCH:
            return self._apply_exponential(lam, psi)
        return self._apply_series(lam, psi)

    def _apply_exponential(self, lam, psi):
        x = self.x - self.center
        ep, em = np.exp(1j * lam * x), np.exp(-1j * lam * x)
        lo_m = self.left(em * psi)
        lo_p = self.left(ep * psi)
        hi_p = self.total(ep * psi) - lo_p
        return 1j / (2 * lam) * (ep * lo_m + em * hi_p - self.total(psi))

    def _apply_series(self, lam, psi):
        # K = -(r/2) sum_n (i lam r)^n / (n+1)!; |x-y|^p expanded binomially in x and y:
        # sum_y |x-y|^p psi(y) = sum_m C(p,m) (-1)^m x^(p-m) (lo_m(x) + (-1)^p hi_m(x))
        powers = self.powers
        nt = _series_length(abs(lam) * self.diameter)
        powers = powers[: nt + 2]
        lo = self.left(powers * psi)
        hi = (powers @ (self.w * psi))[:, None] - lo
        A, B = _series_tables(complex(lam), nt)
        return np.sum(powers * (A @ lo + B @ hi), axis=0)


def _series_length(t: float) -> int:
    """Number of series terms with t^n / (n+1)! below 1e-18 (t = |lam| * diameter)."""
    n, term = 1, 0.5 * t
    while term > 1e-18 and n < _SERIES_TERMS:
        n += 1
        term *= t / (n + 1)
    return n


def _series_tables(lam: complex, terms: int) -> tuple[np.ndarray, np.ndarray]:
    """A[k, m], B[k, m]: coefficient of x^k lo_m and x^k hi_m in the series for L psi."""
    P = terms + 1
    A = np.zeros((P + 1, P + 1), dtype=complex)
    B = np.zeros((P + 1, P + 1), dtype=complex)
    z = 1j * lam
    for n in range(terms):
        p = n + 1
        coef = -0.5 * z**n / factorial(p)
        for m in range(p + 1):
            c = coef * comb(p, m) * (-1.0) ** m
            A[p - m, m] += c
            B[p - m, m] += c * (-1.0) ** p
    return A, B


@dataclass(frozen=True)
class SeriesCalibration:
    """Constant C in |a_k| <= (C h)^{k+1}, fitted on calibration samples."""

    C: float
    samples: int = 0

    def tail(self, h: float, K: int) -> float:
        ch = self.C * h
        if ch >= 1:
            return float("inf")
        return ch ** (K + 2) / (1 - ch)


class CharacteristicSeries:
    """phi truncated after the a_K term, for one realized oscillating potential."""

    def __init__(self, pair: ResonantPair, V: RandomPotential, K: int = 0,
                 calibration: SeriesCalibration | None = None):
        if V.d != 1:
            raise ConfigError("characteristic series needs d=1")
        if K < 0:
            raise ConfigError("K must be nonnegative")
        if K >= 1 and not pair.free:
            raise ConfigError("terms with k >= 1 need a free background (q0 = 0)")
        if K > 4:
            raise ConfigError("series truncation above K=4 is not supported")
        self.pair = pair
        self.V = V.oscillating_part()
        self.K = K
        self.calibration = calibration
        self._a0 = None

    @cached_property
    def grid(self) -> _Grid:
        V = self.V
        return _Grid(V.breakpoints, V.feature / _PANELS_PER_FEATURE)

    @cached_property
    def _grid_values(self):
        g = self.grid
        return self.V(g.x), self.pair.f(g.x), self.pair.g(g.x)

    @cached_property
    def h(self) -> float:
        """H^{-1} size of V_#."""
        return hnorm_spectral(self.V, 1.0)

    @property
    def tail_estimate(self) -> float:
        if self.calibration is None:
            return float("nan")
        return self.calibration.tail(self.h, self.K)

    def a0(self) -> complex:
        if self._a0 is None:
            pair = self.pair
            self._a0 = weak_pairing(self.V, pair.fg)
        return self._a0

    def terms(self, lam: complex, K: int | None = None, kernel=None) -> np.ndarray:
        """a_0 .. a_K at lam. ``kernel`` may replace the grid operator (testing hook)."""
        K = self.K if K is None else K
        out = np.empty(K + 1, dtype=complex)
        out[0] = self.a0()
        if K == 0:
            return out
        if not self.pair.free:
            raise ConfigError("terms with k >= 1 need a free background (q0 = 0)")
        g = self.grid
        v, f, gg = self._grid_values
        apply = kernel or g.apply_kernel
        phi_k = v * f
        for k in range(1, K + 1):
            phi_k = v * apply(lam, phi_k)
            out[k] = g.total(gg * phi_k)
        return out

    def __call__(self, lam: complex) -> complex:
        a = self.terms(lam)
        signs = (-1.0) ** np.arange(len(a))
        return complex(lam - self.pair.lambda0 + 1j * np.sum(signs * a))

    def root(self, radius: float | None = None, tol: float = 1e-13) -> complex:
        return phi_root(self, self.pair.lambda0, radius if radius is not None else self.pair.radius, tol)

    def diagnostics(self, root: complex | None = None, solver: complex | None = None) -> dict:
        a = self.terms(root if root is not None else self.pair.lambda0)
        out = {"a0": [a[0].real, a[0].imag], "tail_estimate": self.tail_estimate, "h": self.h}
        if self.K >= 1:
            out["a1"] = [a[1].real, a[1].imag]
        if root is not None:
            out["root"] = [root.real, root.imag]
        if solver is not None:
            out["solver_resonance"] = [solver.real, solver.imag]
            if root is not None:
                out["gap"] = abs(root - solver)
        return out


def term_a(k: int, V: RandomPotential, pair: ResonantPair, lam: complex) -> complex:
    """The k-th series term a_k(lam)."""
    return complex(CharacteristicSeries(pair, V, K=k).terms(lam)[k])


def phi(series: CharacteristicSeries, lam: complex) -> complex:
    return series(lam)


def _winding_on_circle(fun, center: complex, radius: float, n: int = 16) -> int:
    theta = np.linspace(0, 2 * np.pi, n + 1)
    pts = center + radius * np.exp(1j * theta)
    vals = np.array([fun(p) for p in pts])
    for _ in range(8):
        d = np.angle(vals[1:] / vals[:-1])
        bad = np.abs(d) >= np.pi / 4
        if not np.any(bad):
            break
        mid_t = 0.5 * (theta[:-1] + theta[1:])[bad]
        mid_v = np.array([fun(center + radius * np.exp(1j * t)) for t in mid_t])
        theta = np.concatenate([theta, mid_t])
        vals = np.concatenate([vals, mid_v])
        order = np.argsort(theta, kind="stable")
        theta, vals = theta[order], vals[order]
    else:
        raise NumericalError("winding of phi on the disk did not resolve")
    w = np.sum(np.angle(vals[1:] / vals[:-1])) / (2 * np.pi)
    return int(round(w))


def phi_root(series: CharacteristicSeries, center: complex, radius: float, tol: float = 1e-13) -> complex:
    """The unique zero of phi in the disk; NotInRegime when the disk does not hold exactly one."""
    fun = series.__call__
    if _winding_on_circle(fun, center, radius) != 1:
        raise NotInRegime("phi does not have exactly one zero in the disk")
    lam = complex(center)
    h = 1e-7 * max(radius, 1e-3)
    for _ in range(100):
        val = fun(lam)
        if abs(val) < tol:
            break
        deriv = (fun(lam + h) - fun(lam - h)) / (2 * h)
        step = val / deriv
        lam -= step
        if abs(lam - center) > radius:
            raise NumericalError("Newton iteration for phi left the disk")
        if abs(step) < 1e-15 * max(1.0, abs(lam)):
            break
    return lam


def calibrate(samples, pair: ResonantPair, K: int, safety: float = 1.0) -> SeriesCalibration:
    """Smallest C with |a_k(lam0)| <= (C h)^{k+1} for k <= K+1 on every sample, times ``safety``."""
    C = 0.0
    count = 0
    for V in samples:
        s = CharacteristicSeries(pair, V, K=K)
        a = s.terms(pair.lambda0, K=K + 1 if pair.free else 0)
        h = s.h
        if h == 0:
            continue
        for k, ak in enumerate(a):
            C = max(C, abs(ak) ** (1.0 / (k + 1)) / h)
        count += 1
    if count == 0:
        raise ConfigError("calibration needs at least one nonzero sample")
    return SeriesCalibration(C * safety, count)


def series_json(records: list[dict]) -> str:
    return json.dumps(records, sort_keys=True)
