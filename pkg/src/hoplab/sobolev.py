"""Negative-order Sobolev norms of the oscillating part of the potential.

Two independent routes give |V_#|_{H^{-s}}^2:

* the Toeplitz alpha-matrix, whose quadratic form in the coefficients u is
  the squared norm, and
* direct quadrature of the Fourier transform of V_# assembled from q_hat.

Both use the Plancherel normalization
``|V|_{H^{-s}}^2 = (2 pi)^{-d} * integral |V_hat|^2 (1 + |xi|^2)^{-s}``.

The operator norm of V between H^s and H^{-s} is never computed. The H^{-s}
norm above is used as its proxy throughout.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import binomtest

from ._quad import composite_rule, panel_edges
from .ensemble import CoefficientField, CoefficientLaw, RandomPotential, counter_uniforms, stream_key
from .errors import ConfigError, NumericalError
from .profiles import FourierTable, Profile, fourier

_GL = 16
_FT_FLOOR = 1e-14


@lru_cache(maxsize=64)
def _spectrum_scan(q: Profile, radial: bool) -> tuple[np.ndarray, np.ndarray]:
    xi = np.geomspace(1e-4, 2e3, 600) / q.feature
    if radial:
        vals = np.abs(radial_fourier(q, xi)) ** 2 * xi**2
    else:
        vals = np.maximum(np.abs(fourier(q, xi)), np.abs(fourier(q, -xi))) ** 2
    return xi, vals


def fourier_cutoff(q: Profile, N: int = 1, s: float = 0.0, floor: float = _FT_FLOOR,
                   radial: bool = False) -> float:
    """Frequency beyond which |q_hat|^2 (1 + N^2 xi^2)^{-s} stays below floor times its maximum."""
    xi, vals = _spectrum_scan(q, radial)
    vals = vals / (1.0 + (N * xi) ** 2) ** s
    above = np.nonzero(vals > floor * vals.max())[0]
    return float(xi[min(above[-1] + 1, len(xi) - 1)])


@lru_cache(maxsize=64)
def _table(q: Profile, top: float) -> FourierTable:
    return FourierTable(q, top)


def fourier_values(q: Profile, xi: np.ndarray) -> np.ndarray:
    """q_hat on a large frequency grid through a cached interpolation table."""
    top = float(np.max(np.abs(xi), initial=1.0))
    top = 2.0 ** np.ceil(np.log2(top))  # quantized so tables are shared
    return _table(q, top)(xi)


def radial_fourier(rho: Profile, r) -> np.ndarray:
    """3-d transform of the radial function rho(|x|): 4 pi integral rho(t) t^2 sinc(r t) dt."""
    r = np.asarray(r, dtype=float)
    a, b = rho.support
    top = float(np.max(np.abs(r), initial=0.0))
    width = rho.feature / 8 if top == 0 else min(rho.feature / 8, 2 * np.pi / top)
    t, w = composite_rule(panel_edges((max(a, 0.0), b) + tuple(p for p in rho.breakpoints if p > 0), width), 24)
    vals = w * rho(t) * t**2
    return 4 * np.pi * (np.sinc(np.outer(r.ravel(), t) / np.pi) @ vals).reshape(r.shape)


def _graded_edges(scale: float, top: float, max_width: float) -> np.ndarray:
    """Panel edges on [0, top]: geometric near 0 at the given scale, then at most max_width wide."""
    inner = scale * 2.0 ** np.arange(-8, 1)
    edges = [0.0, *inner[inner < top]]
    pos = edges[-1]
    width = scale
    while pos < top:
        width = min(2 * width, max_width)
        pos = min(pos + width, top)
        edges.append(pos)
    return np.asarray(edges)


@dataclass(frozen=True, eq=False)
class AlphaMatrix:
    """Toeplitz matrix alpha_{j,l} = profile[j - l], stored by difference index."""

    s: float
    N: int
    d: int
    profile: np.ndarray  # d=1: index k + 2N for k in [-2N, 2N]; d=3: cube of side 2*cutoff+1
    cutoff: int
    hs_norm: float = field(init=False)

    def __post_init__(self):
        self.profile.setflags(write=False)
        object.__setattr__(self, "hs_norm", float(np.sqrt(self._hs_squared())))

    @property
    def center(self) -> complex:
        return complex(self.profile[(self.cutoff,) * self.d])

    @property
    def trace(self) -> float:
        return float((2 * self.N + 1) ** self.d * self.center.real)

    def entry(self, j, l) -> complex:
        diff = np.atleast_1d(np.subtract(j, l))
        if np.any(np.abs(diff) > self.cutoff):
            return 0j
        return complex(self.profile[tuple(diff + self.cutoff)])

    def _hs_squared(self) -> float:
        n = 2 * self.N + 1
        k = np.arange(-self.cutoff, self.cutoff + 1)
        mult = np.maximum(n - np.abs(k), 0).astype(float)
        weight = mult
        for _ in range(self.d - 1):
            weight = np.multiply.outer(weight, mult)
        return float(np.sum(weight * np.abs(self.profile) ** 2))

    def dense(self) -> np.ndarray:
        if self.d != 1:
            raise ConfigError("dense form only for d=1")
        n = 2 * self.N + 1
        idx = np.subtract.outer(np.arange(n), np.arange(n)) + self.cutoff
        return self.profile[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"k{i + 1}" for i in range(self.d)] + ["re", "im"])
        for idx in np.ndindex(*self.profile.shape):
            v = complex(self.profile[idx])
            w.writerow([i - self.cutoff for i in idx] + [repr(v.real), repr(v.imag)])
        return buf.getvalue()


def alpha_matrix(q: Profile, N: int, d: int = 1, s: float = 2.0, cutoff: int | None = None) -> AlphaMatrix:
    """alpha_{jl} = (2 pi)^{-d} N^{-d} integral e^{i xi (j-l)} |q_hat|^2 (1 + N^2 |xi|^2)^{-s}."""
    if not s > 0:
        raise ConfigError("s must be positive")
    if d == 1:
        return _alpha_1d(q, N, s)
    if d == 3:
        return _alpha_3d(q, N, s, 2 if cutoff is None else cutoff)
    raise ConfigError("alpha_matrix supports d in {1, 3}")


def _alpha_1d(q: Profile, N: int, s: float) -> AlphaMatrix:
    top = fourier_cutoff(q, N, s, floor=1e-16)
    kmax = 2 * N
    edges = _graded_edges(1.0 / N, top, np.pi / kmax)
    edges = np.concatenate([-edges[:0:-1], edges])
    xi, w = composite_rule(edges, _GL)
    weight = w * np.abs(fourier_values(q, xi)) ** 2 / (1.0 + (N * xi) ** 2) ** s
    k = np.arange(-kmax, kmax + 1)
    prof = np.exp(1j * np.outer(k, xi)) @ weight / (2 * np.pi * N)
    return AlphaMatrix(s, N, 1, prof, kmax)


def _alpha_3d(rho: Profile, N: int, s: float, cutoff: int) -> AlphaMatrix:
    top = fourier_cutoff(rho, N, s, floor=1e-16, radial=True)
    kmax = np.sqrt(3.0) * cutoff
    r_edges = _graded_edges(1.0 / N, top, np.pi / max(kmax, 1.0))
    r, w = composite_rule(r_edges, _GL)
    weight = w * np.abs(radial_fourier(rho, r)) ** 2 * r**2 / (1.0 + (N * r) ** 2) ** s
    ks = np.arange(-cutoff, cutoff + 1)
    grid = np.sqrt(sum(np.meshgrid(ks, ks, ks, indexing="ij")[i] ** 2 for i in range(3)).astype(float))
    radii = np.unique(grid)
    vals = np.sinc(np.outer(radii, r) / np.pi) @ weight * 4 * np.pi / ((2 * np.pi) ** 3 * N**3)
    prof = vals[np.searchsorted(radii, grid)].astype(complex)
    return AlphaMatrix(s, N, 3, prof, cutoff)


def _residue_check(value: complex, scale: float) -> float:
    if abs(value.imag) > 1e-9 * max(scale, 1e-300):
        raise NumericalError(f"quadratic form has imaginary residue {value.imag:.3e}")
    return value.real


def autocorrelations(U: np.ndarray, kmax: int) -> np.ndarray:
    """R[..., k] = sum_j u_j u_{j-k} for k = 0..kmax along the last axis."""
    n = U.shape[-1]
    out = np.empty(U.shape[:-1] + (kmax + 1,))
    for k in range(kmax + 1):
        out[..., k] = np.sum(U[..., k:] * U[..., : n - k], axis=-1) if k < n else 0.0
    return out


def quadratic_forms(A: AlphaMatrix, U: np.ndarray) -> np.ndarray:
    """Row-wise sum_{j,l} alpha_{j-l} u_j u_l for a stack of d=1 coefficient vectors."""
    if A.d != 1:
        raise ConfigError("batched quadratic forms need d=1")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[-1] != 2 * A.N + 1:
        raise ConfigError("coefficient length does not match alpha matrix")
    c = A.cutoff
    R = autocorrelations(U, 2 * A.N)
    coef = A.profile[c:] + A.profile[c::-1]
    coef[0] = A.profile[c]
    vals = R @ coef
    scale = A.trace + np.abs(R[..., 0]) * abs(A.center)
    bad = np.abs(vals.imag) > 1e-9 * np.maximum(scale, 1e-300)
    if np.any(bad):
        raise NumericalError("quadratic form has a nonnegligible imaginary part")
    return vals.real


def quadratic_form(A: AlphaMatrix, u: CoefficientField) -> float:
    """sum_{j,l} alpha_{jl} u_j u_l via the difference (convolution) form."""
    if (u.N, u.d) != (A.N, A.d):
        raise ConfigError("alpha matrix and field disagree on (N, d)")
    if A.d == 1:
        return float(quadratic_forms(A, u.values[None, :])[0])
    # d=3: correlate over differences inside the materialized cutoff
    vals = u.values
    n = vals.shape[0]
    total = 0j
    c = A.cutoff
    for idx in np.ndindex(*A.profile.shape):
        k = np.array(idx) - c
        src = tuple(slice(max(0, kk), n + min(0, kk)) for kk in k)
        dst = tuple(slice(max(0, -kk), n - max(0, kk)) for kk in k)
        total += A.profile[idx] * np.sum(vals[src] * vals[dst])
    return _residue_check(complex(total), A.trace + float(np.sum(vals**2)) * abs(A.center))


def hnorm_spectral(V: RandomPotential, s: float) -> float:
    """sqrt((2 pi)^{-1} integral |V_hat_#(xi)|^2 (1 + xi^2)^{-s} d xi), V_hat_# assembled from q_hat."""
    if V.d != 1:
        raise ConfigError("hnorm_spectral supports d=1 only")
    if not s > 0:
        raise ConfigError("s must be positive")
    N = V.N
    u = V.coeffs.values
    if not np.any(u):
        return 0.0
    top = N * fourier_cutoff(V.q, N, s, floor=1e-16)
    edges = _graded_edges(1.0, top, np.pi / 2)
    edges = np.concatenate([-edges[:0:-1], edges])
    xi, w = composite_rule(edges, _GL)
    j = np.arange(-N, N + 1)
    total = 0.0
    chunk = max(1, 4_000_000 // len(j))
    qhat = fourier_values(V.q, xi / N)
    for a in range(0, len(xi), chunk):
        sl = slice(a, a + chunk)
        S = np.exp(-1j * np.outer(xi[sl], j) / N) @ u
        total += np.sum(w[sl] * np.abs(S * qhat[sl] / N) ** 2 / (1.0 + xi[sl] ** 2) ** s)
    return float(np.sqrt(total / (2 * np.pi)))


def hnorm_difference(V: RandomPotential, s: float, indicator: tuple[float, float, float] = (-1.0, 1.0, 1.0)) -> float:
    """H^{-s} norm of V_# - h * 1_[a,b] with the indicator's exact transform."""
    a, b, height = indicator
    N = V.N
    u = V.coeffs.values
    top = max(N * fourier_cutoff(V.q, N, s, floor=1e-16), 4000.0)
    edges = _graded_edges(1.0, top, np.pi / 2)
    edges = np.concatenate([-edges[:0:-1], edges])
    xi, w = composite_rule(edges, _GL)
    j = np.arange(-N, N + 1)
    qhat = fourier_values(V.q, xi / N)
    total = 0.0
    chunk = max(1, 4_000_000 // len(j))
    for c0 in range(0, len(xi), chunk):
        sl = slice(c0, c0 + chunk)
        x = xi[sl]
        vhat = (np.exp(-1j * np.outer(x, j) / N) @ u) * qhat[sl] / N
        safe = np.where(x == 0, 1.0, x)
        ind = np.where(x == 0, b - a, (np.exp(-1j * a * safe) - np.exp(-1j * b * safe)) / (1j * safe))
        total += np.sum(w[sl] * np.abs(vhat - height * ind) ** 2 / (1.0 + x**2) ** s)
    # tail of the indicator beyond the cutoff: |ind|^2 <= 4/xi^2
    total += 2 * 4 * height**2 * top ** (-1 - 2 * s) / (1 + 2 * s)
    return float(np.sqrt(total / (2 * np.pi)))


def sample_field_batch(law: CoefficientLaw, N: int, seeds) -> np.ndarray:
    """Rows equal to sample_coefficients(law, N, 1, seed).values for each seed."""
    n = 2 * N + 1
    idx = np.arange(n, dtype=np.uint64)
    rows = [law.transform(counter_uniforms(stream_key(int(sd), N, 1), idx)) for sd in seeds]
    return np.asarray(rows).reshape(len(rows), n)


def sample_seed(base: int, index: int) -> int:
    """Per-sample seed derived from a campaign seed; independent of scheduling."""
    return int(stream_key(base, 0x5EED, index))


@dataclass(frozen=True)
class TailCurve:
    t2: np.ndarray
    counts: np.ndarray
    M: int
    p: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray
    hs_norm: float
    trace: float
    mean: float
    std_error: float
    decay_rate: float
    filtered: tuple[float, ...]

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.p) <= 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "t2", "p", "wilson_lo", "wilson_hi"])
        for row in zip(np.sqrt(self.t2), self.t2, self.p, self.wilson_lo, self.wilson_hi):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def wilson_interval(count: int, M: int) -> tuple[float, float]:
    ci = binomtest(int(count), int(M)).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def hw_tail_experiment(A: AlphaMatrix, law: CoefficientLaw, t2_grid, M: int, seed: int) -> TailCurve:
    """Empirical P(|Q| >= t^2) for Q = sum alpha_{jl} u_j u_l over M sampled fields.

    Thresholds are given as t^2. Values below 2|trace| fall outside the
    concentration regime and are filtered out and reported.
    """
    if M < 100:
        raise ConfigError("need at least 100 samples")
    t2 = np.asarray(t2_grid, dtype=float)
    if np.any(np.diff(t2) <= 0):
        raise ConfigError("t grid must be increasing")
    keep = t2 >= 2 * abs(A.trace)
    filtered = tuple(float(v) for v in t2[~keep])
    t2 = t2[keep]
    U = sample_field_batch(law, A.N, [sample_seed(seed, m) for m in range(M)])
    Q = quadratic_forms(A, U)
    counts = np.array([int(np.sum(np.abs(Q) >= v)) for v in t2])
    p = counts / M
    ci = np.array([wilson_interval(c, M) for c in counts]).reshape(-1, 2)
    pos = counts > 0
    rate = np.nan
    if np.sum(pos) >= 2:
        rate = float(np.polyfit(t2[pos] / A.hs_norm, np.log(p[pos]), 1)[0])
    return TailCurve(t2, counts, M, p, ci[:, 0], ci[:, 1], A.hs_norm, A.trace,
                     float(Q.mean()), float(Q.std(ddof=1) / np.sqrt(M)), rate, filtered)
