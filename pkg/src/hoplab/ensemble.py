"""Coefficient fields and the realized potential q0(x) + sum_j u_j q(N x - j)."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .profiles import Profile, zero

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def stream_key(*parts: int) -> np.uint64:
    """Fold integers into a 64-bit key."""
    key = np.uint64(0)
    with np.errstate(over="ignore"):
        for p in parts:
            key = _splitmix(np.uint64(key + np.uint64(p % 2**64) * _GOLDEN + _GOLDEN))[()]
    return np.uint64(key)


def counter_uniforms(key: np.uint64, index: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) values, one per counter; value i depends only on (key, i)."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _splitmix(key + (idx + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class CoefficientLaw:
    """Bounded centered unit-variance law for the u_j."""

    kind: str
    values: tuple[float, ...] = ()
    probs: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("rademacher", "uniform_scaled", "discrete_symmetric"):
            raise ConfigError(f"unknown law {self.kind!r}")
        if self.kind == "discrete_symmetric":
            v = np.asarray(self.values, float)
            p = np.asarray(self.probs, float)
            if v.shape != p.shape or v.size == 0 or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise ConfigError("discrete law needs matching values/probs summing to 1")
            if abs(v @ p) > 1e-12 or abs(v**2 @ p - 1) > 1e-12:
                raise ConfigError("discrete law must have mean 0 and variance 1")

    @property
    def bound(self) -> float:
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform_scaled":
            return float(np.sqrt(3.0))
        return float(np.max(np.abs(self.values)))

    def transform(self, uniforms: np.ndarray) -> np.ndarray:
        if self.kind == "rademacher":
            return np.where(uniforms < 0.5, -1.0, 1.0)
        if self.kind == "uniform_scaled":
            return np.sqrt(3.0) * (2.0 * uniforms - 1.0)
        cdf = np.cumsum(self.probs)
        k = np.minimum(np.searchsorted(cdf, uniforms, side="right"), len(cdf) - 1)
        return np.asarray(self.values, float)[k]

    def __str__(self):
        if self.kind == "discrete_symmetric":
            return f"discrete_symmetric({list(self.values)},{list(self.probs)})"
        return self.kind


def parse_law(text: str) -> CoefficientLaw:
    text = text.strip()
    if text.startswith("discrete_symmetric"):
        body = text[len("discrete_symmetric"):].strip("() ")
        try:
            vals, probs = body.split("],")
            values = tuple(float(v) for v in vals.strip("[ ").split(",") if v.strip())
            probs_t = tuple(float(v) for v in probs.strip("[] ").split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"cannot parse law {text!r}") from None
        return CoefficientLaw("discrete_symmetric", values, probs_t)
    return CoefficientLaw(text)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Values u_j on the multi-index cube [-N, N]^d."""

    d: int
    N: int
    values: np.ndarray
    seed: int | None = None
    law: CoefficientLaw | None = None
    pattern: str | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.values.shape != (2 * self.N + 1,) * self.d:
            raise ConfigError("coefficient array has the wrong shape")
        self.values.setflags(write=False)

    def __getitem__(self, j) -> float:
        j = (j,) if np.isscalar(j) else tuple(j)
        return float(self.values[tuple(k + self.N for k in j)])

    @property
    def bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    def scaled(self, c: float) -> "CoefficientField":
        return CoefficientField(self.d, self.N, c * self.values, pattern="scaled")

    def __add__(self, other: "CoefficientField") -> "CoefficientField":
        return CoefficientField(self.d, self.N, self.values + other.values, pattern="sum")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"j{k + 1}" for k in range(self.d)] + ["u"])
        for idx in itertools.product(range(-self.N, self.N + 1), repeat=self.d):
            w.writerow(list(idx) + [repr(self[idx])])
        return buf.getvalue()


def sample_coefficients(law: CoefficientLaw, N: int, d: int = 1, seed: int = 0) -> CoefficientField:
    """i.i.d. field from a counter-based generator keyed by (seed, N, d, flattened index)."""
    if d not in (1, 3):
        raise ConfigError("d must be 1 or 3")
    if N < 1:
        raise ConfigError("N must be at least 1")
    key = stream_key(seed, N, d)
    flat = np.arange((2 * N + 1) ** d, dtype=np.uint64)
    vals = law.transform(counter_uniforms(key, flat)).reshape((2 * N + 1,) * d)
    return CoefficientField(d, N, vals, seed=seed, law=law)


def deterministic_coefficients(pattern: str, N: int, d: int = 1) -> CoefficientField:
    """``alternating``: (-1)^(j1+...+jd); ``all_ones``: 1."""
    grids = np.meshgrid(*([np.arange(-N, N + 1)] * d), indexing="ij")
    if pattern == "alternating":
        vals = np.where(sum(grids) % 2 == 0, 1.0, -1.0)
    elif pattern == "all_ones":
        vals = np.ones((2 * N + 1,) * d)
    else:
        raise ConfigError(f"unknown pattern {pattern!r}")
    return CoefficientField(d, N, vals, pattern=pattern)


@dataclass(frozen=True, eq=False)
class RandomPotential:
    """V_N(x) = q0(x) + sum_j u_j q(N x - j). For d=3, q is read as a radial profile."""

    q0: Profile
    q: Profile
    coeffs: CoefficientField
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.coeffs.N

    @property
    def d(self) -> int:
        return self.coeffs.d

    @property
    def is_real(self) -> bool:
        return self.q0.is_real and self.q.is_real

    @property
    def oscillating_support(self) -> tuple[float, float]:
        a, b = self.q.support
        N = self.N
        return ((-N + a) / N, (N + b) / N)

    @property
    def support(self) -> tuple[float, float]:
        """Interval containing supp(V) (d=1)."""
        lo, hi = self.oscillating_support
        if not self.q0.is_zero:
            lo, hi = min(lo, self.q0.support[0]), max(hi, self.q0.support[1])
        return lo, hi

    @property
    def feature(self) -> float:
        return min(self.q.feature / self.N, self.q0.feature)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        N = self.N
        js = np.arange(-N, N + 1)
        pts = {float(v) for b in self.q.breakpoints for v in (js + b) / N}
        pts.update(self.q0.breakpoints)
        return tuple(sorted(pts))

    def sup_bound(self) -> float:
        """|q0|_inf + overlap * |q|_inf * max|u| (pointwise bound)."""
        a, b = self.q.support
        overlap = (int(np.floor(b - a)) + 1) ** self.d
        return self.q0.sup_norm() + overlap * self.q.sup_norm() * self.coeffs.bound

    def oscillating_part(self) -> "RandomPotential":
        return RandomPotential(zero(), self.q, self.coeffs)

    def with_coeffs(self, coeffs: CoefficientField) -> "RandomPotential":
        return RandomPotential(self.q0, self.q, coeffs)

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def evaluate(V: RandomPotential, x) -> np.ndarray:
    """Exact q0(x) + sum over the O(1) indices j with N x - j in supp(q)."""
    if V.d == 3:
        return _evaluate_radial(V, x)
    x = np.asarray(x, dtype=float)
    N = V.N
    a, b = V.q.support
    y = N * x
    jlo = np.ceil(y - b).astype(np.int64)
    out = V.q0(x).astype(complex if not V.is_real else float)
    u = V.coeffs.values
    for off in range(int(np.floor(b - a)) + 1):
        j = jlo + off
        ok = (j >= -N) & (j <= N) & (y - j >= a)
        if not np.any(ok):
            continue
        jj = np.where(ok, j, 0)
        out = out + np.where(ok, u[jj + N] * V.q(np.where(ok, y - jj, 0.0)), 0.0)
    return out


def _evaluate_radial(V: RandomPotential, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    N = V.N
    reach = max(abs(e) for e in V.q.support)
    y = N * x
    base = np.floor(y).astype(np.int64)
    out = np.zeros(x.shape[:-1], dtype=complex if not V.is_real else float)
    r = int(np.ceil(reach))
    for off in itertools.product(range(-r, r + 2), repeat=3):
        j = base + np.array(off)
        ok = np.all((j >= -N) & (j <= N), axis=-1)
        dist = np.linalg.norm(y - j, axis=-1)
        ok &= dist < reach
        if not np.any(ok):
            continue
        jj = np.where(ok[..., None], j, 0) + N
        uj = V.coeffs.values[jj[..., 0], jj[..., 1], jj[..., 2]]
        out = out + np.where(ok, uj * V.q(np.where(ok, dist, 0.0)), 0.0)
    return out


def weak_pairing(V: RandomPotential, phi) -> complex:
    """Integral of V_#(x) phi(x) by per-bump substitution (d=1)."""
    if V.d != 1:
        raise ConfigError("weak_pairing needs d=1")
    N = V.N
    x, w = V.q.rule
    wq = w * V.q(x)
    j = np.arange(-N, N + 1)
    vals = phi((x[None, :] + j[:, None]) / N)
    return complex(V.coeffs.values @ (vals @ wq) / N)


def potential_grid_csv(V, x) -> str:
    vals = np.asarray(V(np.asarray(x, float)), dtype=complex)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "ReV", "ImV"])
    for xi, vi in zip(np.asarray(x, float), vals):
        w.writerow([repr(float(xi)), repr(float(vi.real)), repr(float(vi.imag))])
    return buf.getvalue()
