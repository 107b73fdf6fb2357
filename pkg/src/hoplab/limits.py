"""Closed-form limit objects: covariance matrices, the interference constant L,
limiting variances, the case trichotomy and the effective potential."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from ._quad import composite_rule, panel_edges
from .errors import ConfigError
from .profiles import Profile, antiderivative, box, gamma_exponent, make_bump, vanishing_order, zero
from .resonances import ResonantPair
from .sobolev import _graded_edges, fourier_cutoff, fourier_values, radial_fourier

_TAYLOR_RADIUS = 1e-2
_CLASSIFIER_GRID = 64
_CLASSIFIER_TOL = 1e-8
VEFF_WIDTH = 0.025


@dataclass(frozen=True, eq=False)
class CovMatrix2:
    """Real symmetric 2x2 covariance of (Re phi, Im phi)."""

    entries: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.entries))

    @property
    def degenerate(self) -> bool:
        return self.det < 1e-10 * self.trace**2

    @property
    def direction(self) -> np.ndarray:
        """Unit vector v with (Re phi, Im phi) proportional to v (meaningful when degenerate)."""
        vals, vecs = np.linalg.eigh(self.entries)
        v = vecs[:, -1]
        return v if v[np.argmax(np.abs(v))] > 0 else -v

    @property
    def alpha(self) -> float:
        """alpha with Re phi = alpha * Im phi; inf when Im phi vanishes."""
        v = self.direction
        return float(v[0] / v[1]) if abs(v[1]) > 1e-14 else float("inf")

    def to_json(self) -> list[list[float]]:
        return self.entries.tolist()


def _cube_rule(d: int, panels: int = 8, nodes: int = 16) -> tuple[np.ndarray, np.ndarray]:
    x, w = composite_rule(np.linspace(-1.0, 1.0, panels + 1), nodes)
    if d == 1:
        return x, w
    if d == 3:
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
        ww = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        return g, ww
    raise ConfigError("d must be 1 or 3")


def cube_integral(func, d: int = 1) -> complex:
    """Integral of func over [-1, 1]^d; func takes (n,) points for d=1 and (n, 3) for d=3."""
    if d == 3:
        x, w = _cube_rule(3, panels=4, nodes=12)
    else:
        x, w = _cube_rule(d)
    return complex(np.sum(w * np.asarray(func(x))))


def sigma_matrix(phi, d: int = 1) -> CovMatrix2:
    """Integral over [-1,1]^d of [[Re^2, Re Im], [Re Im, Im^2]] of phi."""
    x, w = _cube_rule(d, panels=4, nodes=12) if d == 3 else _cube_rule(d)
    v = np.asarray(phi(x), dtype=complex)
    a, b = v.real, v.imag
    m = np.array([[w @ (a * a), w @ (a * b)], [w @ (a * b), w @ (b * b)]])
    return CovMatrix2(m)


def _fg_function(pair, d: int):
    if d == 1:
        if not isinstance(pair, ResonantPair):
            raise ConfigError("d=1 needs a ResonantPair")
        return pair.fg
    if isinstance(pair, ResonantPair):
        raise ConfigError("resonant pairs are one-dimensional; pass fg as a constant or callable for d=3")
    if callable(pair):
        return pair
    value = complex(pair)
    return lambda x: np.full(len(x), value)


def _interference_integral_1d(q: Profile, conjugate: bool) -> complex:
    """(1/2pi) integral of q_hat(xi) q_hat(-xi) / xi^2 (or |q_hat|^2 / xi^2)."""
    top = fourier_cutoff(q, 1, 1.0, floor=1e-15)
    edges = _graded_edges(_TAYLOR_RADIUS, top, np.pi / (2 * max(abs(e) for e in q.support)))
    xi, w = composite_rule(edges[edges >= _TAYLOR_RADIUS], 16)
    plus = fourier_values(q, xi)
    minus = fourier_values(q, -xi)
    if conjugate:
        vals = (np.abs(plus) ** 2 + np.abs(minus) ** 2) / xi**2
    else:
        vals = 2 * plus * minus / xi**2
    total = np.sum(w * vals)
    # [-r, r]: Taylor series of q_hat from the cached moments
    t, tw = composite_rule(np.array([-_TAYLOR_RADIUS, 0.0, _TAYLOR_RADIUS]), 16)
    mom = np.asarray(q.moments)
    k = np.arange(len(mom))
    fact = np.cumprod(np.concatenate([[1.0], k[1:]]))

    def taylor(z):
        return np.sum(mom[None, :] * (-1j * z[:, None]) ** k / fact, axis=1)

    tp, tm = taylor(t), taylor(-t)
    inner = np.abs(tp) ** 2 / t**2 if conjugate else tp * tm / t**2
    total += np.sum(tw * inner)
    return complex(total / (2 * np.pi))


def _interference_integral_3d(rho: Profile) -> complex:
    """(2pi)^{-3} integral over R^3 of q_hat^2 / |xi|^2 for the radial q(x) = rho(|x|)."""
    top = fourier_cutoff(rho, 1, 1.0, floor=1e-15, radial=True)
    edges = _graded_edges(0.25, top, np.pi / (2 * max(abs(e) for e in rho.support)))
    k, w = composite_rule(edges, 16)
    vals = radial_fourier(rho, k) ** 2  # |xi|^2 cancels against the shell area
    return complex(4 * np.pi * np.sum(w * vals) / (2 * np.pi) ** 3)


def interference_integral(q: Profile, d: int = 1, conjugate: bool = False) -> complex:
    if d == 1:
        if vanishing_order(q) == 0:
            raise ConfigError("the integral of q_hat(xi) q_hat(-xi) / xi^2 diverges when q has nonzero mean in d=1")
        return _interference_integral_1d(q, conjugate)
    if d == 3:
        return _interference_integral_3d(q)
    raise ConfigError("d must be 1 or 3")


def constant_L(q: Profile, pair, d: int = 1) -> complex:
    """(2pi)^{-d} integral of q_hat(xi) q_hat(-xi)/|xi|^2 times the integral of fg over [-1,1]^d."""
    return interference_integral(q, d) * cube_integral(_fg_function(pair, d), d)


def antiderivative_energy(q: Profile) -> complex:
    """Integral of Q^2 for the compactly supported antiderivative Q of q."""
    Q = antiderivative(q)
    x, w = Q.rule
    return complex(np.sum(w * Q(x) ** 2))


def _check_axis(pair) -> None:
    if not isinstance(pair, ResonantPair) or not (pair.free or pair.axis_type):
        raise ConfigError("limit variances need a real background and a resonance on the imaginary axis")


def sigma2_corollary(case: str, pair, d: int = 1, q: Profile | None = None) -> complex:
    """Limiting variance (Cases I, II) or the almost-sure limit of N^2 shifts (Case III)."""
    if d != 1:
        raise ConfigError("limit variances are built for d=1 resonant pairs")
    _check_axis(pair)
    f = pair.f
    if case == "I":
        return complex(cube_integral(lambda x: np.abs(f(x)) ** 4, 1).real)
    if case == "II":
        def deriv_sq(x):
            fx = f(x)
            return (2 * np.real(np.conj(fx) * f(x, 1))) ** 2
        return complex(cube_integral(deriv_sq, 1).real)
    if case == "III":
        if q is None:
            raise ConfigError("case III needs q")
        mass = cube_integral(lambda x: np.abs(f(x)) ** 2, 1).real
        return 1j * interference_integral(q, 1, conjugate=True).real * mass
    raise ConfigError(f"unknown case {case!r}")


def _radial_mass(rho: Profile) -> float:
    a, b = rho.support
    t, w = composite_rule(panel_edges((max(a, 0.0), b), rho.feature / 8), 24)
    return float(4 * np.pi * np.sum(w * np.real(rho(t)) * t**2))


def case_classifier(d: int, q: Profile, pair=None) -> str:
    """'I', 'II' or 'III' by the moment and (fg)' tests."""
    if d == 3:
        scale = 4 * np.pi * q.abs_integral()
        return "I" if abs(_radial_mass(q)) > 1e-10 * scale else "III"
    if d != 1:
        raise ConfigError("d must be 1 or 3")
    m = vanishing_order(q)
    if m == 0:
        return "I"
    if m == 1 and pair is not None:
        x = np.linspace(-1.0, 1.0, _CLASSIFIER_GRID)
        scale = max(float(np.max(np.abs(pair.fg(x)))), 1e-300)
        if np.max(np.abs(pair.dfg(x))) > _CLASSIFIER_TOL * scale:
            return "II"
    return "III"


@dataclass(frozen=True, eq=False)
class EffectivePotential:
    """q0 plus a constant on [-1,1]^d; the constant is of order N^-2."""

    q0: Profile
    constant: complex
    d: int
    N: int

    def profile(self, width: float = VEFF_WIDTH) -> Profile:
        """Smoothed realization for the one-dimensional resonance solver."""
        if self.d != 1:
            raise ConfigError("only d=1 effective potentials can be realized")
        step = box(-1.0, 1.0, width)
        terms = [(self.constant, step)]
        if not self.q0.is_zero:
            terms.insert(0, (1.0, self.q0))
        return make_bump("lincomb", terms)

    def to_json(self) -> dict:
        return {"constant": [self.constant.real, self.constant.imag], "d": self.d, "N": self.N}


def effective_potential(q0: Profile, q: Profile, N: int, d: int = 1) -> EffectivePotential:
    """q0 - (2pi)^{-d} N^{-2} integral q_hat(xi) q_hat(-xi)/|xi|^2 * 1_[-1,1]^d.

    The sign makes the first-order shift -i <W f, conj g> of a simple
    resonance equal the almost-sure N^-2 limit i * L / N^2 of the random model.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    m = vanishing_order(q) if d == 1 else (0 if case_classifier(3, q) == "I" else 1)
    if d / 2 + m < 2:
        warnings.warn("d/2 + m < 2: the N^-2 interference term is not the leading correction", stacklevel=2)
    return EffectivePotential(q0, -interference_integral(q, d) / N**2, d, N)


def constants_report(q: Profile, pair, d: int = 1, N: int | None = None) -> dict:
    """JSON-ready summary of the limit objects for (q, pair)."""
    case = case_classifier(d, q, pair if d == 1 else None)
    if d == 1:
        m = vanishing_order(q)
        fg = pair.fg
    else:
        m = 0 if case == "I" else 1
        fg = _fg_function(pair, d)
    out = {"case": case, "gamma": str(gamma_exponent(d, m)), "Sigma": sigma_matrix(fg, d).to_json()}
    if d == 3 or m >= 1:
        L = constant_L(q, pair, d)
        out["L"] = [L.real, L.imag]
    if d == 1 and (pair.free or pair.axis_type):
        s2 = sigma2_corollary(case, pair, 1, q)
        out["sigma2"] = [s2.real, s2.imag]
    if N is not None and (d == 3 or m >= 1):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = effective_potential(zero(), q, N, d).constant
        out["V_eff_constant"] = [c.real, c.imag]
    return out


def constants_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True)
