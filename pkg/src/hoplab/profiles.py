"""Smooth compactly supported building blocks.

Every profile is an expression tree over the standard bump
``psi(x) = exp(-1/(1 - x**2))`` on ``(-1, 1)``: its derivatives, affine
rescalings, finite linear combinations, a smoothed indicator and, when no
closed form exists, a cumulative-quadrature antiderivative.

Text grammar (used by the CLI)::

    expr := psi | zero | d1(expr) | d2(expr)
          | affine(expr, shift, scale)      # x -> expr((x - shift) / scale)
          | lincomb(c1*expr + c2*expr ...)  # complex literals allowed
          | normalized(expr)                # expr / integral(expr)
          | box(a, b, width)                # smoothed indicator of [a, b]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from ._quad import composite_rule, gauss_legendre, panel_edges
from .errors import ConfigError, NumericalError

MOMENT_ORDERS = 9  # moments k = 0..8 are cached at construction
_QUAD_NODES = 32
_QUAD_PANELS_PER_UNIT = 8


class DegenerateProfile(NumericalError):
    """Raised when a profile is identically zero where a nonzero one is required."""


@lru_cache(maxsize=None)
def _psi_numerators(order: int) -> tuple[np.polynomial.Polynomial, ...]:
    # psi^(k) = psi * p_k / w^k with w = (1 - x^2)^2,
    # p_{k+1} = p_k' w - k p_k w' - 2 x p_k.
    P = np.polynomial.Polynomial
    w = P([1.0, 0.0, -2.0, 0.0, 1.0])
    dw = w.deriv()
    x = P([0.0, 1.0])
    polys = [P([1.0])]
    for k in range(order):
        p = polys[-1]
        polys.append(p.deriv() * w - k * p * dw - 2 * x * p)
    return tuple(polys)


def psi_derivative(x, order: int = 0) -> np.ndarray:
    """Closed-form k-th derivative of the standard bump."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    xi = x[inside]
    one_minus = 1.0 - xi * xi
    log_env = -1.0 / one_minus
    if order:
        log_env = log_env - 2.0 * order * np.log(one_minus)
    out[inside] = _psi_numerators(order)[order](xi) * np.exp(log_env)
    return out


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step rising from 0 at t=-1/2 to 1 at t=1/2, with S(t)+S(-t)=1."""
    out = np.where(t >= 0.5, 1.0, 0.0)
    mid = np.abs(t) < 0.5
    tm = t[mid]
    with np.errstate(over="ignore"):
        out[mid] = 1.0 / (1.0 + np.exp(1.0 / (0.5 + tm) - 1.0 / (0.5 - tm)))
    return out


# Expression nodes. Each node knows its support, breakpoints (where its
# pieces start or stop being smooth) and a characteristic feature length.

class _Node:
    is_complex = False

    def __call__(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def derivative(self) -> "_Node":
        raise ConfigError(f"no closed-form derivative for {self}")


@dataclass(frozen=True)
class _Zero(_Node):
    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    support = (0.0, 0.0)
    breaks = ()
    feature = np.inf

    def derivative(self):
        return self

    def __str__(self):
        return "zero"


@dataclass(frozen=True)
class _Psi(_Node):
    order: int = 0

    def __call__(self, x):
        return psi_derivative(x, self.order)

    support = (-1.0, 1.0)
    breaks = (-1.0, 1.0)
    feature = 1.0

    def derivative(self):
        return _Psi(self.order + 1)

    def __str__(self):
        s = "psi"
        for _ in range(self.order):
            s = f"d1({s})"
        return s


@dataclass(frozen=True)
class _Affine(_Node):
    child: _Node
    shift: float
    scale: float

    def __post_init__(self):
        if self.scale == 0:
            raise ConfigError("affine scale must be nonzero")

    def __call__(self, x):
        return self.child((np.asarray(x, dtype=float) - self.shift) / self.scale)

    @property
    def is_complex(self):
        return self.child.is_complex

    @property
    def support(self):
        a, b = (self.shift + self.scale * e for e in self.child.support)
        return (min(a, b), max(a, b))

    @property
    def breaks(self):
        return tuple(sorted(self.shift + self.scale * e for e in self.child.breaks))

    @property
    def feature(self):
        return abs(self.scale) * self.child.feature

    def derivative(self):
        return _LinComb(((1.0 / self.scale, _Affine(self.child.derivative(), self.shift, self.scale)),))

    def __str__(self):
        return f"affine({self.child}, {self.shift!r}, {self.scale!r})"


@dataclass(frozen=True)
class _LinComb(_Node):
    terms: tuple[tuple[complex, _Node], ...]

    def __post_init__(self):
        if not self.terms:
            raise ConfigError("lincomb needs at least one term")

    def __call__(self, x):
        out = None
        for c, node in self.terms:
            val = c * node(x)
            out = val if out is None else out + val
        if not self.is_complex:
            out = np.real(out)
        return out

    @property
    def is_complex(self):
        return any(complex(c).imag != 0 or n.is_complex for c, n in self.terms)

    @property
    def support(self):
        sups = [n.support for _, n in self.terms if not isinstance(n, _Zero)]
        if not sups:
            return (0.0, 0.0)
        return (min(s[0] for s in sups), max(s[1] for s in sups))

    @property
    def breaks(self):
        return tuple(sorted({b for _, n in self.terms for b in n.breaks}))

    @property
    def feature(self):
        return min(n.feature for _, n in self.terms)

    def derivative(self):
        return _LinComb(tuple((c, n.derivative()) for c, n in self.terms))

    def __str__(self):
        parts = [f"{_fmt_coef(c)}*{n}" for c, n in self.terms]
        return "lincomb(" + " + ".join(parts) + ")"


@dataclass(frozen=True)
class _Box(_Node):
    a: float
    b: float
    width: float

    def __post_init__(self):
        if not (self.width > 0 and self.b - self.a > self.width):
            raise ConfigError("box needs width > 0 and b - a > width")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _smooth_step((x - self.a) / self.width) * _smooth_step((self.b - x) / self.width)

    @property
    def support(self):
        return (self.a - self.width / 2, self.b + self.width / 2)

    @property
    def breaks(self):
        h = self.width / 2
        return (self.a - h, self.a + h, self.b - h, self.b + h)

    @property
    def feature(self):
        return self.width

    def __str__(self):
        return f"box({self.a!r}, {self.b!r}, {self.width!r})"


class _Cumulative(_Node):
    """Antiderivative of a mean-zero node by panelwise quadrature."""

    def __init__(self, child: _Node):
        self.child = child
        a, b = child.support
        self.edges = panel_edges(child.breaks + (a, b), child.feature / _QUAD_PANELS_PER_UNIT)
        x, w = composite_rule(self.edges, _QUAD_NODES)
        per_panel = (w * child(x)).reshape(len(self.edges) - 1, _QUAD_NODES).sum(axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(per_panel)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        a, b = self.child.support
        inside = (flat > a) & (flat < b)
        xi = flat[inside]
        k = np.clip(np.searchsorted(self.edges, xi, side="right") - 1, 0, len(self.edges) - 2)
        left = self.edges[k]
        t, w = gauss_legendre(_QUAD_NODES)
        half = 0.5 * (xi - left)
        nodes = left[:, None] + half[:, None] * (t + 1.0)
        partial = (self.child(nodes) * w).sum(axis=1) * half
        dtype = complex if self.is_complex else float
        out = np.zeros(flat.shape, dtype=dtype)
        out[inside] = self.cum[k] + partial
        return out.reshape(x.shape)

    @property
    def is_complex(self):
        return self.child.is_complex

    support = property(lambda self: self.child.support)
    breaks = property(lambda self: self.child.breaks)
    feature = property(lambda self: self.child.feature)

    def derivative(self):
        return self.child

    def __str__(self):
        return f"antiderivative({self.child})"

    def __eq__(self, other):
        return isinstance(other, _Cumulative) and other.child == self.child

    def __hash__(self):
        return hash(("cum", self.child))


def _fmt_coef(c: complex) -> str:
    c = complex(c)
    if c.imag == 0:
        return repr(c.real)
    return f"({c.real!r}{c.imag:+}j)"


@dataclass(frozen=True, eq=False)
class Profile:
    """Immutable smooth compactly supported function with cached moments."""

    node: _Node
    moments: tuple[complex, ...] = field(init=False)

    def __post_init__(self):
        x, w = self.rule
        vals = w * self.node(x)
        object.__setattr__(
            self, "moments", tuple(complex(np.sum(vals * x**k)) for k in range(MOMENT_ORDERS))
        )

    def __call__(self, x) -> np.ndarray:
        return self.node(x)

    def __str__(self):
        return str(self.node)

    def __repr__(self):
        return f"Profile({self.node})"

    def __eq__(self, other):
        return isinstance(other, Profile) and str(other) == str(self)

    def __hash__(self):
        return hash(str(self))

    @property
    def support(self) -> tuple[float, float]:
        return self.node.support

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.node.breaks

    @property
    def feature(self) -> float:
        """Length scale on which the profile varies."""
        return self.node.feature

    @property
    def is_zero(self) -> bool:
        return isinstance(self.node, _Zero)

    @property
    def is_real(self) -> bool:
        return not self.node.is_complex

    @cached_property
    def rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Composite Gauss-Legendre rule on the support, accurate to ~1e-14 for psi-type pieces."""
        if self.is_zero:
            return np.zeros(1), np.zeros(1)
        a, b = self.support
        edges = panel_edges(self.breakpoints + (a, b), self.feature / _QUAD_PANELS_PER_UNIT)
        return composite_rule(edges, _QUAD_NODES)

    def integral(self) -> complex:
        return self.moments[0]

    def abs_integral(self) -> float:
        x, w = self.rule
        return float(np.sum(w * np.abs(self.node(x))))

    def sup_norm(self) -> float:
        x, _ = self.rule
        return float(np.max(np.abs(self.node(x)), initial=0.0))

    def derivative(self) -> "Profile":
        return Profile(self.node.derivative())

    def scaled(self, c: complex) -> "Profile":
        return Profile(_LinComb(((c, self.node),)))


# Construction helpers

def psi() -> Profile:
    return Profile(_Psi(0))


def zero() -> Profile:
    return Profile(_Zero())


def make_bump(kind: str, *args) -> Profile:
    """Build one of the standard profiles.

    ``kind`` is ``psi``, ``psi_prime``, ``psi_second``, ``affine`` (args:
    profile, shift, scale) or ``lincomb`` (args: sequence of (coef, profile)).
    """
    if kind == "psi":
        return Profile(_Psi(0))
    if kind == "psi_prime":
        return Profile(_Psi(1))
    if kind == "psi_second":
        return Profile(_Psi(2))
    if kind == "affine":
        p, shift, scale = args
        return Profile(_Affine(p.node, float(shift), float(scale)))
    if kind == "lincomb":
        (terms,) = args
        terms = tuple((complex(c) if complex(c).imag else float(np.real(c)), p.node) for c, p in terms)
        return Profile(_LinComb(terms))
    raise ConfigError(f"unknown bump kind {kind!r}")


def box(a: float, b: float, width: float) -> Profile:
    return Profile(_Box(float(a), float(b), float(width)))


def normalized(p: Profile) -> Profile:
    """Rescale to unit integral."""
    m = p.integral()
    if abs(m) < 1e-14:
        raise DegenerateProfile("cannot normalize a mean-zero profile")
    c = 1.0 / m
    return p.scaled(c.real if c.imag == 0 else c)


def fourier(p: Profile, xi) -> np.ndarray:
    """q_hat(xi) = integral of exp(-i xi x) p(x) dx, vectorized over xi.

    Frequencies are grouped in doubling bands; each band uses panels no wider
    than one period of its fastest frequency (24 nodes per period keeps the
    rule at rounding level).
    """
    xi = np.asarray(xi, dtype=float)
    if p.is_zero:
        return np.zeros(xi.shape, dtype=complex)
    a, b = p.support
    base = p.feature / _QUAD_PANELS_PER_UNIT
    flat = xi.ravel()
    out = np.empty(flat.shape, dtype=complex)
    mag = np.abs(flat)
    band_top = 2 * np.pi / base
    band = np.zeros(flat.shape, dtype=np.int64)
    over = mag > band_top
    band[over] = np.ceil(np.log2(mag[over] / band_top) - 1e-12).astype(np.int64)
    for k in np.unique(band):
        sel = np.nonzero(band == k)[0]
        width = min(base, 2 * np.pi / (band_top * 2.0**k))
        x, w = composite_rule(panel_edges(p.breakpoints + (a, b), width), 24)
        vals = w * p(x)
        chunk = max(1, 2_000_000 // len(x))
        for s in range(0, len(sel), chunk):
            idx = sel[s:s + chunk]
            out[idx] = np.exp(-1j * np.outer(flat[idx], x)) @ vals
    return out.reshape(xi.shape)


@dataclass(frozen=True)
class MomentSummary:
    integral: complex
    first_moment: complex
    vanishing_order: int
    gamma: Fraction


def vanishing_order(p: Profile, tol: float = 1e-10) -> int:
    """Smallest k with |moment k| > tol * integral of |p|; capped at 8."""
    scale = p.abs_integral() if not p.is_zero else 0.0
    if scale <= tol:
        raise DegenerateProfile("profile is identically zero")
    for k, mk in enumerate(p.moments):
        if abs(mk) > tol * scale:
            return k
    raise NumericalError("vanishing order exceeds 8")


def gamma_exponent(d: int, m: int) -> Fraction:
    """Exact min(7/4, d/2 + m) for odd d."""
    if d < 1 or d % 2 == 0:
        raise ConfigError(f"dimension must be odd and positive, got {d}")
    if m < 0:
        raise ConfigError("vanishing order must be nonnegative")
    return min(Fraction(7, 4), Fraction(d, 2) + m)


def moment_summary(p: Profile, d: int = 1, tol: float = 1e-10) -> MomentSummary:
    m = vanishing_order(p, tol)
    return MomentSummary(p.moments[0], p.moments[1], m, gamma_exponent(d, m))


def _antiderivative_node(node: _Node) -> _Node | None:
    if isinstance(node, _Psi) and node.order > 0:
        return _Psi(node.order - 1)
    if isinstance(node, _Zero):
        return node
    if isinstance(node, _Affine):
        inner = _antiderivative_node(node.child)
        if inner is None:
            return None
        return _LinComb(((node.scale, _Affine(inner, node.shift, node.scale)),))
    if isinstance(node, _LinComb):
        parts = [(c, _antiderivative_node(n)) for c, n in node.terms]
        if any(n is None for _, n in parts):
            return None
        return _LinComb(tuple(parts))
    if isinstance(node, _Cumulative):
        return None
    return None


def antiderivative(p: Profile, tol: float = 1e-10) -> Profile:
    """Compactly supported Q with Q' = p; exact for derivative expressions."""
    scale = p.abs_integral()
    if abs(p.integral()) > tol * max(scale, 1e-300):
        raise ConfigError("profile has nonzero mean: no compactly supported antiderivative")
    node = _antiderivative_node(p.node)
    return Profile(node if node is not None else _Cumulative(p.node))


# Parser for the text grammar

_TOKEN = re.compile(r"\s*([A-Za-z_][A-Za-z_0-9]*|[(),*+\-]|[0-9.]+(?:[eE][+-]?[0-9]+)?j?)")


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ConfigError(f"cannot parse profile near {text[pos:]!r}")
        out.append(m.group(1))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expect=None):
        tok = self.peek()
        if tok is None or (expect is not None and tok != expect):
            raise ConfigError(f"expected {expect or 'token'}, got {tok!r}")
        self.i += 1
        return tok

    def number(self) -> complex:
        sign = 1.0
        while self.peek() in ("+", "-"):
            if self.take() == "-":
                sign = -sign
        if self.peek() == "(":
            self.take("(")
            val = self.number()
            while self.peek() in ("+", "-"):
                op = self.take()
                rhs = self.number()
                val = val + rhs if op == "+" else val - rhs
            self.take(")")
            return sign * val
        tok = self.take()
        try:
            val = complex(tok) if tok.endswith("j") else float(tok)
        except ValueError:
            raise ConfigError(f"bad number {tok!r}") from None
        return sign * val

    def expr(self) -> _Node:
        name = self.take()
        if name == "psi":
            return _Psi(0)
        if name == "psi_prime":
            return _Psi(1)
        if name == "psi_second":
            return _Psi(2)
        if name == "zero":
            return _Zero()
        self.take("(")
        if name in ("d1", "d2"):
            node = self.expr()
            for _ in range(int(name[1])):
                node = node.derivative()
        elif name == "affine":
            child = self.expr()
            self.take(",")
            shift = self.number()
            self.take(",")
            scale = self.number()
            node = _Affine(child, float(np.real(shift)), float(np.real(scale)))
        elif name == "box":
            a = self.number()
            self.take(",")
            b = self.number()
            self.take(",")
            w = self.number()
            node = _Box(float(np.real(a)), float(np.real(b)), float(np.real(w)))
        elif name == "normalized":
            node = normalized(Profile(self.expr())).node
        elif name == "lincomb":
            terms = []
            sign = 1.0
            while True:
                while self.peek() in ("+", "-"):
                    if self.take() == "-":
                        sign = -sign
                tok = self.peek()
                if tok is not None and (tok[0].isdigit() or tok[0] == "." or tok == "("):
                    coef = self.number()
                    self.take("*")
                else:
                    coef = 1.0
                c = sign * coef
                c = complex(c) if complex(c).imag else float(np.real(c))
                terms.append((c, self.expr()))
                sign = 1.0
                if self.peek() in ("+", "-"):
                    continue
                break
            node = _LinComb(tuple(terms))
        else:
            raise ConfigError(f"unknown profile constructor {name!r}")
        self.take(")")
        return node


def parse_profile(text: str) -> Profile:
    """Parse the profile text grammar."""
    parser = _Parser(text)
    node = parser.expr()
    if parser.peek() is not None:
        raise ConfigError(f"trailing input in profile: {text!r}")
    return Profile(node)


class FourierTable:
    """Piecewise Chebyshev interpolant of q_hat on [-top, top].

    q_hat is entire of exponential type max|x| over the support, so panels of
    width 2 / type with 24 nodes reproduce it to rounding level. Used where
    q_hat is needed on very fine frequency grids.
    """

    NODES = 24

    def __init__(self, p: Profile, top: float):
        a, b = p.support
        reach = max(abs(a), abs(b), 1e-12)
        n_panels = max(1, int(np.ceil(2 * top / (2.0 / reach))))
        self.lo, self.hi = -float(top), float(top)
        self.width = (self.hi - self.lo) / n_panels
        k = np.arange(self.NODES)
        cheb = np.cos(np.pi * (k + 0.5) / self.NODES)  # first-kind nodes on [-1, 1]
        centers = self.lo + self.width * (np.arange(n_panels) + 0.5)
        vals = fourier(p, centers[:, None] + 0.5 * self.width * cheb[None, :])
        vander = np.polynomial.chebyshev.chebvander(cheb, self.NODES - 1)
        self.coef = np.linalg.solve(vander, vals.T).T  # (panels, NODES)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        flat = xi.ravel()
        if flat.size and (flat.min() < self.lo - 1e-9 or flat.max() > self.hi + 1e-9):
            raise ValueError("frequency outside the tabulated range")
        idx = np.clip(((flat - self.lo) / self.width).astype(np.int64), 0, len(self.coef) - 1)
        t = 2.0 * (flat - self.lo - self.width * idx) / self.width - 1.0
        c = self.coef[idx]
        b1 = np.zeros(flat.shape, dtype=complex)
        b2 = np.zeros(flat.shape, dtype=complex)
        for j in range(self.NODES - 1, 0, -1):
            b1, b2 = 2 * t * b1 - b2 + c[:, j], b1
        return (t * b1 - b2 + c[:, 0]).reshape(xi.shape)
