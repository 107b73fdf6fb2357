"""Scattering resonances of compactly supported 1-d potentials.

Resonances are the zeros of the outgoing-matching function

    F(lam) = 1/2 e^{i lam L} (i lam u(L) - u'(L)),

where u solves -u'' + V u = lam^2 u with u = e^{-i lam x} left of the
support. F is entire, equals i*lam for V = 0, and its zeros (with
multiplicity) are the resonances. They are counted by the argument
principle on rectangles, isolated by quadrisection and polished by Newton
steps with a central-difference derivative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.ndimage import maximum_filter1d

from . import _magnus
from .errors import ConfigError, NumericalError

WORK_ABS = 30.0
WORK_IM = 15.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle [re0, re1] x [im0, im1] in the lambda plane."""

    re0: float
    re1: float
    im0: float
    im1: float

    def __post_init__(self):
        if not (self.re1 > self.re0 and self.im1 > self.im0):
            raise ConfigError(f"degenerate box {self}")

    @classmethod
    def parse(cls, text: str) -> "Box":
        try:
            vals = [float(v) for v in text.split(",")]
        except ValueError:
            raise ConfigError(f"bad box {text!r}") from None
        if len(vals) != 4:
            raise ConfigError("box needs re0,re1,im0,im1")
        return cls(*vals)

    @classmethod
    def around(cls, center: complex, half: float) -> "Box":
        return cls(center.real - half, center.real + half, center.imag - half, center.imag + half)

    @property
    def corners(self) -> tuple[complex, complex, complex, complex]:
        return (complex(self.re0, self.im0), complex(self.re1, self.im0),
                complex(self.re1, self.im1), complex(self.re0, self.im1))

    @property
    def size(self) -> float:
        return max(self.re1 - self.re0, self.im1 - self.im0)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))

    def contains(self, lam: complex, margin: float = 0.0) -> bool:
        return (self.re0 - margin <= lam.real <= self.re1 + margin
                and self.im0 - margin <= lam.imag <= self.im1 + margin)

    def as_list(self) -> list[float]:
        return [self.re0, self.re1, self.im0, self.im1]

    def check_working_range(self):
        if max(abs(self.im0), abs(self.im1)) > WORK_IM or max(abs(c) for c in self.corners) > WORK_ABS:
            raise ConfigError(f"box {self.as_list()} leaves the working range |lam|<=30, |Im lam|<=15")


@dataclass(frozen=True)
class Resonance:
    lam: complex
    multiplicity: int
    residual: float
    box: Box

    def to_json(self) -> dict:
        return {"re": self.lam.real, "im": self.lam.imag, "multiplicity": self.multiplicity,
                "residual": self.residual, "box": self.box.as_list()}


@dataclass(frozen=True)
class OutgoingSolution:
    lam: complex
    L: float
    u_at_L: complex
    du_at_L: complex
    steps: int
    est_error: float

    @property
    def defect(self) -> complex:
        e = np.exp(1j * self.lam * self.L)
        return 0.5 * e * (1j * self.lam * self.u_at_L - self.du_at_L)


class OutgoingProblem:
    """The matching function F of a fixed potential, with cached quadrature meshes.

    ``V`` is any callable with ``support`` (an interval) and ``feature`` (the
    length on which it varies), e.g. a Profile or a RandomPotential.
    """

    def __init__(self, V, L: float | None = None, steps_per_feature: int = 40):
        self.V = V
        a, b = V.support
        reach = max(abs(a), abs(b))
        if L is None:
            L = reach if reach > 0 else 1.0
        if reach > L * (1 + 1e-12):
            raise ConfigError(f"support {V.support} exceeds [-L, L] with L={L}")
        self.L = float(L)
        self.feature = float(V.feature)
        self.steps_per_feature = steps_per_feature
        self.is_real = bool(getattr(V, "is_real", True))
        self._meshes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.calls = 0

    def steps_for(self, lam_max: float, refine: int = 1) -> int:
        h = min(self.feature / self.steps_per_feature, self.L / 32)
        if lam_max > 0:
            h = min(h, 0.5 / lam_max)
        n = int(np.ceil(2 * self.L / h))
        n = 64 * int(np.ceil(n / 64))
        return n * refine

    def mesh(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if n not in self._meshes:
            xs = np.linspace(-self.L, self.L, n + 1)
            h = xs[1] - xs[0]
            pts = xs[:-1, None] + h * _magnus.GAUSS3[None, :]
            vg = np.ascontiguousarray(np.asarray(self.V(pts), dtype=np.complex128))
            self._meshes[n] = (xs, vg)
        return self._meshes[n]

    def _run(self, lams: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        xs, vg = self.mesh(n)
        e = np.exp(1j * lams * self.L)
        return _magnus.propagate(xs, vg, lams, e, -1j * lams * e)

    def defect(self, lams, check: bool = False):
        """F at each lam (vectorized). With check=True the step is halved and compared."""
        scalar = np.ndim(lams) == 0
        lams = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
        if lams.size == 0:
            return lams
        if np.any(np.abs(lams.imag) > WORK_IM * (1 + 1e-9)) or np.any(np.abs(lams) > WORK_ABS * (1 + 1e-9)):
            raise ConfigError("lambda outside the working range |lam|<=30, |Im lam|<=15")
        self.calls += lams.size
        n = self.steps_for(float(np.max(np.abs(lams))))
        u, du = self._run(lams, n)
        e = np.exp(1j * lams * self.L)
        F = 0.5 * e * (1j * lams * u - du)
        if check:
            u2, du2 = self._run(lams, 2 * n)
            F2 = 0.5 * e * (1j * lams * u2 - du2)
            err = np.abs(F - F2)
            scale = np.abs(F2) + np.abs(lams) + 1.0
            if np.any(err > 1e-8 * scale):
                raise NumericalError(f"integrator error estimate {err.max():.2e} above tolerance")
            F = F2
        return F[0] if scalar else F

    def solve(self, lam: complex) -> OutgoingSolution:
        lam = complex(lam)
        n = self.steps_for(abs(lam))
        lams = np.array([lam])
        u1, du1 = self._run(lams, n)
        u2, du2 = self._run(lams, 2 * n)
        err = float(abs(u1[0] - u2[0]) + abs(du1[0] - du2[0]))
        return OutgoingSolution(lam, self.L, complex(u2[0]), complex(du2[0]), 2 * n, err)

    def path(self, lam: complex, side: str = "left", refine: int = 2):
        """Nodes and (u, u') of the solution outgoing to the given side."""
        lam = complex(lam)
        n = self.steps_for(abs(lam), refine)
        xs, vg = self.mesh(n)
        if side == "left":
            e = np.exp(1j * lam * self.L)
            u, du = _magnus.propagate_path(xs, vg, lam, e, -1j * lam * e)
            return xs, u, du
        e = np.exp(1j * lam * self.L)
        u, du = _magnus.propagate_path(xs[::-1].copy(), vg[::-1, ::-1].copy(), lam, e, 1j * lam * e)
        return xs, u[::-1].copy(), du[::-1].copy()


class ClosedFormDefect:
    """F for the sharp barrier V0 * 1_[-1,1], from the exact transfer matrix.

    Inside the barrier the propagator uses cos(2k), sin(2k)/k and k sin(2k)
    with k^2 = lam^2 - V0; all three are even in k, so no branch is needed.
    """

    def __init__(self, V0: complex):
        if V0 == 0:
            raise ConfigError("barrier height must be nonzero")
        self.V0 = complex(V0)
        self.L = 1.0
        self.is_real = self.V0.imag == 0
        self.calls = 0

    def defect(self, lams, check: bool = False):
        scalar = np.ndim(lams) == 0
        lam = np.atleast_1d(np.asarray(lams, dtype=np.complex128))
        self.calls += lam.size
        k = np.sqrt(lam * lam - self.V0)
        cos2k = np.cos(2 * k)
        sinc2k = 2.0 * np.sinc(2 * k / np.pi)  # sin(2k)/k
        e = np.exp(1j * lam)
        u0, du0 = e, -1j * lam * e
        u1 = cos2k * u0 + sinc2k * du0
        du1 = -(k * k) * sinc2k * u0 + cos2k * du0
        F = 0.5 * e * (1j * lam * u1 - du1)
        return F[0] if scalar else F


def outgoing_defect(V, lam, L: float | None = None, check: bool = False):
    """F(lam) for the potential V (scalar or array of lam)."""
    return OutgoingProblem(V, L).defect(lam, check=check)


def _as_problem(V):
    return V if hasattr(V, "defect") else OutgoingProblem(V)


# Argument-principle machinery

class ZeroOnContour(NumericalError):
    """A zero of F lies on a contour segment."""


def _wrap(d: np.ndarray) -> np.ndarray:
    return (d + np.pi) % (2 * np.pi) - np.pi


class _Contour:
    """Cached, adaptively refined samples of F along straight segments."""

    MAX_POINTS = 40000

    def __init__(self, problem):
        self.problem = problem
        self.segments: dict[tuple[complex, complex], tuple[np.ndarray, np.ndarray]] = {}

    def segment(self, a: complex, b: complex, base: int = 16):
        key = (a, b)
        if key in self.segments:
            return self.segments[key]
        if (b, a) in self.segments:
            t, F = self.segments[(b, a)]
            return 1.0 - t[::-1], F[::-1]
        # F oscillates like e^{2 i lam L}; start at about 16 samples per radian of that phase
        reach = float(getattr(self.problem, "L", 1.0))
        base = max(base, int(np.ceil(abs(b - a) * 2 * reach * 16 / (2 * np.pi))))
        t = np.linspace(0.0, 1.0, base + 1)
        F = self.problem.defect(a + (b - a) * t)
        while True:
            if np.any(F == 0):
                break
            d = np.abs(_wrap(np.diff(np.angle(F))))
            ratio = np.abs(F[1:]) / np.abs(F[:-1])
            bad = (d >= np.pi / 4) | (ratio > 4) | (ratio < 0.25)
            if not np.any(bad):
                break
            if len(t) > self.MAX_POINTS:
                raise NumericalError("contour refinement exceeded its budget; sample the boundary more finely")
            if np.min(np.diff(t)[bad]) < 1e-10:
                raise ZeroOnContour("F vanishes on (or within ~1e-10 of) the contour")
            mids = 0.5 * (t[:-1][bad] + t[1:][bad])
            Fm = self.problem.defect(a + (b - a) * mids)
            t_all = np.concatenate([t, mids])
            F_all = np.concatenate([F, Fm])
            order = np.argsort(t_all, kind="stable")
            t, F = t_all[order], F_all[order]
        self.segments[key] = (t, F)
        return t, F

    def boundary(self, box: Box):
        pieces = []
        c = box.corners
        for a, b in zip(c, c[1:] + c[:1]):
            pieces.append(self.segment(a, b))
        return pieces

    def winding(self, box: Box) -> tuple[int, float, float]:
        """(winding number, min |F| on the boundary, max |F| on the boundary)."""
        total = 0.0
        lo, hi = np.inf, 0.0
        for _, F in self.boundary(box):
            mags = np.abs(F)
            lo, hi = min(lo, mags.min()), max(hi, mags.max())
            if lo == 0:
                return 0, 0.0, hi
            total += np.sum(_wrap(np.diff(np.angle(F))))
        w = total / (2 * np.pi)
        if abs(w - round(w)) > 0.1:
            raise NumericalError(f"winding {w:.3f} is not near an integer; sample the boundary more finely")
        return int(round(w)), float(lo), float(hi)


def _newton(problem, lam0: complex, box: Box, scale: float, max_iter: int = 60):
    lam = complex(lam0)
    h = 1e-6 * scale
    for _ in range(max_iter):
        F, Fp, Fm = problem.defect(np.array([lam, lam + h, lam - h]))
        if F == 0:
            return lam, 0.0
        dF = (Fp - Fm) / (2 * h)
        if dF == 0:
            return None
        step = F / dF
        lam = lam - step
        if not box.contains(lam, margin=0.25 * box.size):
            return None
        if abs(step) <= 1e-14 * max(1.0, abs(lam)):
            break
    return lam, float(abs(problem.defect(lam)))


def _nudged(value: float, span: float, k: int) -> float:
    return value + span * (0.0, 0.0713, -0.0521, 0.1117, -0.0931)[k]


def _local_dip(t: np.ndarray, F: np.ndarray, bins: int = 64) -> float:
    """Smallest |F| relative to the largest |F| within ~1/16 of the segment.

    |F| grows exponentially with -Im lam, so a global min/max ratio would flag
    tall boxes that are nowhere near a zero.
    """
    mags = np.abs(F)
    idx = np.minimum((t * bins).astype(int), bins - 1)
    starts = np.searchsorted(idx, np.arange(bins))
    present = np.unique(idx)
    binmax = np.zeros(bins)
    binmin = np.full(bins, np.inf)
    binmax[present] = np.maximum.reduceat(mags, starts[present])
    binmin[present] = np.minimum.reduceat(mags, starts[present])
    near = maximum_filter1d(binmax, size=9, mode="nearest")
    return float(np.min(binmin[present] / near[present]))


def _boundary_ok(contour: _Contour, box: Box) -> bool:
    return all(_local_dip(t, F) > 1e-8 for t, F in contour.boundary(box))


def _split_ok(contour: _Contour, a: complex, b: complex) -> bool:
    try:
        t, F = contour.segment(a, b)
    except ZeroOnContour:
        return False
    return _local_dip(t, F) > 1e-8


def find_resonances(V, box: Box, tol: float = 1e-10, min_cell: float | None = None) -> list[Resonance]:
    """All zeros of F in the box, with multiplicities certified by winding numbers."""
    box.check_working_range()
    problem = _as_problem(V)
    contour = _Contour(problem)
    for k in range(5):
        dx, dy = (box.re1 - box.re0) * 0.0137 * k, (box.im1 - box.im0) * 0.0113 * k
        trial = Box(box.re0 - dx, box.re1 + 0.7 * dx, box.im0 - dy, box.im1 + 0.6 * dy)
        try:
            trial.check_working_range()
        except ConfigError:
            trial = Box(box.re0 + dx, box.re1 - 0.7 * dx, box.im0 + dy, box.im1 - 0.6 * dy)
        try:
            w, lo, hi = contour.winding(trial)
        except ZeroOnContour:
            continue
        if lo > 0 and _boundary_ok(contour, trial):
            box = trial
            break
    else:
        raise NumericalError("could not place the box boundary away from zeros")
    if min_cell is None:
        min_cell = 1e-7 * max(1.0, box.size)
    found: list[Resonance] = []
    _search(problem, contour, box, w, hi, tol, min_cell, found)
    if sum(r.multiplicity for r in found) != w:
        raise NumericalError("multiplicities do not add up to the box winding number")
    return sorted(found, key=lambda r: (r.lam.real, r.lam.imag))


def _search(problem, contour, box, w, scale_F, tol, min_cell, found):
    if w == 0:
        return
    if w == 1:
        # start from the boundary sample of smallest |F| pulled to the center, then the center
        for start in (box.center,):
            res = _newton(problem, start, box, box.size)
            if res is not None and box.contains(res[0]):
                lam, resid = res
                if resid <= max(1e-9 * scale_F, 1e-300) or resid <= tol:
                    found.append(Resonance(lam, 1, resid, box))
                    return
    if box.size < min_cell:
        res = _newton(problem, box.center, box, box.size)
        lam = res[0] if res is not None and box.contains(res[0]) else box.center
        found.append(Resonance(lam, w, float(abs(problem.defect(lam))), box))
        return
    mre = 0.5 * (box.re0 + box.re1)
    mim = 0.5 * (box.im0 + box.im1)
    for k in range(5):
        sre = _nudged(mre, box.re1 - box.re0, k)
        sim = _nudged(mim, box.im1 - box.im0, k)
        cuts = [(complex(sre, box.im0), complex(sre, box.im1)), (complex(box.re0, sim), complex(box.re1, sim))]
        if all(_split_ok(contour, a, b) for a, b in cuts):
            break
    else:
        raise NumericalError("could not split a cell away from zeros")
    quads = [Box(box.re0, sre, box.im0, sim), Box(sre, box.re1, box.im0, sim),
             Box(box.re0, sre, sim, box.im1), Box(sre, box.re1, sim, box.im1)]
    total = 0
    for q in quads:
        wq, _, hq = contour.winding(q)
        total += wq
        _search(problem, contour, q, wq, max(scale_F, 0.0) if False else hq, tol, min_cell, found)
    if total != w:
        raise NumericalError("winding numbers of sub-cells do not add up")


def winding_number(V, box: Box) -> int:
    return _Contour(_as_problem(V)).winding(box)[0]


def square_barrier_resonances(V0: complex, box: Box) -> list[complex]:
    """Zeros in the box of the exact matching function of V0 * 1_[-1, 1]."""
    return [r.lam for r in find_resonances(ClosedFormDefect(V0), box)]


# Resonant states

@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise cubic Hermite interpolant of (u, u') on [-L, L] with exact exterior waves."""

    xs: np.ndarray
    u: np.ndarray
    du: np.ndarray
    left: tuple[complex, complex]    # u = A e^{i k x} for x < -L: (A, k)
    right: tuple[complex, complex]   # same for x > L
    _spline: object = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicHermiteSpline(self.xs, self.u, self.du))

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo, hi = self.xs[0], self.xs[-1]
        out = np.asarray(self._spline(np.clip(x, lo, hi), nu=deriv), dtype=complex)
        for mask, (A, k) in ((x < lo, self.left), (x > hi, self.right)):
            if np.any(mask):
                out = np.where(mask, A * (1j * k) ** deriv * np.exp(1j * k * x), out)
        return out

    def scaled(self, c: complex) -> "GridFunction":
        return GridFunction(self.xs, c * self.u, c * self.du,
                            (c * self.left[0], self.left[1]), (c * self.right[0], self.right[1]))


@dataclass(frozen=True, eq=False)
class ResonantPair:
    """Simple resonance lam0 with states f, g normalized so the residue is i f(x) g(y)."""

    lambda0: complex
    f: object
    g: object
    norm_const: complex
    residue_error: float = 0.0
    free: bool = False
    q0_real: bool = True
    radius: float = 0.5  # no other resonance of q0 within this distance of lambda0

    def fg(self, x) -> np.ndarray:
        return self.f(x) * self.g(x)

    def dfg(self, x) -> np.ndarray:
        if self.free:
            return np.zeros_like(np.asarray(x, dtype=float), dtype=complex)
        return self.f(x, 1) * self.g(x) + self.f(x) * self.g(x, 1)

    @property
    def axis_type(self) -> bool:
        """Real background and lam0 on the imaginary axis (where g = conj f is available)."""
        return self.q0_real and abs(self.lambda0.real) <= 1e-12 * max(1.0, abs(self.lambda0))


class _Constant:
    def __init__(self, value: complex):
        self.value = complex(value)

    def __call__(self, x, deriv: int = 0):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, self.value if deriv == 0 else 0j)


def free_pair() -> ResonantPair:
    c = 1 / np.sqrt(2.0)
    return ResonantPair(0j, _Constant(c), _Constant(c), complex(c), 0.0, free=True)


def resolvent_kernel(problem: OutgoingProblem, mu: complex, x, y) -> np.ndarray:
    """R(mu)(x, y) = -u_left(min) u_right(max) / (2 F(mu)) for x, y in [-L, L]."""
    xs, ul, dul = problem.path(mu, "left")
    _, ur, dur = problem.path(mu, "right")
    fl = CubicHermiteSpline(xs, ul, dul)
    fr = CubicHermiteSpline(xs, ur, dur)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    F = problem.defect(mu)
    return -fl(lo) * fr(hi) / (2 * F)


def resonant_pair(q0, lam0: complex, radius: float | None = None, check_residue: bool = True) -> ResonantPair:
    """Normalized states at a simple resonance of q0 (closed form for the free line at 0)."""
    lam0 = complex(lam0)
    if getattr(q0, "is_zero", False):
        if abs(lam0) > 1e-12:
            raise ConfigError("the free line has its only resonance at 0")
        return free_pair()
    problem = OutgoingProblem(q0)
    if radius is None:
        radius = 0.05 * max(1.0, abs(lam0))
    cell = Box.around(lam0, radius)
    roots = find_resonances(problem, cell)
    if len(roots) != 1:
        raise NumericalError("contour around lam0 encloses more than one resonance")
    if roots[0].multiplicity != 1:
        raise NumericalError("resonance is not simple")
    lam0 = roots[0].lam
    h = 1e-6 * max(1.0, abs(lam0))
    Fp, Fm = problem.defect(np.array([lam0 + h, lam0 - h]))
    dF = (Fp - Fm) / (2 * h)
    xs, u, du = problem.path(lam0, "left")
    L = problem.L
    c = u[-1] * np.exp(-1j * lam0 * L)  # u_left = c * e^{i lam0 x} right of the support
    s2 = 1j / (2 * c * dF)
    s = np.sqrt(s2)
    state = GridFunction(xs, s * u, s * du, (s, -lam0), (s * c, lam0))
    err = 0.0
    if check_residue:
        err = _residue_error(problem, lam0, state, radius)
        if err > 1e-6:
            raise NumericalError(f"residue normalization check failed ({err:.2e})")
    return ResonantPair(lam0, state, state, complex(s), err, free=False, q0_real=bool(problem.is_real),
                        radius=float(radius))


def _residue_error(problem, lam0, state, radius, n: int = 32) -> float:
    L = problem.L
    pts = np.array([-0.7, -0.2, 0.3, 0.8]) * L
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    r = 0.5 * radius
    theta = 2 * np.pi * (np.arange(n) + 0.5) / n
    total = np.zeros(X.shape, dtype=complex)
    for th in theta:
        mu = lam0 + r * np.exp(1j * th)
        total += resolvent_kernel(problem, mu, X, Y) * (1j * r * np.exp(1j * th))
    residue = total * (2 * np.pi / n) / (2j * np.pi)
    expected = 1j * state(X) * state(Y)
    return float(np.max(np.abs(residue - expected)) / np.max(np.abs(expected)))


def resonances_json(res: list[Resonance]) -> str:
    return json.dumps([r.to_json() for r in res], sort_keys=True)
