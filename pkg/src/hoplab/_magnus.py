"""Sixth-order Magnus propagator for u'' = (V(x) - lam^2) u.

The first-order system y' = A(x) y with A = [[0, 1], [V - lam^2, 0]] is
advanced over each step with the three-node Gauss-Legendre Magnus scheme.
Traceless 2x2 matrices are stored as (a, b, c) for [[a, b], [c, -a]], so the
step exponential is cosh(s) I + sinh(s)/s * Omega with s^2 = a^2 + b c.
"""

from __future__ import annotations

import numpy as np
from numba import njit

GAUSS3 = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])


@njit(cache=True, inline="always")
def _comm(a1, b1, c1, a2, b2, c2):
    return b1 * c2 - c1 * b2, 2.0 * (a1 * b2 - b1 * a2), 2.0 * (c1 * a2 - a1 * c2)


@njit(cache=True, inline="always")
def _step(h, w1, w2, w3, u, du):
    s15 = np.sqrt(15.0)
    # alpha1 = h A2, alpha2 = sqrt(15) h / 3 (A3 - A1), alpha3 = 10 h / 3 (A3 - 2 A2 + A1)
    a1b = h + 0j
    a1c = h * w2
    a2c = s15 * h / 3.0 * (w3 - w1)
    a3c = 10.0 * h / 3.0 * (w3 - 2.0 * w2 + w1)
    zero = 0j
    c1a, c1b, c1c = _comm(zero, a1b, a1c, zero, zero, a2c)
    ta, tb, tc = _comm(zero, a1b, a1c, c1a, c1b, 2.0 * a3c + c1c)
    c2a, c2b, c2c = -ta / 60.0, -tb / 60.0, -tc / 60.0
    ra, rb, rc = _comm(c1a, -20.0 * a1b + c1b, -20.0 * a1c - a3c + c1c, c2a, c2b, a2c + c2c)
    oa = ra / 240.0
    ob = a1b + rb / 240.0
    oc = a1c + a3c / 12.0 + rc / 240.0
    s2 = oa * oa + ob * oc
    if abs(s2) < 1e-4:
        ch = 1.0 + s2 / 2.0 * (1.0 + s2 / 12.0 * (1.0 + s2 / 30.0 * (1.0 + s2 / 56.0 * (1.0 + s2 / 90.0))))
        sh = 1.0 + s2 / 6.0 * (1.0 + s2 / 20.0 * (1.0 + s2 / 42.0 * (1.0 + s2 / 72.0 * (1.0 + s2 / 110.0))))
    else:
        s = np.sqrt(s2)
        ch = np.cosh(s)
        sh = np.sinh(s) / s
    return (ch + sh * oa) * u + sh * ob * du, sh * oc * u + (ch - sh * oa) * du


@njit(cache=True)
def propagate(xs, vg, lams, u0, du0):
    """Final (u, du) at xs[-1] for each lam, starting from (u0, du0) at xs[0]."""
    m = lams.shape[0]
    u_out = np.empty(m, dtype=np.complex128)
    du_out = np.empty(m, dtype=np.complex128)
    n = xs.shape[0] - 1
    for k in range(m):
        lam2 = lams[k] * lams[k]
        u = u0[k]
        du = du0[k]
        for i in range(n):
            h = xs[i + 1] - xs[i]
            u, du = _step(h, vg[i, 0] - lam2, vg[i, 1] - lam2, vg[i, 2] - lam2, u, du)
        u_out[k] = u
        du_out[k] = du
    return u_out, du_out


@njit(cache=True)
def propagate_path(xs, vg, lam, u0, du0):
    """(u, du) at every node of xs."""
    n = xs.shape[0] - 1
    u = np.empty(n + 1, dtype=np.complex128)
    du = np.empty(n + 1, dtype=np.complex128)
    u[0] = u0
    du[0] = du0
    lam2 = lam * lam
    for i in range(n):
        h = xs[i + 1] - xs[i]
        u[i + 1], du[i + 1] = _step(h, vg[i, 0] - lam2, vg[i, 1] - lam2, vg[i, 2] - lam2, u[i], du[i])
    return u, du
