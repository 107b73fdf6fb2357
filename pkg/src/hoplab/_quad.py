"""Composite Gauss-Legendre rules shared by the quadrature-heavy modules."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    t, w = np.polynomial.legendre.leggauss(n)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def panel_edges(breaks, max_width: float) -> np.ndarray:
    """Sorted unique breakpoints, each gap split into equal panels no wider than max_width."""
    b = np.unique(np.asarray(breaks, dtype=float))
    out = [b[:1]]
    for a, c in zip(b[:-1], b[1:]):
        k = max(1, int(np.ceil((c - a) / max_width - 1e-12)))
        out.append(np.linspace(a, c, k + 1)[1:])
    return np.concatenate(out)


def composite_rule(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened nodes and weights of an n-point rule on every panel."""
    t, w = gauss_legendre(n)
    a, c = edges[:-1, None], edges[1:, None]
    half = 0.5 * (c - a)
    x = (a + c) * 0.5 + half * t
    return x.ravel(), (half * w).ravel()


@lru_cache(maxsize=None)
def cumulative_matrix(n: int) -> np.ndarray:
    """S[i, k] = integral over [-1, t_i] of the k-th Lagrange basis polynomial on the Gauss nodes."""
    t, _ = gauss_legendre(n)
    vander = np.polynomial.legendre.legvander(t, n - 1)
    coef = np.linalg.inv(vander)  # column k holds Legendre coefficients of basis k
    S = np.empty((n, n))
    for k in range(n):
        antider = np.polynomial.legendre.legint(coef[:, k], lbnd=-1.0)
        S[:, k] = np.polynomial.legendre.legval(t, antider)
    S.setflags(write=False)
    return S
