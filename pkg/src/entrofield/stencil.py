"""Finite-difference derivative operators on a uniform 1-D axis."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], deriv: int) -> np.ndarray:
    """Exact weights (unit spacing) of the ``deriv``-th derivative at offset 0."""
    from sympy.calculus.finite_diff import finite_diff_weights

    w = finite_diff_weights(deriv, list(offsets), 0)[deriv][-1]
    return np.array([float(c) for c in w])


def _operator(n: int, h: float, deriv: int, order: int, one_sided: bool, edge_order=None) -> sp.csr_matrix:
    half = order // 2
    width = 2 * half + 1
    # one-sided rows keep the formal order; second derivatives need one extra point
    width_edge = (edge_order or order) + deriv
    if n < width + 1:
        raise ValueError(f"axis with {n} points is too short for a width-{width} stencil")
    rows, cols, vals = [], [], []
    central = fd_weights(tuple(range(-half, half + 1)), deriv)
    for i in range(n):
        if half <= i < n - half or not one_sided:
            offs = np.arange(-half, half + 1)
            w = central
            keep = (i + offs >= 0) & (i + offs < n)
            offs, w = offs[keep], w[keep]
        else:
            start = 0 if i < half else n - width_edge
            idx = np.arange(start, start + width_edge)
            offs = idx - i
            w = fd_weights(tuple(int(o) for o in offs), deriv)
        rows.extend([i] * len(offs))
        cols.extend(i + offs)
        vals.extend(w)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return mat / h**deriv


@lru_cache(maxsize=None)
def first_derivative(n: int, h: float, order: int = 8, edge_order=None) -> sp.csr_matrix:
    """d/dx with central interior stencils and one-sided stencils at the edges."""
    return _operator(n, h, 1, order, True, edge_order)


@lru_cache(maxsize=None)
def second_derivative(n: int, h: float, order: int = 8, edge_order=None) -> sp.csr_matrix:
    """d²/dx² with central interior stencils and one-sided stencils at the edges."""
    return _operator(n, h, 2, order, True, edge_order)


@lru_cache(maxsize=None)
def dirichlet_laplacian(n: int, h: float, order: int = 8) -> sp.csr_matrix:
    """d²/dx² for functions vanishing outside the grid (truncated central stencil)."""
    return _operator(n, h, 2, order, one_sided=False)


def apply_along(op: sp.spmatrix, f: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(f, axis, 0)
    out = op @ moved.reshape(moved.shape[0], -1)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)
