"""Horizontal and hydrostatic Helmholtz projections.

``apply_qh`` extracts the gradient part of a horizontal vector field on the
torus, level by level.  The hydrostatic projection only sees the vertical
average: ``Q u = Q_H(vbar u)`` and ``P u = u - Q u``.
"""
from __future__ import annotations

import numpy as np

from .domain import Grid, check_field, div_h, to_physical, to_spectral, vbar


def inverse_laplacian_multiplier(grid: Grid) -> np.ndarray:
    """-1/|k|^2 on the derivative wavenumbers, 0 where those vanish.

    Setting the zero mode to 0 fixes the mean-free gauge of the potential.
    """
    kk = grid.k1d ** 2 + grid.k2d ** 2
    out = np.zeros_like(kk)
    np.divide(-1.0, kk, out=out, where=kk > 0)
    return out


def potential(grid: Grid, u):
    """Mean-free Psi with Lap_H Psi = div_H u."""
    U = to_spectral(check_field(u))
    div = 1j * (grid.k1d * U[..., 0, :, :, :] + grid.k2d * U[..., 1, :, :, :])
    return to_physical(grid, inverse_laplacian_multiplier(grid) * div)


def apply_qh(grid: Grid, u):
    U = to_spectral(check_field(u))
    k1, k2 = grid.k1d, grid.k2d
    kk = k1 ** 2 + k2 ** 2
    inv = np.zeros_like(kk)
    np.divide(1.0, kk, out=inv, where=kk > 0)
    proj = (k1 * U[..., 0, :, :, :] + k2 * U[..., 1, :, :, :]) * inv
    return np.stack([to_physical(grid, k1 * proj), to_physical(grid, k2 * proj)], axis=-4)


def apply_ph(grid: Grid, u):
    u = check_field(u)
    return u - apply_qh(grid, u)


def apply_q(grid: Grid, u):
    """Hydrostatic complement, an x3-independent slab."""
    return apply_qh(grid, vbar(grid, check_field(u)))


def apply_p(grid: Grid, u):
    u = check_field(u)
    return u - apply_q(grid, u)


def divergence_residual(grid: Grid, v) -> float:
    """max |div_H of the vertical integral of v|."""
    return float(np.max(np.abs(div_h(grid, grid.h * vbar(grid, v))))) if np.size(v) else 0.0
