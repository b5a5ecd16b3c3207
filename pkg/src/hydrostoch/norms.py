"""Sobolev-type norms on the slab, matched to the operator discretization.

Horizontal derivatives are spectral, vertical ones are the finite differences
of ``domain.dz`` with the field's own boundary condition.  All functions
return squared norms and reduce the trailing field axes only, so a batch of
states gives a batch of norms.
"""
import numpy as np

from .domain import BC, Grid, d2z, dz, grad_h, integrate


def _sq(grid, f, vector):
    s = f * f
    if vector:
        s = s.sum(axis=-4)
    return integrate(grid, s)


def gradient3(grid: Grid, f, bc):
    """(d1 f, d2 f, d3 f) as a list."""
    g = grad_h(grid, f)
    return [g[..., 0, :, :, :], g[..., 1, :, :, :], dz(grid, f, bc)]


def l2_sq(grid: Grid, f, vector=False):
    return _sq(grid, np.asarray(f, float), vector)


def h1_seminorm_sq(grid: Grid, f, bc=BC.NEUMANN, vector=False):
    return sum(_sq(grid, d, vector) for d in gradient3(grid, f, bc))


def h1_sq(grid: Grid, f, bc=BC.NEUMANN, vector=False):
    return l2_sq(grid, f, vector) + h1_seminorm_sq(grid, f, bc, vector)


def h2_seminorm_sq(grid: Grid, f, bc=BC.NEUMANN, vector=False):
    g = grad_h(grid, f)
    total = 0.0
    for i in range(2):
        gi = grad_h(grid, g[..., i, :, :, :])
        for j in range(2):
            total = total + _sq(grid, gi[..., j, :, :, :], vector)
    fz = dz(grid, f, bc)
    gz = grad_h(grid, fz)
    total = total + 2.0 * (_sq(grid, gz[..., 0, :, :, :], vector) + _sq(grid, gz[..., 1, :, :, :], vector))
    total = total + _sq(grid, d2z(grid, f, bc), vector)
    return total


def h2_sq(grid: Grid, f, bc=BC.NEUMANN, vector=False):
    return h1_sq(grid, f, bc, vector) + h2_seminorm_sq(grid, f, bc, vector)


def lp(grid: Grid, f, p, vector=False):
    """||f||_{L^p}^p, with |f| the Euclidean length for vector fields."""
    f = np.asarray(f, float)
    a = np.sqrt((f * f).sum(axis=-4)) if vector else np.abs(f)
    return integrate(grid, a ** p)


def state_h1_sq(grid: Grid, v, theta):
    return h1_sq(grid, v, BC.NEUMANN, True) + h1_sq(grid, theta, BC.ROBIN_TOP)


def state_h2_sq(grid: Grid, v, theta):
    return h2_sq(grid, v, BC.NEUMANN, True) + h2_sq(grid, theta, BC.ROBIN_TOP)


def norm_ladder(grid: Grid, f, bc=BC.NEUMANN, vector=False):
    """(||f||^2_{L2}, ||f||^2_{H1}, ||f||^2_{H2}) sharing the derivative work."""
    f = np.asarray(f, float)
    l2 = _sq(grid, f, vector)
    g = grad_h(grid, f)
    fz = dz(grid, f, bc)
    gx, gy = g[..., 0, :, :, :], g[..., 1, :, :, :]
    h1 = l2 + _sq(grid, gx, vector) + _sq(grid, gy, vector) + _sq(grid, fz, vector)
    gxx = grad_h(grid, gx)
    gyy = grad_h(grid, gy)
    gz = grad_h(grid, fz)
    second = (_sq(grid, gxx[..., 0, :, :, :], vector) + _sq(grid, gxx[..., 1, :, :, :], vector)
              + _sq(grid, gyy[..., 0, :, :, :], vector) + _sq(grid, gyy[..., 1, :, :, :], vector)
              + 2.0 * (_sq(grid, gz[..., 0, :, :, :], vector) + _sq(grid, gz[..., 1, :, :, :], vector))
              + _sq(grid, d2z(grid, f, bc), vector))
    return l2, h1, h1 + second
