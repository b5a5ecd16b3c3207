"""Grid and differential operators on the periodic slab T^2 x (-h, 0).

Fields are plain float arrays.  A scalar field has trailing shape
``(n1, n2, n3)``; a horizontal vector field has trailing shape
``(2, n1, n2, n3)``.  Any number of leading batch axes is allowed, which is
how ensembles are vectorized across paths.  Fields that do not depend on the
vertical coordinate may be stored as slabs with ``n3 == 1``; they broadcast
against full fields.

The horizontal directions are treated pseudo-spectrally (rfft over the two
horizontal axes), the vertical one with second-order finite differences on
uniform nodes ``z_k = -h + k*dz``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi
HAXES = (-3, -2)


class BC(str, Enum):
    """Vertical boundary handling for ``dz``/``d2z``/``laplacian``."""

    NEUMANN = "neumann"  # d/dz = 0 at both ends (velocity)
    ROBIN_TOP = "robin"  # d/dz + alpha f = 0 at the top, Neumann at the bottom (temperature)
    INTERIOR = "interior"  # no boundary condition; one-sided stencils at the ends


class FieldError(ValueError):
    pass


def _bc(bc) -> BC:
    try:
        return BC(bc)
    except ValueError:
        raise FieldError(f"unknown boundary tag {bc!r}") from None


@dataclass(frozen=True)
class Grid:
    n1: int
    n2: int
    n3: int
    h: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("n1", "n2"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise FieldError(f"{name} must be an even integer >= 4, got {n}")
        if int(self.n3) != self.n3 or self.n3 < 4:
            raise FieldError(f"n3 must be an integer >= 4, got {self.n3}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise FieldError(f"depth h must be positive, got {self.h}")
        if not np.isfinite(self.alpha):
            raise FieldError("alpha must be finite")

    # -- geometry ---------------------------------------------------------
    @property
    def dz(self) -> float:
        return self.h / (self.n3 - 1)

    @property
    def shape(self) -> tuple:
        return (self.n1, self.n2, self.n3)

    @cached_property
    def z(self) -> np.ndarray:
        z = -self.h + self.dz * np.arange(self.n3)
        z[-1] = 0.0
        return z

    @cached_property
    def x1(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n1) / self.n1

    @cached_property
    def x2(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n2) / self.n2

    def mesh(self):
        """Broadcastable coordinate arrays (x1, x2, z)."""
        return (self.x1[:, None, None], self.x2[None, :, None], self.z[None, None, :])

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights for the vertical integral over (-h, 0)."""
        w = np.full(self.n3, self.dz)
        w[0] = w[-1] = 0.5 * self.dz
        return w

    @property
    def cell_area(self) -> float:
        return TWO_PI ** 2 / (self.n1 * self.n2)

    # -- spectral tables --------------------------------------------------
    @cached_property
    def k1(self) -> np.ndarray:
        return (np.fft.fftfreq(self.n1) * self.n1)[:, None, None]

    @cached_property
    def k2(self) -> np.ndarray:
        return (np.fft.rfftfreq(self.n2) * self.n2)[None, :, None]

    @cached_property
    def k1d(self) -> np.ndarray:
        # Nyquist zeroed: first derivatives of a real field must stay real,
        # and this keeps div_h = -grad_h^T exactly.
        k = self.k1.copy()
        k[self.n1 // 2] = 0.0
        return k

    @cached_property
    def k2d(self) -> np.ndarray:
        k = self.k2.copy()
        k[:, self.n2 // 2] = 0.0
        return k

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1 ** 2 + self.k2 ** 2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        keep1 = np.abs(self.k1) < self.n1 / 3.0
        keep2 = np.abs(self.k2) < self.n2 / 3.0
        return (keep1 & keep2).astype(float)

    @cached_property
    def vertical_modes(self):
        """Eigen-decompositions of the discrete vertical second difference.

        Returns a dict keyed by BC with (V, Vinv, lam) such that
        D2 = V diag(lam) Vinv.  D2 is self-adjoint for the trapezoid weights,
        so we diagonalize its symmetrized form.
        """
        out = {}
        sw = np.sqrt(self.weights)
        for bc in (BC.NEUMANN, BC.ROBIN_TOP):
            D2 = d2z(self, np.eye(self.n3), bc).T
            S = (sw[:, None] * D2) / sw[None, :]
            S = 0.5 * (S + S.T)
            lam, Q = np.linalg.eigh(S)
            V = Q / sw[:, None]
            Vinv = Q.T * sw[None, :]
            out[bc] = (V, Vinv, lam)
        return out


# -- transforms -------------------------------------------------------------

def to_spectral(f):
    return sfft.rfft2(f, axes=HAXES)


def to_physical(grid: Grid, F):
    return sfft.irfft2(F, s=(grid.n1, grid.n2), axes=HAXES)


def check_field(f, name="field"):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise FieldError(f"{name} contains non-finite values")
    return f


def as_field(grid: Grid, *components):
    """Broadcast expressions of the mesh to full arrays; several are stacked."""
    full = [np.broadcast_to(np.asarray(c, float), grid.shape) for c in components]
    return full[0].copy() if len(full) == 1 else np.stack(full)


def dealias(grid: Grid, f):
    return to_physical(grid, grid.dealias_mask * to_spectral(f))


# -- horizontal operators -------------------------------------------------

def grad_h(grid: Grid, f):
    """Spectral horizontal gradient; new component axis at position -4."""
    F = to_spectral(check_field(f))
    return np.stack(
        [to_physical(grid, 1j * grid.k1d * F), to_physical(grid, 1j * grid.k2d * F)],
        axis=-4,
    )


def div_h(grid: Grid, u):
    u = check_field(u)
    if u.ndim < 4 or u.shape[-4] != 2:
        raise FieldError(f"expected a horizontal vector field, got shape {u.shape}")
    U = to_spectral(u)
    return to_physical(grid, 1j * (grid.k1d * U[..., 0, :, :, :] + grid.k2d * U[..., 1, :, :, :]))


def laplacian_h(grid: Grid, f):
    return to_physical(grid, -grid.ksq * to_spectral(f))


# -- vertical operators -----------------------------------------------------

def _ghosted(grid: Grid, f, bc: BC):
    n = f.shape[-1]
    g = np.empty(f.shape[:-1] + (n + 2,))
    g[..., 1:-1] = f
    g[..., 0] = f[..., 1]
    if bc is BC.NEUMANN:
        g[..., -1] = f[..., n - 2]
    else:
        g[..., -1] = f[..., n - 2] - 2.0 * grid.dz * grid.alpha * f[..., n - 1]
    return g


def dz(grid: Grid, f, bc=BC.NEUMANN):
    """Vertical derivative, centered in the interior, boundary rows from ``bc``."""
    bc = _bc(bc)
    f = check_field(f)
    if f.shape[-1] == 1:
        return np.zeros_like(f)
    d = grid.dz
    if bc is BC.INTERIOR:
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * d)
        out[..., 0] = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * d)
        out[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * d)
        return out
    g = _ghosted(grid, f, bc)
    return (g[..., 2:] - g[..., :-2]) / (2 * d)


def d2z(grid: Grid, f, bc=BC.NEUMANN):
    bc = _bc(bc)
    f = np.asarray(f, dtype=float)
    if f.shape[-1] == 1:
        return np.zeros_like(f)
    d2 = grid.dz ** 2
    if bc is BC.INTERIOR:
        out = np.empty_like(f)
        out[..., 1:-1] = (f[..., 2:] - 2 * f[..., 1:-1] + f[..., :-2]) / d2
        out[..., 0] = (2 * f[..., 0] - 5 * f[..., 1] + 4 * f[..., 2] - f[..., 3]) / d2
        out[..., -1] = (2 * f[..., -1] - 5 * f[..., -2] + 4 * f[..., -3] - f[..., -4]) / d2
        return out
    g = _ghosted(grid, f, bc)
    return (g[..., 2:] - 2 * g[..., 1:-1] + g[..., :-2]) / d2


def laplacian(grid: Grid, f, bc=BC.NEUMANN):
    f = check_field(f)
    return laplacian_h(grid, f) + d2z(grid, f, bc)


# -- vertical calculus ------------------------------------------------------

def vbar(grid: Grid, f):
    """Vertical average, returned as an ``n3 == 1`` slab."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] == 1:
        return f.copy()
    return (f @ grid.weights)[..., None] / grid.h


def vtilde(grid: Grid, f):
    return np.asarray(f, dtype=float) - vbar(grid, f)


def vhat(grid: Grid, f):
    """Depth-weighted average (1/h) * int f(zeta) zeta dzeta, as a slab."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] == 1:
        return -0.5 * grid.h * f
    return (f @ (grid.weights * grid.z))[..., None] / grid.h


def vint(grid: Grid, f):
    """Cumulative trapezoid from the bottom; zero at z = -h."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] == 1:
        return f * (grid.z + grid.h)
    out = np.zeros_like(f)
    np.cumsum(0.5 * grid.dz * (f[..., 1:] + f[..., :-1]), axis=-1, out=out[..., 1:])
    return out


# -- quadrature -------------------------------------------------------------

def integrate(grid: Grid, f):
    """Integral over the slab of a scalar field (reduces the last three axes)."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] == 1:
        return f.sum(axis=(-3, -2, -1)) * grid.cell_area * grid.h
    return (f @ grid.weights).sum(axis=(-2, -1)) * grid.cell_area


def integrate_h(grid: Grid, f):
    """Integral over the torus of a slab or of each level."""
    return np.asarray(f, dtype=float).sum(axis=(-3, -2)) * grid.cell_area


def inner(grid: Grid, a, b, vector: bool = False):
    """Discrete L^2 inner product.  With ``vector`` the component axis is summed."""
    prod = np.asarray(a) * np.asarray(b)
    if vector:
        prod = prod.sum(axis=-4)
    return integrate(grid, prod)


def l2_norm(grid: Grid, f, vector: bool = False):
    return np.sqrt(inner(grid, f, f, vector))
