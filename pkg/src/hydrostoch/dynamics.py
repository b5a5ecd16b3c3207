"""Drift assembly, hydrostatic reconstructions and time stepping.

The stepped system is pressure free: the hydrostatic projection removes the
surface pressure gradients, and the vertical velocity and the pressures are
diagnosed from (v, theta).  Time stepping is semi-implicit: the Laplacian is
solved implicitly (diagonal in horizontal Fourier modes, one small
eigen-decomposition in the vertical), everything else is explicit, and the
noise enters as an Euler-Maruyama increment or a Heun predictor-corrector.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domain import (BC, FieldError, Grid, div_h, dz, integrate, laplacian, to_physical, to_spectral,
                     vbar, vint)
from .noise import (BrownianIncrements, NoiseModel, apply_diffusion, gamma_feedback,
                    ito_correction, noise_sum, pressure_coupling, strat_to_ito,
                    transport_scalar, transport_source)
from .norms import state_h1_sq, state_h2_sq
from .projection import apply_p, divergence_residual, potential

TOL_DIV = 1e-10
CFL_MAX = 0.5


class InvalidStateError(ValueError):
    pass


class CFLError(ValueError):
    def __init__(self, msg, suggested_dt):
        super().__init__(msg)
        self.suggested_dt = suggested_dt


@dataclass
class SimState:
    v: np.ndarray
    theta: np.ndarray
    t: float = 0.0
    step: int = 0
    valid: bool = True

    @classmethod
    def zeros(cls, grid: Grid, batch=()):
        return cls(np.zeros(tuple(batch) + (2,) + grid.shape), np.zeros(tuple(batch) + grid.shape))


@dataclass
class Forcing:
    f_v: np.ndarray | None = None
    f_theta: np.ndarray | None = None
    k0: float = 0.0  # Coriolis parameter, adds k0 (v2, -v1)

    def xi(self, grid: Grid) -> float:
        out = 0.0
        if self.f_v is not None:
            out += float(np.sqrt(integrate(grid, (self.f_v ** 2).sum(axis=-4))))
        if self.f_theta is not None:
            out += float(np.sqrt(integrate(grid, self.f_theta ** 2)))
        return out


# -- reconstructions ----------------------------------------------------------

def check_incompressible(grid: Grid, v, tol_div=TOL_DIV):
    """Raise unless div_H of the vertical integral of v vanishes to tol_div.

    The tolerance is scaled by max|v| when that exceeds 1, so large states are
    judged by relative round-off.
    """
    res = divergence_residual(grid, v)
    scale = max(1.0, float(np.max(np.abs(v))) if np.size(v) else 0.0)
    if not res <= tol_div * scale:
        raise InvalidStateError(f"integral incompressibility violated (residual {res:.3g})")


def reconstruct_w(grid: Grid, v, tol_div=TOL_DIV, check=True):
    """w = -int_{-h}^{z} div_H v."""
    v = np.asarray(v, float)
    if check:
        check_incompressible(grid, v, tol_div)
    return -vint(grid, div_h(grid, v))


def _advection(grid: Grid, v, theta):
    """Dealiased (v.grad_H) v + w d3 v and (v.grad_H) theta + w d3 theta."""
    mask = grid.dealias_mask
    k1, k2 = grid.k1d, grid.k2d
    V = to_spectral(v) * mask
    T = to_spectral(theta) * mask
    vm = to_physical(grid, V)
    dv1 = to_physical(grid, 1j * k1 * V)
    dv2 = to_physical(grid, 1j * k2 * V)
    div = to_physical(grid, 1j * (k1 * V[..., 0, :, :, :] + k2 * V[..., 1, :, :, :]))
    w = -vint(grid, div)
    u1, u2 = vm[..., 0, :, :, :], vm[..., 1, :, :, :]
    adv_v = (u1[..., None, :, :, :] * dv1 + u2[..., None, :, :, :] * dv2
             + w[..., None, :, :, :] * dz(grid, vm, BC.NEUMANN))
    tm = to_physical(grid, T)
    adv_t = (u1 * to_physical(grid, 1j * k1 * T) + u2 * to_physical(grid, 1j * k2 * T)
             + w * dz(grid, tm, BC.ROBIN_TOP))
    adv_v = to_physical(grid, mask * to_spectral(adv_v))
    adv_t = to_physical(grid, mask * to_spectral(adv_t))
    return adv_v, adv_t


def explicit_terms(nm: NoiseModel, v, theta, forcing: Forcing | None = None, linear=False):
    """Everything in the drift except the Laplacian, before projection."""
    g = nm.grid
    ev = np.zeros(np.broadcast_shapes(np.shape(v), (2,) + g.shape))
    et = np.zeros(np.broadcast_shapes(np.shape(theta), g.shape))
    if not linear:
        av, at = _advection(g, v, theta)
        ev = ev - av
        et = et - at
    if np.any(nm.kappa) or np.any(nm.pi):
        ev = ev + pressure_coupling(nm, theta)
    if np.any(nm.gamma):
        ev = ev + gamma_feedback(nm, v, theta)
    if nm.converted:
        cv, ct = ito_correction(nm, v, theta)
        ev = ev + cv
        et = et + ct
    if forcing is not None:
        if forcing.f_v is not None:
            ev = ev + forcing.f_v
        if forcing.f_theta is not None:
            et = et + forcing.f_theta
        if forcing.k0:
            ev = ev + forcing.k0 * np.stack([v[..., 1, :, :, :], -v[..., 0, :, :, :]], axis=-4)
    return ev, et


def assemble_drift(state: SimState, nm: NoiseModel, forcing: Forcing | None = None, linear=False):
    """Full Ito drift of (v, theta); the velocity part is projected."""
    nm.require_valid()
    if not state.valid:
        raise InvalidStateError("cannot assemble the drift of an invalid state")
    g = nm.grid
    check_incompressible(g, state.v)
    ev, et = explicit_terms(nm, state.v, state.theta, forcing, linear)
    return (laplacian(g, state.v, BC.NEUMANN) + apply_p(g, ev),
            laplacian(g, state.theta, BC.ROBIN_TOP) + et)


def reconstruct_pressures(state: SimState, nm: NoiseModel, forcing: Forcing | None = None):
    """Surface and full pressures, diagnostic only.

    The surface pressure p is the potential of the Q part of the explicit
    velocity drift; each p_tilde_n is the potential of Q of the n-th noise
    source.  P and P_tilde_n add the hydrostatic vertical integrals.
    """
    g = nm.grid
    v, theta = state.v, state.theta
    ev, _ = explicit_terms(nm, v, theta, forcing)
    p = potential(g, vbar(g, ev))
    hydro = nm.kappa * theta
    if np.any(nm.pi):
        hydro = hydro + transport_scalar(g, nm.pi, theta)
    P = p - vint(g, hydro)
    pt, Pt = [], []
    for n in range(nm.N):
        ps = potential(g, vbar(g, transport_source(nm, v, theta, n)))
        pt.append(ps)
        Pt.append(ps - vint(g, nm.sigma[n] * theta))
    lead = np.shape(theta)[:-3]
    empty_s = np.zeros((0,) + lead + (g.n1, g.n2, 1))
    empty_f = np.zeros((0,) + lead + g.shape)
    return {
        "P": P,
        "p_surface": p,
        "p_tilde": np.stack(Pt) if Pt else empty_f,
        "p_tilde_surface": np.stack(pt) if pt else empty_s,
    }


# -- implicit solve -------------------------------------------------------------

def implicit_solve(grid: Grid, f, dt: float, bc):
    """(I - dt*Laplacian)^{-1} f with the vertical boundary condition ``bc``."""
    f = np.asarray(f, float)
    if not f.any():
        return np.zeros_like(f)
    V, Vinv, lam = grid.vertical_modes[BC(bc)]
    # vertical transform in real arithmetic, then the diagonal horizontal solve
    G = to_spectral(f @ Vinv.T)
    G /= 1.0 + dt * grid.ksq - dt * lam
    return to_physical(grid, G) @ V.T


# -- stepping -------------------------------------------------------------------

def _increments(dW):
    return dW.dW if isinstance(dW, BrownianIncrements) else np.asarray(dW, float)


def check_cfl(grid: Grid, v, dt, cfl_max=CFL_MAX):
    umax = float(np.max(np.abs(v))) if np.size(v) else 0.0
    dx = 2.0 * np.pi / max(grid.n1, grid.n2)
    if dt * umax / dx > cfl_max:
        suggested = 0.9 * cfl_max * dx / umax
        raise CFLError(f"CFL violated: dt*max|v|/dx = {dt * umax / dx:.3g} > {cfl_max}; "
                       f"try dt <= {suggested:.3g}", suggested)


def _finish(grid, state, v_star, t_star, dt, implicit):
    if implicit:
        v_new = implicit_solve(grid, v_star, dt, BC.NEUMANN)
        t_new = implicit_solve(grid, t_star, dt, BC.ROBIN_TOP)
    else:
        v_new, t_new = v_star, t_star
    finite = bool(np.all(np.isfinite(v_new)) and np.all(np.isfinite(t_new)))
    if finite:
        v_new = apply_p(grid, v_new)
    return SimState(v_new, t_new, state.t + dt, state.step + 1, finite)


def _prepare(state, nm, dt, cfl_max, tol_div):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not state.valid:
        raise InvalidStateError("cannot step an invalid state")
    nm.require_valid()
    check_cfl(nm.grid, state.v, dt, cfl_max)
    check_incompressible(nm.grid, state.v, tol_div)


def step_ito(state: SimState, nm: NoiseModel, forcing: Forcing | None, dt: float, dW, *,
             linear=False, implicit=True, cfl_max=CFL_MAX, tol_div=TOL_DIV) -> SimState:
    """One semi-implicit Euler-Maruyama step.

    Solves (I - dt Lap) U* = U + dt E(U) + sum_n B_n(U) dW_n and projects v*.
    With ``implicit=False`` the Laplacian is explicit instead (used as an
    oracle by the split-consistency diagnostic).
    """
    _prepare(state, nm, dt, cfl_max, tol_div)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return _ito_update(state, nm, forcing, dt, dW, linear, implicit)
    except FieldError:
        # overflow inside the drift: same outcome as a non-finite result
        return _invalid(state, dt)


def _invalid(state, dt):
    return SimState(state.v, state.theta, state.t + dt, state.step + 1, False)


def _ito_update(state, nm, forcing, dt, dW, linear, implicit):
    g = nm.grid
    v, th = state.v, state.theta
    ev, et = explicit_terms(nm, v, th, forcing, linear)
    # P is linear and commutes with the implicit solve, so one projection in
    # _finish covers the drift and the noise sources
    nv, nt = noise_sum(nm, v, th, _increments(dW), project=False)
    v_star = v + dt * ev + nv
    t_star = th + dt * et + nt
    if not implicit:
        v_star = v_star + dt * laplacian(g, v, BC.NEUMANN)
        t_star = t_star + dt * laplacian(g, th, BC.ROBIN_TOP)
    return _finish(g, state, v_star, t_star, dt, implicit)


def step_stratonovich(state: SimState, nm: NoiseModel, forcing: Forcing | None, dt: float, dW, *,
                      scheme="ito-corrected", linear=False, cfl_max=CFL_MAX,
                      tol_div=TOL_DIV) -> SimState:
    """One step of the Stratonovich system.

    ``ito-corrected`` converts the raw coefficients (a converted model is used
    as is) and takes an Ito step.  ``heun`` keeps the raw coefficients and
    averages the noise coefficients at U and at the noise-only predictor
    U + sum_n B_n(U) dW_n.
    """
    if scheme == "ito-corrected":
        nm_ito = nm if nm.converted else strat_to_ito(nm)
        return step_ito(state, nm_ito, forcing, dt, dW, linear=linear,
                        cfl_max=cfl_max, tol_div=tol_div)
    if scheme != "heun":
        raise ValueError(f"unknown Stratonovich scheme {scheme!r}")
    if nm.converted:
        raise ValueError("heun stepping needs the raw Stratonovich coefficients")
    _prepare(state, nm, dt, cfl_max, tol_div)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return _heun_update(state, nm, forcing, dt, dW, linear)
    except FieldError:
        return _invalid(state, dt)


def _heun_update(state, nm, forcing, dt, dW, linear):
    g = nm.grid
    v, th = state.v, state.theta
    dw = _increments(dW)
    ev, et = explicit_terms(nm, v, th, forcing, linear)
    nv, nt = apply_diffusion(nm, v, th, dw)
    pv, pt = apply_diffusion(nm, v + nv, th + nt, dw)
    v_star = v + dt * ev + 0.5 * (nv + pv)
    t_star = th + dt * et + 0.5 * (nt + pt)
    return _finish(g, state, v_star, t_star, dt, True)


# -- blow-up monitor ------------------------------------------------------------

class BlowupMonitor:
    """Tracks sup ||(v,theta)||_{H1}^2 + int ||(v,theta)||_{H2}^2 dt.

    Left-endpoint quadrature in time.  ``update`` returns True once the
    functional exceeds ``ceiling`` or the state stops being finite.
    """

    def __init__(self, grid: Grid, ceiling=1e8):
        self.grid = grid
        self.ceiling = ceiling
        self.sup_h1 = 0.0
        self.int_h2 = 0.0
        self.fired = False

    @property
    def value(self):
        return self.sup_h1 + self.int_h2

    def update(self, state: SimState, dt: float = 0.0) -> bool:
        if not state.valid:
            self.fired = True
            return True
        h1 = float(state_h1_sq(self.grid, state.v, state.theta))
        h2 = float(state_h2_sq(self.grid, state.v, state.theta))
        if not (np.isfinite(h1) and np.isfinite(h2)):
            self.fired = True
            return True
        self.sup_h1 = max(self.sup_h1, h1)
        self.int_h2 += dt * h2
        if self.value > self.ceiling:
            self.fired = True
        return self.fired


def with_fields(state: SimState, v=None, theta=None) -> SimState:
    return replace(state, v=state.v if v is None else v, theta=state.theta if theta is None else theta)
