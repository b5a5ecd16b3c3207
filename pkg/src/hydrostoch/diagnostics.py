"""Scalar diagnostics of a state: norms, barotropic/baroclinic split quantities,
the X/Y energy functionals, the cancellation residual, and a consistency check
of the vertically averaged equations against the full system.

Energies are reported as powers matching the functionals: squared L2/H1/H2
norms and fourth powers for L4.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.integrate import simpson

from .domain import (BC, Grid, d2z, div_h, dz, grad_h, integrate, integrate_h, laplacian_h,
                     to_physical, to_spectral, vbar, vhat, vint, vtilde)
from .dynamics import InvalidStateError, SimState, _increments, reconstruct_w
from .noise import gamma_feedback, ito_correction, transport_scalar, transport_vector
from .norms import h1_sq, h2_sq, l2_sq, lp
from .projection import apply_ph, divergence_residual


class PreconditionError(ValueError):
    pass


class MissingRecordError(ValueError):
    pass


# -- helpers ---------------------------------------------------------------------

def _grad3(grid, f, bc):
    """Full gradient as an array with a new leading component axis at -4."""
    return np.concatenate([grad_h(grid, f), dz(grid, f, bc)[..., None, :, :, :]], axis=-4)


def _sq_sum(a, axes):
    return (a * a).sum(axis=axes)


def _h1_2d(grid, u):
    """||u||^2_{H1(T^2)} for a slab vector field."""
    g = grad_h(grid, u)
    return integrate_h(grid, _sq_sum(u, -4) + _sq_sum(g, (-5, -4)))[..., 0]


def _h2_2d(grid, u):
    g = grad_h(grid, u)
    gg = grad_h(grid, g)
    return _h1_2d(grid, u) + integrate_h(grid, _sq_sum(gg, (-6, -5, -4)))[..., 0]


def _state_ok(state):
    if not state.valid:
        raise InvalidStateError("diagnostics need a valid state")
    if not (np.all(np.isfinite(state.v)) and np.all(np.isfinite(state.theta))):
        raise InvalidStateError("state has non-finite values")


# -- energy functionals ------------------------------------------------------------

def energy_terms(grid: Grid, state: SimState) -> dict:
    """Every summand of X and Y, keyed by name."""
    _state_ok(state)
    v, th = state.v, state.theta
    vb = vbar(grid, v)
    vt = v - vb
    v3 = dz(grid, v, BC.NEUMANN)
    t3 = dz(grid, th, BC.ROBIN_TOP)
    vt_sq = _sq_sum(vt, -4)
    grad_vt = np.stack([_grad3(grid, vt[..., j, :, :, :], BC.NEUMANN) for j in range(2)], axis=-5)
    grad_th = _grad3(grid, th, BC.ROBIN_TOP)
    return {
        "vtilde_l4": lp(grid, vt, 4, vector=True),
        "vbar_h1": _h1_2d(grid, vb),
        "d3v_l2": l2_sq(grid, v3, vector=True),
        "d3theta_l2": l2_sq(grid, t3),
        "vtilde_grad_vtilde": integrate(grid, vt_sq * _sq_sum(grad_vt, (-5, -4))),
        "vbar_h2": _h2_2d(grid, vb),
        "d3v_h1": _h1_of_d3(grid, v, v3, BC.NEUMANN, True),
        "d3theta_h1": _h1_of_d3(grid, th, t3, BC.ROBIN_TOP, False),
        "vtilde_grad_theta": integrate(grid, vt_sq * _sq_sum(grad_th, -4)),
    }


def _h1_of_d3(grid, f, f3, bc, vector):
    # d3 of d3 f uses the second difference with the field's own boundary rows
    g = grad_h(grid, f3)
    out = l2_sq(grid, f3, vector) + l2_sq(grid, d2z(grid, f, bc), vector)
    comp = (-5, -4) if vector else -4
    return out + integrate(grid, _sq_sum(g, comp))


X_TERMS = ("vtilde_l4", "vbar_h1", "d3v_l2", "d3theta_l2")
Y_TERMS = ("vtilde_grad_vtilde", "vbar_h2", "d3v_h1", "d3theta_h1", "vtilde_grad_theta")


def energy_xy(grid: Grid, state: SimState):
    terms = energy_terms(grid, state)
    X = sum(terms[k] for k in X_TERMS)
    Y = sum(terms[k] for k in Y_TERMS)
    return X, Y


def extended_terms(grid: Grid, state: SimState) -> dict:
    """Mixed products that bound the hat-theta equation; not part of Y."""
    _state_ok(state)
    vt = vtilde(grid, state.v)
    grad_vt = np.stack([_grad3(grid, vt[..., j, :, :, :], BC.NEUMANN) for j in range(2)], axis=-5)
    gsq = _sq_sum(grad_vt, (-5, -4))
    th = state.theta
    big = vint(grid, th)
    return {
        "theta_grad_vtilde": integrate(grid, th * th * gsq),
        "Theta_grad_vtilde": integrate(grid, big * big * gsq),
    }


# -- cancellation ----------------------------------------------------------------------

def _components(f, ref_ndim):
    f = np.asarray(f, float)
    return f[..., None, :, :, :] if f.ndim == ref_ndim else f


def _d3_high(grid, f):
    """Fourth-order vertical derivative on the uniform nodes, no boundary condition."""
    d = 12.0 * grid.dz
    out = np.empty_like(f)
    out[..., 2:-2] = (f[..., :-4] - 8 * f[..., 1:-3] + 8 * f[..., 3:-1] - f[..., 4:]) / d
    a = f[..., :5]
    out[..., 0] = (-25 * a[..., 0] + 48 * a[..., 1] - 36 * a[..., 2] + 16 * a[..., 3] - 3 * a[..., 4]) / d
    out[..., 1] = (-3 * a[..., 0] - 10 * a[..., 1] + 18 * a[..., 2] - 6 * a[..., 3] + a[..., 4]) / d
    b = f[..., -1:-6:-1]
    out[..., -1] = -(-25 * b[..., 0] + 48 * b[..., 1] - 36 * b[..., 2] + 16 * b[..., 3] - 3 * b[..., 4]) / d
    out[..., -2] = -(-3 * b[..., 0] - 10 * b[..., 1] + 18 * b[..., 2] - 6 * b[..., 3] + b[..., 4]) / d
    return out


def _integrate_high(grid, f):
    col = simpson(f, dx=grid.dz, axis=-1)
    return col.sum(axis=(-2, -1)) * grid.cell_area


def _u_dot_grad(grid, v, w, f, order):
    g = grad_h(grid, f)
    d3 = _d3_high(grid, f) if order == 4 else dz(grid, f, BC.INTERIOR)
    return v[..., 0, :, :, :] * g[..., 0, :, :, :] + v[..., 1, :, :, :] * g[..., 1, :, :, :] + w * d3


def cancellation_parts(grid: Grid, u3d, f, g, r: int, tol_div=1e-8, order=4):
    """The two integrals whose sum vanishes for divergence-free u with w = 0 on
    the top and bottom.  ``u3d`` is (v, w); w = None rebuilds it from v.
    ``f`` may be scalar or carry a component axis at -4.

    ``order=4`` evaluates the columns with fourth-order stencils and Simpson
    weights (horizontal directions stay spectral); ``order=2`` uses the
    second-order operators of the stepper.
    """
    if int(r) != r or r < 2:
        raise PreconditionError(f"r must be an integer >= 2, got {r}")
    if order not in (2, 4):
        raise PreconditionError(f"order must be 2 or 4, got {order}")
    if order == 4 and grid.n3 < 5:
        raise PreconditionError("fourth-order columns need n3 >= 5")
    v, w = u3d
    v = np.asarray(v, float)
    g = np.asarray(g, float)
    if w is None:
        w = reconstruct_w(grid, v, check=False)
    w = np.asarray(w, float)
    scale = max(1.0, float(np.max(np.abs(v))))
    trace = max(float(np.max(np.abs(w[..., 0]))), float(np.max(np.abs(w[..., -1]))))
    if trace > tol_div * scale:
        raise PreconditionError(f"w does not vanish at the top and bottom (trace {trace:.3g})")
    if divergence_residual(grid, v) > tol_div * scale:
        raise PreconditionError("v is not integrally divergence free")
    quad = _integrate_high if order == 4 else integrate
    fc = _components(f, g.ndim)
    fabs = np.sqrt(_sq_sum(fc, -4))
    ug = _u_dot_grad(grid, v, w, g, order)
    uf = np.stack([_u_dot_grad(grid, v, w, fc[..., j, :, :, :], order) for j in range(fc.shape[-4])],
                  axis=-4)
    first = quad(grid, fabs ** r * g ** (r - 1) * ug)
    second = quad(grid, g ** r * fabs ** (r - 2) * (fc * uf).sum(axis=-4))
    return first, second


def cancellation_residual(grid: Grid, u3d, f, g, r: int, tol_div=1e-8, order=4):
    a, b = cancellation_parts(grid, u3d, f, g, r, tol_div, order)
    return a + b


# -- the hat identity for w d3 theta ---------------------------------------------------------

def hat_w_dtheta(grid: Grid, v, theta):
    """Returns (direct, rewritten): the weighted average of w d3 theta computed
    directly and through the integrated-by-parts form that only involves
    div_H v and the vertical antiderivative of theta."""
    w = reconstruct_w(grid, v, check=False)
    direct = vhat(grid, w * dz(grid, theta, BC.ROBIN_TOP))
    return direct, _hat_w_rewritten(grid, div_h(grid, v), theta)


def _hat_w_rewritten(grid, divv, theta):
    return vbar(grid, -divv * vint(grid, theta) + divv * theta * grid.z)


def vhat_identity_residual(grid: Grid, v, theta) -> float:
    a, b = hat_w_dtheta(grid, v, theta)
    return float(np.max(np.abs(a - b)))


# -- derived averaged equations -----------------------------------------------------------

def _mask(grid, f):
    return to_physical(grid, grid.dealias_mask * to_spectral(f))


def _x3_constant(a):
    a = np.asarray(a)
    return a.shape[-1] == 1 or np.all(a == a[..., :1])


def averaged_increments(nm, v, theta, dt, dW, forcing=None, linear=False):
    """One explicit Euler increment of the vertically averaged velocity and of
    the weighted-average temperature, assembled from split quantities only.

    The advection uses the barotropic/baroclinic form for vbar and the
    integrated-by-parts form of the weighted average of w d3 theta.  Terms
    without a derived form (Ito corrections, forcing, gamma feedback) are
    averaged directly.
    """
    g = nm.grid
    vb = vbar(g, v)
    th_hat = vhat(g, theta)
    drift_v = laplacian_h(g, vb)
    drift_t = laplacian_h(g, th_hat) + (theta[..., :1] - theta[..., -1:]) / g.h

    if not linear:
        vm = _mask(g, v)
        tm = _mask(g, theta)
        vmb = vbar(g, vm)
        vmt = vm - vmb
        divt = div_h(g, vmt)
        adv_bar = _vec_adv(g, vmb, vmb) + vbar(g, _vec_adv(g, vmt, vmt) + vmt * divt[..., None, :, :, :])
        drift_v = drift_v - _mask(g, adv_bar)
        gt = grad_h(g, tm)
        vt_grad_t = (vmt * gt).sum(axis=-4)
        that = vhat(g, tm)
        gth = grad_h(g, that)
        adv_hat = (vhat(g, vt_grad_t) + (vmb * gth).sum(axis=-4)
                   + _hat_w_rewritten(g, div_h(g, vm), tm))
        drift_t = drift_t - _mask(g, adv_hat)

    if np.any(nm.kappa) or np.any(nm.pi):
        src = nm.kappa * theta
        if np.any(nm.pi):
            src = src + transport_scalar(g, nm.pi, theta)
        # vbar of the vertical antiderivative is minus the weighted average
        drift_v = drift_v - grad_h(g, vhat(g, src))
    if np.any(nm.gamma):
        drift_v = drift_v + vbar(g, gamma_feedback(nm, v, theta))
    if nm.converted:
        cv, ct = ito_correction(nm, v, theta)
        drift_v = drift_v + vbar(g, cv)
        drift_t = drift_t + vhat(g, ct)
    if forcing is not None:
        if forcing.f_v is not None:
            drift_v = drift_v + vbar(g, forcing.f_v)
        if forcing.f_theta is not None:
            drift_t = drift_t + vhat(g, forcing.f_theta)
        if forcing.k0:
            drift_v = drift_v + forcing.k0 * np.stack([vb[..., 1, :, :, :], -vb[..., 0, :, :, :]], axis=-4)

    dW = np.asarray(dW, float)
    noise_v = np.zeros_like(drift_v)
    noise_t = np.zeros_like(drift_t)
    a_phi, a_psi, a_sig = nm.active
    for n in range(nm.N):
        b = dW[..., n].reshape(dW.shape[:-1] + (1,) * 4)
        if a_phi[n]:
            phi = nm.phi[n]
            if _x3_constant(phi[:2]):
                src = transport_vector(g, np.concatenate([phi[:2, ..., :1], np.zeros_like(phi[2:, ..., :1])]), vb)
            else:
                src = vbar(g, transport_vector(g, np.concatenate([phi[:2], np.zeros_like(phi[2:])]), v))
            if np.any(phi[2]):
                src = src + vbar(g, phi[2] * dz(g, v, BC.NEUMANN))
            noise_v = noise_v + src * b
        if a_sig[n]:
            noise_v = noise_v - grad_h(g, vhat(g, nm.sigma[n] * theta)) * b
        if a_psi[n]:
            psi = nm.psi[n]
            if _x3_constant(psi[:2]):
                gt = grad_h(g, th_hat)
                src_t = psi[0, ..., :1] * gt[..., 0, :, :, :] + psi[1, ..., :1] * gt[..., 1, :, :, :]
            else:
                gt = grad_h(g, theta)
                src_t = vhat(g, psi[0] * gt[..., 0, :, :, :] + psi[1] * gt[..., 1, :, :, :])
            src_t = src_t + vhat(g, psi[2] * dz(g, theta, BC.ROBIN_TOP))
            noise_t = noise_t + src_t * b[..., 0, :, :, :]
    dv = apply_ph(g, dt * drift_v + noise_v)
    dth = dt * drift_t + noise_t
    return dv, dth


def _vec_adv(grid, a, b):
    """(a . grad_H) b for horizontal vector fields."""
    gb = grad_h(grid, b)
    return a[..., 0:1, :, :, :] * gb[..., 0, :, :, :] + a[..., 1:2, :, :, :] * gb[..., 1, :, :, :]


def _rel(num, den):
    num = float(np.sqrt(np.sum(num)))
    den = float(np.sqrt(np.sum(den)))
    if den == 0.0:
        return num
    return num / den


def split_consistency(history, nm, forcing=None, linear=False) -> float:
    """Largest relative gap between the recorded increments of (vbar v, vhat theta)
    and one explicit Euler step of the averaged equations.

    ``history`` is a sequence of (state, dW) pairs where dW is the increment
    that carried that state to the next one.  The last dW may be None.
    """
    history = list(history)
    if len(history) < 2:
        raise MissingRecordError("need at least two consecutive states")
    g = nm.grid
    worst = 0.0
    for (s0, dW), (s1, _) in zip(history[:-1], history[1:]):
        if dW is None:
            raise MissingRecordError(f"no Brownian increment recorded at step {s0.step}")
        dt = s1.t - s0.t
        if not dt > 0:
            raise MissingRecordError("history times must increase")
        dv, dth = averaged_increments(nm, s0.v, s0.theta, dt, _increments(dW), forcing, linear)
        rec_v = vbar(g, s1.v) - vbar(g, s0.v)
        rec_t = vhat(g, s1.theta) - vhat(g, s0.theta)
        worst = max(worst,
                    _rel(l2_sq(g, rec_v - dv, True), l2_sq(g, rec_v, True)),
                    _rel(l2_sq(g, rec_t - dth), l2_sq(g, rec_t)))
    return worst


# -- records ---------------------------------------------------------------------------------

@dataclass
class DiagnosticsRecord:
    t: float
    l2_v: float
    l2_theta: float
    h1_v: float
    h1_theta: float
    h2_v: float
    h2_theta: float
    l4_theta: float
    l4_vtilde: float
    X: float
    Y: float
    div_residual: float
    cancel_residual: float
    split_residual: float
    blowup_flag: bool

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), allow_nan=True)

    @classmethod
    def zero(cls, t=0.0):
        vals = {f.name: 0.0 for f in fields(cls)}
        vals.update(t=float(t), blowup_flag=False)
        return cls(**vals)


def _finite(*xs):
    return all(math.isfinite(float(x)) for x in xs)


def record(state: SimState, nm, *, last: DiagnosticsRecord | None = None, blowup=False,
           ceiling=None, split_residual=0.0) -> DiagnosticsRecord:
    """One record of a single (unbatched) state.

    An invalid or non-finite state yields ``last`` (or zeros) with the
    blow-up flag set.  ``ceiling`` flags states whose H1 + H2 energy exceeds
    it, a one-shot version of the dynamics monitor.
    """
    g = nm.grid
    if not state.valid or not (np.all(np.isfinite(state.v)) and np.all(np.isfinite(state.theta))):
        base = last if last is not None else DiagnosticsRecord.zero()
        return DiagnosticsRecord(**{**base.to_dict(), "t": float(state.t), "blowup_flag": True})
    v, th = state.v, state.theta
    vals = dict(
        t=float(state.t),
        l2_v=float(l2_sq(g, v, True)),
        l2_theta=float(l2_sq(g, th)),
        h1_v=float(h1_sq(g, v, BC.NEUMANN, True)),
        h1_theta=float(h1_sq(g, th, BC.ROBIN_TOP)),
        h2_v=float(h2_sq(g, v, BC.NEUMANN, True)),
        h2_theta=float(h2_sq(g, th, BC.ROBIN_TOP)),
        l4_theta=float(lp(g, th, 4)),
        l4_vtilde=float(lp(g, vtilde(g, v), 4, vector=True)),
    )
    X, Y = energy_xy(g, state)
    vals["X"], vals["Y"] = float(X), float(Y)
    vals["div_residual"] = divergence_residual(g, v)
    try:
        vals["cancel_residual"] = float(cancellation_residual(g, (v, None), v, th, 2, tol_div=1e-6))
    except PreconditionError:
        vals["cancel_residual"] = float("nan")
    vals["split_residual"] = float(split_residual)
    flag = bool(blowup)
    if ceiling is not None:
        flag = flag or vals["h1_v"] + vals["h1_theta"] + vals["h2_v"] + vals["h2_theta"] > ceiling
    finite = _finite(*[x for k, x in vals.items() if k != "cancel_residual"])
    if not finite:
        base = last if last is not None else DiagnosticsRecord.zero()
        return DiagnosticsRecord(**{**base.to_dict(), "t": float(state.t), "blowup_flag": True})
    return DiagnosticsRecord(**vals, blowup_flag=flag)


def split_energy_gap(grid: Grid, v) -> float:
    """||v||^2 - (||vbar||^2 + ||vtilde||^2), all over the slab."""
    vb = vbar(grid, v)
    return float(l2_sq(grid, v, True) - l2_sq(grid, vb, True) - l2_sq(grid, v - vb, True))


__all__ = [
    "DiagnosticsRecord", "MissingRecordError", "PreconditionError", "X_TERMS", "Y_TERMS",
    "averaged_increments", "cancellation_parts", "cancellation_residual", "energy_terms",
    "energy_xy", "extended_terms", "hat_w_dtheta", "record", "split_consistency",
    "split_energy_gap", "vhat_identity_residual",
]
