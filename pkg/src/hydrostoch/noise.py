"""Transport-noise coefficients, their validation, Brownian increments and the
Stratonovich-to-Ito conversion.

Coefficient layout (N noise modes, full grid arrays):

    phi, psi : (N, 3, n1, n2, n3)   transport vectors for v and theta
    sigma    : (N, n1, n2, n3)      turbulent-pressure coupling
    kappa    : (n1, n2, n3)         hydrostatic coupling
    gamma    : (N, 2, 2, n1, n2, n3) pressure feedback, gamma[n, i, j]
    pi       : (3, n1, n2, n3)      transport of theta inside the P balance

The horizontal parts of phi, psi and all of sigma, gamma, pi[:2] must not
depend on x3.  The vertical components phi[:, 2], psi[:, 2] may.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .domain import BC, Grid, dz, grad_h, to_physical, to_spectral, vint
from .projection import apply_p, apply_q

X3_TOL = 1e-12
TRACE_TOL = 1e-12


class NoiseValidationError(ValueError):
    pass


class AssumptionError(ValueError):
    pass


# -- model --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NoiseModel:
    grid: Grid
    phi: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray
    pi: np.ndarray
    converted: bool = False  # True once strat_to_ito has filled gamma and pi

    @property
    def N(self) -> int:
        return self.phi.shape[0]

    @cached_property
    def active(self):
        """Per-mode flags (phi, psi, sigma) marking coefficients that are not identically 0."""
        def flags(a):
            return [bool(np.any(a[n])) for n in range(self.N)]
        return flags(self.phi), flags(self.psi), flags(self.sigma)

    @cached_property
    def report(self) -> "ValidationReport":
        return validate(self)

    def require_valid(self):
        rep = self.report
        if not rep.ok:
            raise NoiseValidationError("noise model failed validation: " + "; ".join(rep.violations))


def _full(grid, arr, lead, name):
    shape = lead + grid.shape
    if arr is None:
        return np.zeros(shape)
    a = np.asarray(arr, dtype=float)
    try:
        out = np.broadcast_to(a, shape).copy()
    except ValueError:
        raise NoiseValidationError(f"{name}: cannot broadcast shape {a.shape} to {shape}") from None
    out.setflags(write=False)
    return out


def make_noise_model(grid: Grid, phi=None, psi=None, sigma=None, kappa=None,
                     gamma=None, pi=None, N=None, converted=False) -> NoiseModel:
    """Build a model, broadcasting constants and slabs to full grid arrays.

    ``N`` is inferred from the first non-empty family when not given.
    """
    if N is None:
        N = 0
        for a, core in ((phi, 4), (psi, 4), (sigma, 3), (gamma, 5)):
            if a is not None and np.ndim(a) > core:
                N = max(N, np.shape(a)[0])
    return NoiseModel(
        grid=grid,
        phi=_full(grid, phi, (N, 3), "phi"),
        psi=_full(grid, psi, (N, 3), "psi"),
        sigma=_full(grid, sigma, (N,), "sigma"),
        kappa=_full(grid, kappa, (), "kappa"),
        gamma=_full(grid, gamma, (N, 2, 2), "gamma"),
        pi=_full(grid, pi, (3,), "pi"),
        converted=converted,
    )


def constant_vector(grid: Grid, c) -> np.ndarray:
    """A constant 3-vector field, shape (3, n1, n2, n3)."""
    return np.broadcast_to(np.asarray(c, float)[:, None, None, None], (3,) + grid.shape).copy()


# -- parabolicity -------------------------------------------------------------

def gram_lambda_max(coeffs) -> np.ndarray:
    """Largest eigenvalue of sum_n c_n c_n^T at each grid point.

    ``coeffs`` has shape (N, 3, ...).  Uses the trigonometric closed form for
    symmetric 3x3 matrices.  When the two largest eigenvalues nearly coincide
    that form loses half the digits, so there the smallest (well separated)
    eigenvector is recovered and the top pair is read off the exact 2x2
    problem on its orthogonal complement.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.shape[0] == 0:
        return np.zeros(c.shape[2:])
    G = np.einsum("ni...,nj...->ij...", c, c)
    a11, a22, a33 = G[0, 0], G[1, 1], G[2, 2]
    a12, a13, a23 = G[0, 1], G[0, 2], G[1, 2]
    q = (a11 + a22 + a33) / 3.0
    off = a12 ** 2 + a13 ** 2 + a23 ** 2
    p2 = (a11 - q) ** 2 + (a22 - q) ** 2 + (a33 - q) ** 2 + 2.0 * off
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    b11, b22, b33 = (a11 - q) / safe, (a22 - q) / safe, (a33 - q) / safe
    b12, b13, b23 = a12 / safe, a13 / safe, a23 / safe
    detb = (b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
            + b13 * (b12 * b23 - b22 * b13))
    r = np.clip(0.5 * detb, -1.0, 1.0)
    ang = np.arccos(r) / 3.0
    lam = np.where(p > 0, q + 2.0 * p * np.cos(ang), q)
    close = (p > 0) & (r < -0.5)
    if np.any(close):
        lam_min = q + 2.0 * p * np.cos(ang + 2.0 * np.pi / 3.0)
        lam = np.where(close, _top_pair_max(G, lam_min), lam)
    return lam


def _top_pair_max(G, lam_min):
    """Largest eigenvalue from the complement of the lam_min eigenvector."""
    M = G - lam_min * np.eye(3).reshape((3, 3) + (1,) * (G.ndim - 2))
    rows = [M[0], M[1], M[2]]
    crosses = [np.cross(rows[0], rows[1], axis=0), np.cross(rows[0], rows[2], axis=0),
               np.cross(rows[1], rows[2], axis=0)]
    norms = np.stack([np.sum(x * x, axis=0) for x in crosses])
    pick = np.argmax(norms, axis=0)
    e = np.choose(pick[None], crosses)
    e = e / np.sqrt(np.maximum(np.sum(e * e, axis=0), 1e-300))
    # a helper axis least aligned with e, then an orthonormal pair (a, b)
    axis = np.argmin(np.abs(e), axis=0)
    t = np.zeros_like(e)
    np.put_along_axis(t, axis[None], 1.0, axis=0)
    a = np.cross(e, t, axis=0)
    a = a / np.sqrt(np.maximum(np.sum(a * a, axis=0), 1e-300))
    b = np.cross(e, a, axis=0)
    Ga = np.einsum("ij...,j...->i...", G, a)
    Gb = np.einsum("ij...,j...->i...", G, b)
    m11 = np.sum(a * Ga, axis=0)
    m22 = np.sum(b * Gb, axis=0)
    m12 = np.sum(a * Gb, axis=0)
    return 0.5 * (m11 + m22) + np.hypot(0.5 * (m11 - m22), m12)


@dataclass
class ValidationReport:
    nu_phi: float
    nu_psi: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"nu_phi": self.nu_phi, "nu_psi": self.nu_psi,
                "violations": list(self.violations), "ok": self.ok}


def _x3_spread(a) -> float:
    a = np.asarray(a)
    if a.size == 0 or a.shape[-1] == 1:
        return 0.0
    return float(np.max(np.abs(a - a[..., :1])))


def validate(nm: NoiseModel) -> ValidationReport:
    violations = []
    for name in ("phi", "psi", "sigma", "kappa", "gamma", "pi"):
        if not np.all(np.isfinite(getattr(nm, name))):
            violations.append(f"{name} has non-finite entries")
    if violations:
        return ValidationReport(float("nan"), float("nan"), violations)

    nu_phi = float(np.max(gram_lambda_max(nm.phi))) if nm.N else 0.0
    nu_psi = float(np.max(gram_lambda_max(nm.psi))) if nm.N else 0.0
    if nu_phi >= 2.0:
        violations.append(f"parabolicity fails for phi: nu = {nu_phi:.6g} >= 2")
    if nu_psi >= 2.0:
        violations.append(f"parabolicity fails for psi: nu = {nu_psi:.6g} >= 2")

    constrained = {
        "phi[1:2]": nm.phi[:, :2], "psi[1:2]": nm.psi[:, :2], "sigma": nm.sigma,
        "gamma": nm.gamma, "pi[1:2]": nm.pi[:2],
    }
    for name, arr in constrained.items():
        spread = _x3_spread(arr)
        if spread > X3_TOL:
            violations.append(f"{name} depends on x3 (max deviation {spread:.3g})")
    return ValidationReport(nu_phi, nu_psi, violations)


# -- Brownian increments ------------------------------------------------------

@dataclass
class BrownianIncrements:
    dW: np.ndarray
    dt: float


_U64 = (1 << 64) - 1


class BrownianStream:
    """Counter-based normal draws for one path.

    Step ``s`` always reads the same Philox blocks, so draws depend only on
    (seed, path, step).  Sequential access reuses the generator; a jump
    rebuilds it at the right counter.
    """

    def __init__(self, seed: int, path: int, n_noise: int, step: int = 0):
        self.seed = int(seed) & _U64
        self.path = int(path) & _U64
        self.n = int(n_noise)
        self.step = int(step)
        self._per_step = 2 * (-(-self.n // 2))  # Box-Muller consumes pairs
        self._blocks = -(-self._per_step // 4)
        self._bitgen = None
        self._next = None

    def normals(self, step: int) -> np.ndarray:
        """N standard normals for ``step``."""
        return self.normals_block(step, 1)[0]

    def normals_block(self, step: int, count: int) -> np.ndarray:
        """(count, N) normals for steps step .. step+count-1 in one draw.

        Steps occupy consecutive counter blocks, so this is identical to
        ``count`` calls of ``normals``.
        """
        if self.n == 0:
            return np.zeros((count, 0))
        if self._bitgen is None or self._next != step:
            self._bitgen = np.random.Philox(key=[self.seed, self.path],
                                            counter=[step * self._blocks, 0, 0, 0])
        raw = self._bitgen.random_raw(4 * self._blocks * count).reshape(count, -1)
        raw = raw[:, : self._per_step]
        self._next = step + count
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        ang = 2.0 * np.pi * u[:, 1::2]
        z = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1).reshape(count, -1)
        return z[:, : self.n]


def sample_increments(stream: BrownianStream, dt: float) -> BrownianIncrements:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = stream.normals(stream.step)
    stream.step += 1
    return BrownianIncrements(np.sqrt(dt) * z, dt)


def batch_increments(streams, step: int, dt: float, count: int = 1) -> np.ndarray:
    """(count, paths, N) increments for ``count`` steps, one stream per path."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    z = np.stack([s.normals_block(step, count) for s in streams], axis=1)
    return np.sqrt(dt) * z


# -- transport operators ------------------------------------------------------

def _horizontally_constant(c):
    return all(np.all(c[j] == c[j].flat[0]) for j in (0, 1))


def transport_vector(grid: Grid, c, v):
    """(c . grad) v for a horizontal vector field v (Neumann in z)."""
    if _horizontally_constant(c):
        # constant horizontal part: one spectral directional derivative
        sym = 1j * (c[0].flat[0] * grid.k1d + c[1].flat[0] * grid.k2d)
        out = to_physical(grid, sym * to_spectral(v))
    else:
        gv = grad_h(grid, v)
        out = c[0] * gv[..., 0, :, :, :] + c[1] * gv[..., 1, :, :, :]
    if np.any(c[2]):
        out = out + c[2] * dz(grid, v, BC.NEUMANN)
    return out


def transport_scalar(grid: Grid, c, f, bc=BC.ROBIN_TOP):
    g = grad_h(grid, f)
    return c[0] * g[..., 0, :, :, :] + c[1] * g[..., 1, :, :, :] + c[2] * dz(grid, f, bc)


def hydrostatic_gradient(grid: Grid, f):
    """grad_H of the vertical antiderivative of f."""
    return grad_h(grid, vint(grid, f))


def transport_source(nm: NoiseModel, v, theta, n: int):
    """Unprojected velocity noise coefficient for mode n."""
    g = nm.grid
    a_phi, _, a_sig = nm.active
    out = np.zeros(np.broadcast_shapes(np.shape(v), (2,) + g.shape))
    if a_phi[n]:
        out = out + transport_vector(g, nm.phi[n], v)
    if a_sig[n]:
        out = out + hydrostatic_gradient(g, nm.sigma[n] * theta)
    return out


def noise_operator(nm: NoiseModel, v, theta, n: int):
    """Coefficient of dW_n in the (v, theta) equations."""
    g = nm.grid
    bv = apply_p(g, transport_source(nm, v, theta, n))
    if nm.active[1][n]:
        bt = transport_scalar(g, nm.psi[n], theta)
    else:
        bt = np.zeros(np.broadcast_shapes(np.shape(theta), g.shape))
    return bv, bt


def _dw_column(dW, n, extra_axes):
    col = np.asarray(dW)[..., n]
    return col.reshape(col.shape + (1,) * extra_axes)


def noise_sum(nm: NoiseModel, v, theta, dW, project=True):
    """sum_n (X_n, Y_n) dW_n; the velocity sources are projected when ``project``."""
    g = nm.grid
    dW = np.asarray(dW, float)
    dv = np.zeros(np.broadcast_shapes(np.shape(v), dW.shape[:-1] + (2,) + g.shape))
    dth = np.zeros(np.broadcast_shapes(np.shape(theta), dW.shape[:-1] + g.shape))
    _, a_psi, _ = nm.active
    for n in range(nm.N):
        dv += transport_source(nm, v, theta, n) * _dw_column(dW, n, 4)
        if a_psi[n]:
            dth += transport_scalar(g, nm.psi[n], theta) * _dw_column(dW, n, 3)
    if project:
        dv = apply_p(g, dv)
    return dv, dth


def apply_diffusion(nm: NoiseModel, v, theta, dW):
    """Sum over modes of the noise coefficients times dW.

    ``dW`` is a BrownianIncrements or an array whose last axis has length N and
    whose leading axes match the batch axes of the state.
    """
    nm.require_valid()
    if isinstance(dW, BrownianIncrements):
        dW = dW.dW
    return noise_sum(nm, v, theta, dW, project=True)


# -- Ito-form lower-order terms -----------------------------------------------

def gamma_feedback(nm: NoiseModel, v, theta):
    """sum_n sum_i gamma_n[k, i] (Q X_n)^i with X_n the velocity noise source."""
    g = nm.grid
    out = np.zeros(np.broadcast_shapes(np.shape(v), (2,) + g.shape))
    for n in range(nm.N):
        gam = nm.gamma[n]
        if not np.any(gam):
            continue
        qx = apply_q(g, transport_source(nm, v, theta, n))
        out = out + _contract(gam, qx)
    return out


def _contract(gam, qx):
    # gam: (2, 2, n1, n2, n3); qx: (..., 2, n1, n2, 1)
    q0 = qx[..., 0, :, :, :]
    q1 = qx[..., 1, :, :, :]
    return np.stack([gam[0, 0] * q0 + gam[0, 1] * q1, gam[1, 0] * q0 + gam[1, 1] * q1], axis=-4)


def pressure_coupling(nm: NoiseModel, theta):
    """grad_H int (kappa theta + (pi . grad) theta)."""
    g = nm.grid
    src = nm.kappa * theta
    if np.any(nm.pi):
        src = src + transport_scalar(g, nm.pi, theta)
    return hydrostatic_gradient(g, src)


# -- Stratonovich to Ito --------------------------------------------------------

def strat_to_ito(nm: NoiseModel) -> NoiseModel:
    """Fill (pi, gamma) from (phi, psi, sigma) and mark the model converted.

    The remaining correction terms are produced by ``ito_correction``.
    """
    if not nm.converted and (np.any(nm.gamma) or np.any(nm.pi)):
        raise AssumptionError("strat_to_ito expects a model without user-supplied gamma/pi")
    g = nm.grid
    if nm.N:
        trace = max(np.max(np.abs(nm.phi[:, 2, :, :, 0])), np.max(np.abs(nm.phi[:, 2, :, :, -1])))
        if trace > TRACE_TOL:
            raise AssumptionError(f"phi^3 must vanish at z = -h and z = 0 (trace {trace:.3g})")
    pi = np.zeros((3,) + g.shape)
    gamma = np.zeros((nm.N, 2, 2) + g.shape)
    for n in range(nm.N):
        s = nm.sigma[n]
        pi[:2] += 0.5 * s * (nm.psi[n, :2] + nm.phi[n, :2])
        pi[2] += 0.5 * s * nm.psi[n, 2]
        # grad_h(phi_H)[j, i] = d_i phi^j; store gamma[i, j] = d_i phi^j / 2
        gamma[n] = 0.5 * np.swapaxes(grad_h(g, nm.phi[n, :2]), 0, 1)
    return replace(nm, gamma=_full(g, gamma, (nm.N, 2, 2), "gamma"),
                   pi=_full(g, pi, (3,), "pi"), converted=True)


def correction_operator_v(nm: NoiseModel, v):
    """L_phi v = 1/2 sum_n (phi_n . grad)(phi_n . grad) v."""
    g = nm.grid
    out = np.zeros(np.broadcast_shapes(np.shape(v), (2,) + g.shape))
    for n in range(nm.N):
        out = out + 0.5 * transport_vector(g, nm.phi[n], transport_vector(g, nm.phi[n], v))
    return out


def correction_operator_theta(nm: NoiseModel, theta):
    g = nm.grid
    out = np.zeros(np.broadcast_shapes(np.shape(theta), g.shape))
    for n in range(nm.N):
        out = out + 0.5 * transport_scalar(g, nm.psi[n], transport_scalar(g, nm.psi[n], theta))
    return out


def ito_correction(nm: NoiseModel, v, theta):
    """Stratonovich correction terms not already carried by (pi, gamma).

    Returns the unprojected velocity part and the temperature part:

        L_phi v + 1/2 sum_n phi_n^3 d_z J(sigma_n theta)
                + 1/2 sum_n [(phi_H . grad_H) J(sigma_n theta) - J(sigma_n (phi_H . grad_H) theta)]
        L_psi theta

    where J f = grad_H of the vertical antiderivative of f.  Together with the
    pi and gamma terms this equals 1/2 sum_n B_n(B_n U) exactly.
    """
    g = nm.grid
    cv = correction_operator_v(nm, v)
    for n in range(nm.N):
        s = nm.sigma[n]
        if not np.any(s):
            continue
        ph = nm.phi[n]
        j = hydrostatic_gradient(g, s * theta)
        cv = cv + 0.5 * ph[2] * dz(g, j, BC.NEUMANN)
        hor = np.stack([ph[0], ph[1], np.zeros_like(ph[2])])
        comm = transport_vector(g, hor, j) - hydrostatic_gradient(
            g, s * transport_scalar(g, hor, theta))
        cv = cv + 0.5 * comm
    return cv, correction_operator_theta(nm, theta)
