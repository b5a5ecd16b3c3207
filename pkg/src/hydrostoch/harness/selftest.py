"""Fast invariant checks behind ``hydrostoch selftest``."""
from __future__ import annotations

import numpy as np

from ..diagnostics import split_energy_gap, vhat_identity_residual
from ..domain import Grid, as_field, div_h, grad_h, inner
from ..dynamics import explicit_terms
from ..noise import gram_lambda_max, make_noise_model, noise_operator, strat_to_ito
from ..projection import apply_p, apply_ph, apply_q, apply_qh, divergence_residual


def _band_limited(grid, rng, shape, kmax=4):
    X1, X2, Z = grid.mesh()
    zeta = (Z + grid.h) / grid.h
    out = np.zeros(shape + grid.shape)
    for idx in np.ndindex(*shape):
        for _ in range(6):
            k1, k2 = rng.integers(-kmax, kmax + 1, 2)
            m = rng.integers(0, 3)
            a, b = rng.standard_normal(2)
            ph = k1 * X1 + k2 * X2
            out[idx] += (a * np.cos(ph) + b * np.sin(ph)) * np.cos(m * np.pi * zeta)
    return out


def check_projections(grid, rng):
    u = _band_limited(grid, rng, (2,))
    pu = apply_p(grid, u)
    worst = max(
        float(np.abs(apply_p(grid, pu) - pu).max()),
        float(np.abs(apply_ph(grid, apply_ph(grid, u)) - apply_ph(grid, u)).max()),
        abs(float(inner(grid, pu, apply_q(grid, u), vector=True))),
        abs(float(inner(grid, apply_ph(grid, u), apply_qh(grid, u), vector=True))),
        divergence_residual(grid, pu),
    )
    return worst < 1e-11, worst


def check_adjoint(grid, rng):
    f = _band_limited(grid, rng, ())
    u = _band_limited(grid, rng, (2,))
    gap = abs(float(inner(grid, grad_h(grid, f), u, vector=True) + inner(grid, f, div_h(grid, u))))
    return gap < 1e-10, gap


def check_gram(grid, rng):
    coeffs = rng.standard_normal((4, 3, 5, 5, 1))
    lam = gram_lambda_max(coeffs)
    G = np.einsum("nixyz,njxyz->xyzij", coeffs, coeffs)
    ref = np.linalg.eigvalsh(G)[..., -1]
    err = float(np.abs(lam - ref).max())
    return err < 1e-10, err


def check_strat(grid, rng):
    X1, X2, Z = grid.mesh()
    zeta = (Z + grid.h) / grid.h
    F = lambda *c: as_field(grid, *c)
    phi = np.stack([F(0.3 * np.sin(X2) + 0.1, 0.2 * np.cos(X1), 0.2 * np.sin(np.pi * zeta) * np.cos(X1 + X2)),
                    F(0.1 * np.cos(X1 + X2), 0.25, 0)])
    psi = np.stack([F(0.2, 0.1 * np.sin(X1), 0.1 * np.sin(np.pi * zeta)), F(0.1, 0.05, 0)])
    sig = np.stack([F(0.5 * np.cos(X1)), F(0.3)])
    nm = make_noise_model(grid, phi=phi, psi=psi, sigma=sig)
    v = apply_p(grid, F(np.sin(X2) * np.cos(np.pi * zeta), np.cos(X1) + 0.3 * np.sin(X1 + X2) * np.cos(np.pi * zeta)))
    th = F(np.cos(X1) * np.cos(np.pi * zeta) + 0.2 * np.sin(X2))
    ev0, et0 = explicit_terms(nm, v, th, linear=True)
    ev1, et1 = explicit_terms(strat_to_ito(nm), v, th, linear=True)
    bv, bt = np.zeros_like(v), np.zeros_like(th)
    for n in range(nm.N):
        a, b = noise_operator(nm, v, th, n)
        c, d = noise_operator(nm, a, b, n)
        bv += 0.5 * c
        bt += 0.5 * d
    err = max(float(np.abs(apply_p(grid, ev1 - ev0) - bv).max()), float(np.abs(et1 - et0 - bt).max()))
    return err < 1e-8, err


def check_split(grid, rng):
    v = apply_p(grid, _band_limited(grid, rng, (2,)))
    gap = abs(split_energy_gap(grid, v))
    return gap < 1e-10, gap


def check_hat_identity(grid, rng):
    X1, X2, Z = grid.mesh()
    res = []
    for n3 in (17, 33):
        g = Grid(grid.n1, grid.n2, n3, grid.h)
        X1, X2, Z = g.mesh()
        c = np.cos(np.pi * (Z + g.h) / g.h)
        v = apply_p(g, as_field(g, np.sin(X2) + c * np.cos(X1) * np.sin(X2), np.cos(X1) + c * np.sin(X1 + X2)))
        th = as_field(g, np.cos(X1) * (1 + Z ** 2) + np.sin(X2) * c)
        res.append(vhat_identity_residual(g, v, th))
    order = float(np.log2(res[0] / res[1]))
    return order > 1.9, order


CHECKS = {
    "projection idempotence/orthogonality": check_projections,
    "div/grad adjointness": check_adjoint,
    "gram eigenvalue closed form": check_gram,
    "stratonovich correction = half double application": check_strat,
    "barotropic/baroclinic energy split": check_split,
    "weighted-average identity order": check_hat_identity,
}


def run_selftest(seed=0, out=print):
    rng = np.random.default_rng(seed)
    grid = Grid(16, 16, 9)
    ok_all = True
    for name, fn in CHECKS.items():
        ok, detail = fn(grid, rng)
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail:.3g})")
    return ok_all
