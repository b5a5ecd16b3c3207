import numpy as np
import pytest

from hydrostoch.domain import BC, Grid, as_field, div_h, dz, grad_h, inner, vbar
from hydrostoch.projection import (apply_p, apply_ph, apply_q, apply_qh, divergence_residual,
                                   potential)


@pytest.fixture(scope="module")
def g():
    return Grid(16, 16, 9)


def band_limited(grid, rng, kmax=5):
    X1, X2, Z = grid.mesh()
    zeta = (Z + grid.h) / grid.h
    out = np.zeros((2,) + grid.shape)
    for c in range(2):
        for _ in range(6):
            k1, k2 = rng.integers(-kmax, kmax + 1, 2)
            a, b = rng.standard_normal(2)
            out[c] += (a * np.cos(k1 * X1 + k2 * X2) + b * np.sin(k1 * X1 + k2 * X2)) \
                * np.cos(rng.integers(0, 3) * np.pi * zeta)
    return out


def test_qh_examples(g):
    X1, X2, Z = g.mesh()
    assert np.abs(apply_qh(g, as_field(g, np.sin(X2), 0 * X1))).max() < 1e-14
    u = as_field(g, np.cos(X1), 0 * X1)
    assert np.abs(apply_qh(g, u) - u).max() < 1e-14
    s = np.sin(X1 + X2)
    u = as_field(g, s, 0 * X1)
    assert np.abs(apply_qh(g, u) - as_field(g, s / 2, s / 2)).max() < 1e-12
    assert np.abs(apply_ph(g, u) - as_field(g, s / 2, -s / 2)).max() < 1e-12


def test_ph_properties(g):
    rng = np.random.default_rng(0)
    u = band_limited(g, rng)
    pu = apply_ph(g, u)
    assert np.abs(div_h(g, pu)).max() < 1e-12
    assert np.abs(apply_ph(g, pu) - pu).max() < 1e-12
    X1 = g.mesh()[0]
    grad = grad_h(g, as_field(g, np.sin(2 * X1)))
    assert np.abs(apply_ph(g, grad)).max() < 1e-13


def test_qh_curl_free(g):
    rng = np.random.default_rng(1)
    q = apply_qh(g, band_limited(g, rng))
    Q = np.fft.rfft2(q, axes=(-3, -2))
    curl = g.k1d * Q[1] - g.k2d * Q[0]
    assert np.abs(curl).max() < 1e-10


def test_potential_mean_free(g):
    rng = np.random.default_rng(2)
    u = band_limited(g, rng)
    psi = potential(g, u)
    assert abs(psi.mean(axis=(0, 1))).max() < 1e-13
    assert np.abs(grad_h(g, psi) - apply_qh(g, u)).max() < 1e-12


def test_p_examples(g):
    X1, X2, Z = g.mesh()
    zeta = (Z + 1)
    baroclinic = as_field(g, np.sin(X1) * np.cos(np.pi * zeta), np.cos(X2) * np.cos(2 * np.pi * zeta))
    baroclinic = baroclinic - vbar(g, baroclinic)
    assert np.abs(apply_p(g, baroclinic) - baroclinic).max() < 1e-14
    s = np.sin(X1 + X2)
    u = as_field(g, s, 0 * Z)
    assert np.abs(apply_p(g, u) - (u - as_field(g, s / 2, s / 2))).max() < 1e-12


def test_p_properties(g):
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = band_limited(g, rng)
        pu, qu = apply_p(g, u), apply_q(g, u)
        assert np.abs(apply_p(g, pu) - pu).max() < 1e-12
        assert abs(inner(g, pu, qu, vector=True)) < 1e-11
        assert divergence_residual(g, pu) < 1e-12
        # the removed part is x3-independent, so vertical derivatives commute
        assert np.abs(dz(g, pu, BC.NEUMANN) - dz(g, u, BC.NEUMANN)).max() < 1e-12
        assert qu.shape[-1] == 1


def test_p_kills_surface_gradients(g):
    X1, X2, _ = g.mesh()
    p = as_field(g, np.cos(X1) * np.sin(2 * X2))
    assert np.abs(apply_p(g, grad_h(g, p))).max() < 1e-13


def test_batch(g):
    rng = np.random.default_rng(4)
    u = np.stack([band_limited(g, rng) for _ in range(3)])
    out = apply_p(g, u)
    for i in range(3):
        assert np.allclose(out[i], apply_p(g, u[i]))
