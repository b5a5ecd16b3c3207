import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrostoch.domain import (BC, FieldError, Grid, as_field, d2z, div_h, dz, grad_h, inner,
                               integrate, laplacian, laplacian_h, vbar, vhat, vint, vtilde)


@pytest.fixture(scope="module")
def g():
    return Grid(16, 16, 9)


def rand_field(grid, rng, shape=()):
    X1, X2, Z = grid.mesh()
    out = np.zeros(shape + grid.shape)
    for idx in np.ndindex(*shape) if shape else [()]:
        for _ in range(4):
            k1, k2 = rng.integers(-4, 5, 2)
            a, b, c = rng.standard_normal(3)
            out[idx] += (a * np.cos(k1 * X1 + k2 * X2) + b * np.sin(k1 * X1 + k2 * X2)) * (1 + c * Z)
    return out


def test_grid_validation():
    for bad in [dict(n1=5, n2=8, n3=5), dict(n1=2, n2=8, n3=5), dict(n1=8, n2=8, n3=3),
                dict(n1=8, n2=8, n3=5, h=0.0), dict(n1=8, n2=8, n3=5, h=-1.0)]:
        with pytest.raises(FieldError):
            Grid(**bad)


def test_grid_nodes():
    g = Grid(8, 8, 7, h=2.5)
    assert g.z[0] == -2.5 and g.z[-1] == 0.0
    assert np.allclose(np.diff(g.z), g.dz)
    assert g.dz * (g.n3 - 1) == pytest.approx(g.h, abs=0, rel=1e-15)
    assert g.weights.sum() == pytest.approx(g.h)


def test_grad_examples(g):
    X1, X2, Z = g.mesh()
    assert np.allclose(grad_h(g, as_field(g, np.sin(X1))), as_field(g, np.cos(X1), 0 * X1), atol=1e-13)
    assert np.abs(grad_h(g, as_field(g, 3.0))).max() < 1e-14
    f = as_field(g, np.sin(X1 + X2) * Z)
    ref = as_field(g, np.cos(X1 + X2) * Z, np.cos(X1 + X2) * Z)
    assert np.abs(grad_h(g, f) - ref).max() < 1e-12


def test_grad_rejects_nonfinite(g):
    f = np.zeros(g.shape)
    f[0, 0, 0] = np.nan
    with pytest.raises(FieldError):
        grad_h(g, f)


def test_div_examples(g):
    X1, X2, Z = g.mesh()
    assert np.abs(div_h(g, as_field(g, np.sin(X2), 0 * X1))).max() < 1e-13
    s = as_field(g, np.sin(X1 + X2))
    assert np.abs(div_h(g, grad_h(g, s)) + 2 * s).max() < 1e-12
    u = as_field(g, np.cos(X1), np.cos(X2))
    assert np.abs(div_h(g, u) - as_field(g, -np.sin(X1) - np.sin(X2))).max() < 1e-12
    with pytest.raises(FieldError):
        div_h(g, np.zeros(g.shape))


def test_adjointness(g):
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = rng.standard_normal(g.shape)
        u = rng.standard_normal((2,) + g.shape)
        lhs = inner(g, div_h(g, u), f)
        rhs = -inner(g, u, grad_h(g, f), vector=True)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_dz_constant_and_cosine():
    errs = []
    for n3 in (9, 17, 33):
        g = Grid(8, 8, n3)
        X1, X2, Z = g.mesh()
        assert np.abs(dz(g, as_field(g, 2.0), BC.NEUMANN)).max() == 0
        f = as_field(g, np.cos(np.pi * (Z + g.h) / g.h))
        ref = as_field(g, -(np.pi / g.h) * np.sin(np.pi * (Z + g.h) / g.h))
        errs.append(np.abs(dz(g, f, BC.NEUMANN) - ref)[..., 1:-1].max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() > 1.9


def test_dz_linear_profile_top_derivative():
    # no boundary condition is imposed on a linear profile, so it needs the
    # one-sided stencils; the Neumann-type ghosts would force 0 at the ends
    g = Grid(8, 8, 9, alpha=0.0)
    X1, X2, Z = g.mesh()
    f = as_field(g, Z + g.h)
    d = dz(g, f, BC.INTERIOR)
    assert np.abs(d - 1).max() < 1e-12
    assert np.abs(dz(g, f, BC.ROBIN_TOP)[..., -1]).max() < 1e-12


def test_robin_ghost():
    g = Grid(4, 4, 6, alpha=0.7)
    f = np.random.default_rng(0).standard_normal(g.shape)
    d = dz(g, f, BC.ROBIN_TOP)
    ghost = f[..., -2] - 2 * g.dz * g.alpha * f[..., -1]
    assert np.allclose(d[..., -1], (ghost - f[..., -2]) / (2 * g.dz))
    assert np.allclose(d[..., 0], 0)


def test_unknown_bc(g):
    with pytest.raises(FieldError):
        dz(g, np.zeros(g.shape), "dirichlet")


def test_laplacian_examples():
    errs = []
    for n3 in (9, 17, 33):
        g = Grid(8, 8, n3)
        X1, X2, Z = g.mesh()
        s = as_field(g, np.sin(X1))
        assert np.abs(laplacian(g, s, BC.NEUMANN) + s).max() < 1e-13
        assert np.abs(laplacian(g, as_field(g, 1.5), BC.NEUMANN)).max() < 1e-13
        f = as_field(g, np.cos(np.pi * (Z + g.h) / g.h))
        errs.append(np.abs(laplacian(g, f, BC.NEUMANN) + (np.pi / g.h) ** 2 * f).max())
    assert min(np.log2(np.array(errs[:-1]) / errs[1:])) > 1.9


def test_laplacian_z_independent_equals_spectral(g):
    rng = np.random.default_rng(2)
    f = np.repeat(rng.standard_normal((16, 16, 1)), g.n3, axis=-1)
    assert np.abs(laplacian(g, f, BC.NEUMANN) - laplacian_h(g, f)).max() < 1e-13


def test_vertical_averages():
    g = Grid(8, 8, 9)
    X1, X2, Z = g.mesh()
    assert np.allclose(vbar(g, as_field(g, 2.5)), 2.5)
    assert np.allclose(vbar(g, as_field(g, Z + g.h)), 0.5, atol=1e-15)
    errs = []
    for n3 in (9, 17, 33):
        gg = Grid(8, 8, n3)
        Zz = gg.mesh()[2]
        errs.append(np.abs(vbar(gg, as_field(gg, np.exp(Zz))) - (1 - np.exp(-1))).max())
    assert errs[-1] < 1e-3 and min(np.log2(np.array(errs[:-1]) / errs[1:])) > 1.9
    assert np.allclose(vhat(g, as_field(g, 3.0)), -1.5)
    assert np.allclose(vint(g, as_field(g, 2.0)), as_field(g, 2.0 * (Z + g.h)), atol=1e-14)


def test_vhat_depth():
    g = Grid(8, 8, 9, h=2.0)
    assert np.allclose(vhat(g, as_field(g, 3.0)), -3.0 * g.h / 2)


def test_vertical_identities(g):
    rng = np.random.default_rng(3)
    f = rand_field(g, rng)
    assert np.abs(vbar(g, vtilde(g, f))).max() < 1e-12
    assert np.allclose(vbar(g, vbar(g, f)), vbar(g, f))
    assert np.abs(vint(g, f)[..., 0]).max() == 0
    # derivative of the antiderivative recovers f in the interior at O(dz^2)
    errs = []
    for n3 in (9, 17, 33):
        gg = Grid(8, 8, n3)
        X1, X2, Z = gg.mesh()
        ff = as_field(gg, np.cos(X1) * np.cos(2 * Z))
        errs.append(np.abs(dz(gg, vint(gg, ff), BC.INTERIOR) - ff)[..., 1:-1].max())
    assert min(np.log2(np.array(errs[:-1]) / errs[1:])) > 1.9


def test_slab_conventions(g):
    s = np.random.default_rng(4).standard_normal((16, 16, 1))
    full = np.repeat(s, g.n3, axis=-1)
    assert np.allclose(vbar(g, s), vbar(g, full))
    assert np.allclose(vhat(g, s), vhat(g, full))
    assert np.allclose(vint(g, s), vint(g, full))
    assert np.isclose(integrate(g, s), integrate(g, full))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2 ** 16))
def test_linearity(a, b, seed):
    g = Grid(8, 8, 5, alpha=0.4)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal((2,) + g.shape)
    u, w = rng.standard_normal((2, 2) + g.shape)
    for op in (lambda x: grad_h(g, x), lambda x: dz(g, x, BC.ROBIN_TOP), lambda x: d2z(g, x, BC.NEUMANN),
               lambda x: laplacian(g, x, BC.ROBIN_TOP), lambda x: vbar(g, x), lambda x: vhat(g, x),
               lambda x: vint(g, x)):
        assert np.abs(op(a * f + b * h) - a * op(f) - b * op(h)).max() < 1e-12 * (1 + np.abs(op(f)).max() + np.abs(op(h)).max()) * 10
    assert np.abs(div_h(g, a * u + b * w) - a * div_h(g, u) - b * div_h(g, w)).max() < 1e-11


def test_batch_axes(g):
    rng = np.random.default_rng(5)
    f = rng.standard_normal((3,) + g.shape)
    for i in range(3):
        assert np.allclose(grad_h(g, f)[i], grad_h(g, f[i]))
        assert np.allclose(dz(g, f, BC.ROBIN_TOP)[i], dz(g, f[i], BC.ROBIN_TOP))
    assert np.allclose(integrate(g, f), [integrate(g, x) for x in f])


def test_inputs_not_mutated(g):
    f = np.random.default_rng(6).standard_normal(g.shape)
    keep = f.copy()
    for op in (grad_h, vbar, vhat, vint, lambda gg, x: dz(gg, x, BC.ROBIN_TOP),
               lambda gg, x: laplacian(gg, x, BC.NEUMANN)):
        op(g, f)
    assert np.array_equal(f, keep)
