import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hydrostoch.domain import Grid, as_field
from hydrostoch.dynamics import explicit_terms
from hydrostoch.noise import (AssumptionError, BrownianIncrements, BrownianStream, NoiseValidationError,
                              apply_diffusion, batch_increments, correction_operator_v, gram_lambda_max,
                              make_noise_model, noise_operator, sample_increments, strat_to_ito, validate)
from hydrostoch.projection import apply_p


@pytest.fixture(scope="module")
def g():
    return Grid(16, 16, 9)


def const(*c):
    return np.asarray(c, float)[:, None, None, None]


# -- validation ---------------------------------------------------------------

def test_validate_examples(g):
    rep = validate(make_noise_model(g, phi=np.stack([const(1, 0, 0), const(0, 1, 0)])))
    assert rep.nu_phi == pytest.approx(1.0, abs=1e-14) and rep.ok
    rep = validate(make_noise_model(g, phi=np.stack([const(1.5, 0, 0)])))
    assert rep.nu_phi == pytest.approx(2.25, abs=1e-14) and not rep.ok
    rep = validate(make_noise_model(g))
    assert rep.nu_phi == 0 and rep.nu_psi == 0 and rep.ok


def test_validate_flags_x3_dependence(g):
    Z = g.mesh()[2]
    bad = np.stack([as_field(g, 0.1 * Z, 0 * Z, 0 * Z)])
    rep = validate(make_noise_model(g, phi=bad))
    assert not rep.ok and any("x3" in m for m in rep.violations)
    # the vertical component may depend on x3
    ok = np.stack([as_field(g, 0 * Z, 0 * Z, 0.1 * np.sin(np.pi * Z))])
    assert validate(make_noise_model(g, phi=ok)).ok
    rep = validate(make_noise_model(g, sigma=np.stack([as_field(g, Z)])))
    assert not rep.ok


def test_validate_nonfinite(g):
    phi = np.zeros((1, 3) + g.shape)
    phi[0, 0, 0, 0, 0] = np.inf
    assert not validate(make_noise_model(g, phi=phi)).ok


def test_apply_diffusion_refuses_invalid(g):
    nm = make_noise_model(g, phi=np.stack([const(1.5, 0, 0)]))
    with pytest.raises(NoiseValidationError):
        apply_diffusion(nm, np.zeros((2,) + g.shape), np.zeros(g.shape), np.zeros(1))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3, 2, 2, 1), elements=st.floats(-3, 3)))
def test_gram_matches_dense(c):
    G = np.einsum("nixyz,njxyz->xyzij", c, c)
    ref = np.linalg.eigvalsh(G)[..., -1]
    assert np.abs(gram_lambda_max(c) - ref).max() <= 1e-10 * max(1.0, ref.max())


def test_gram_degenerate_spectra():
    # repeated top eigenvalue, rank one, and identity
    cases = [np.stack([np.eye(3)[0], np.eye(3)[1]]) * 1.3,
             np.array([[1.0, 2.0, 2.0]]),
             np.eye(3)]
    for c in cases:
        c = c[:, :, None, None, None]
        G = np.einsum("nixyz,njxyz->xyzij", c, c)
        assert np.abs(gram_lambda_max(c) - np.linalg.eigvalsh(G)[..., -1]).max() < 1e-12


# -- Brownian increments -------------------------------------------------------

def test_increments_deterministic():
    a = sample_increments(BrownianStream(11, 3, 5), 1.0)
    b = sample_increments(BrownianStream(11, 3, 5), 1.0)
    assert np.array_equal(a.dW, b.dW) and a.dW.shape == (5,)
    c = sample_increments(BrownianStream(11, 4, 5), 1.0)
    assert not np.array_equal(a.dW, c.dW)


def test_increments_reject_bad_dt():
    for dt in (0.0, -1e-3):
        with pytest.raises(ValueError):
            sample_increments(BrownianStream(0, 0, 2), dt)


def test_stream_random_access():
    s = BrownianStream(5, 1, 3)
    block = s.normals_block(0, 10)
    fresh = BrownianStream(5, 1, 3)
    assert np.array_equal(fresh.normals(7), block[7])
    assert np.array_equal(fresh.normals(2), block[2])
    seq = BrownianStream(5, 1, 3)
    assert np.array_equal(np.stack([sample_increments(seq, 1.0).dW for _ in range(10)]), block)


def test_increment_moments():
    dt = 0.01
    n = 10 ** 5
    z = np.sqrt(dt) * BrownianStream(2024, 0, 1).normals_block(0, n)[:, 0]
    assert abs(z.mean()) <= 4 * np.sqrt(dt / n)
    assert abs(z.var() / dt - 1) < 0.05


def test_modes_uncorrelated():
    z = BrownianStream(1, 0, 4).normals_block(0, 20000)
    C = np.corrcoef(z.T)
    assert np.abs(C - np.eye(4)).max() < 0.05


def test_batch_increments_shape():
    streams = [BrownianStream(0, p, 3) for p in range(4)]
    dW = batch_increments(streams, 0, 0.01, count=5)
    assert dW.shape == (5, 4, 3)
    assert np.array_equal(dW[2, 1], 0.1 * BrownianStream(0, 1, 3).normals(2))


# -- Stratonovich to Ito ------------------------------------------------------------

def test_strat_to_ito_constants(g):
    s, p, f = 0.7, (0.1, -0.2, 0.3), (0.4, 0.5, 0.0)
    nm = strat_to_ito(make_noise_model(g, phi=np.stack([const(*f)]), psi=np.stack([const(*p)]),
                                       sigma=np.stack([np.full(g.shape, s)])))
    ref = [0.5 * s * (p[0] + f[0]), 0.5 * s * (p[1] + f[1]), 0.5 * s * p[2]]
    for j in range(3):
        assert np.allclose(nm.pi[j], ref[j], atol=1e-15)
    assert not np.any(nm.gamma)


def test_strat_to_ito_no_sigma(g):
    X1, X2, _ = g.mesh()
    phi = np.stack([as_field(g, np.sin(X2), 0 * X1, 0 * X1)])
    nm = strat_to_ito(make_noise_model(g, phi=phi))
    assert not np.any(nm.pi)
    ref = np.zeros((2, 2) + g.shape)
    ref[1, 0] = 0.5 * np.cos(X2)
    assert np.abs(nm.gamma[0] - ref).max() < 1e-13


def test_strat_to_ito_idempotent(g):
    X1, X2, Z = g.mesh()
    phi = np.stack([as_field(g, 0.2 * np.sin(X2), 0.1 * np.cos(X1), 0.1 * np.sin(np.pi * Z))])
    nm = make_noise_model(g, phi=phi, psi=phi, sigma=np.stack([as_field(g, np.cos(X1))]))
    once = strat_to_ito(nm)
    twice = strat_to_ito(once)
    assert np.array_equal(once.gamma, twice.gamma) and np.array_equal(once.pi, twice.pi)


def test_strat_to_ito_trace_condition(g):
    phi = np.stack([const(0, 0, 0.1)])
    with pytest.raises(AssumptionError):
        strat_to_ito(make_noise_model(g, phi=phi))


def test_strat_to_ito_rejects_user_gamma(g):
    nm = make_noise_model(g, phi=np.stack([const(0.1, 0, 0)]), pi=const(0.1, 0, 0))
    with pytest.raises(AssumptionError):
        strat_to_ito(nm)


def test_correction_symbol_constant_coefficients(g):
    X1, X2, Z = g.mesh()
    c = (0.3, -0.4, 0.0)
    nm = make_noise_model(g, phi=np.stack([const(*c)]))
    for k1, k2 in [(1, 0), (2, -1), (3, 2)]:
        v = as_field(g, np.cos(k1 * X1 + k2 * X2) * np.cos(np.pi * (Z + 1)), 0 * Z)
        kc = c[0] * k1 + c[1] * k2
        assert np.abs(correction_operator_v(nm, v) + 0.5 * kc ** 2 * v).max() < 1e-10


def test_ito_correction_is_half_double_application(g):
    X1, X2, Z = g.mesh()
    zeta = Z + 1
    phi = np.stack([as_field(g, 0.2 + 0.1 * np.cos(X2), 0.15 * np.sin(X1), 0.1 * np.sin(np.pi * zeta) * np.sin(X2)),
                    as_field(g, 0.0, 0.3, 0.0)])
    psi = np.stack([as_field(g, 0.1, 0.2 * np.cos(X1 - X2), 0.05 * np.sin(np.pi * zeta)),
                    as_field(g, 0.2, 0.0, 0.0)])
    sigma = np.stack([as_field(g, 0.4 + 0.2 * np.sin(X2)), as_field(g, 0.2)])
    nm = make_noise_model(g, phi=phi, psi=psi, sigma=sigma)
    v = apply_p(g, as_field(g, np.cos(X2) * np.cos(np.pi * zeta) + 0.5, np.sin(X1 + X2) * np.cos(2 * np.pi * zeta)))
    th = as_field(g, np.sin(X1) * np.cos(np.pi * zeta) + 0.3 * np.cos(X1 + 2 * X2))
    ev0, et0 = explicit_terms(nm, v, th, linear=True)
    ev1, et1 = explicit_terms(strat_to_ito(nm), v, th, linear=True)
    half_v, half_t = np.zeros_like(v), np.zeros_like(th)
    for n in range(nm.N):
        a, b = noise_operator(nm, v, th, n)
        c, d = noise_operator(nm, a, b, n)
        half_v += 0.5 * c
        half_t += 0.5 * d
    assert np.abs(apply_p(g, ev1 - ev0) - half_v).max() < 1e-9
    assert np.abs(et1 - et0 - half_t).max() < 1e-9


# -- apply_diffusion ------------------------------------------------------------------

def test_diffusion_examples(g):
    X1, X2, Z = g.mesh()
    zero_v, zero_t = np.zeros((2,) + g.shape), np.zeros(g.shape)
    nm = make_noise_model(g, phi=np.stack([const(1, 0, 0)]), sigma=np.stack([np.ones(g.shape)]))
    dv, dth = apply_diffusion(nm, zero_v, zero_t, np.array([0.3]))
    assert not dv.any() and not dth.any()
    nm = make_noise_model(g, sigma=np.stack([np.ones(g.shape)]))
    dv, _ = apply_diffusion(nm, zero_v, np.full(g.shape, 2.0), np.array([0.3]))
    assert np.abs(dv).max() < 1e-14
    nm = make_noise_model(g, phi=np.stack([const(1, 0, 0)]))
    v = as_field(g, np.sin(X1), 0 * X1)
    dv, _ = apply_diffusion(nm, v, zero_t, BrownianIncrements(np.array([0.3]), 0.01))
    assert np.abs(dv).max() < 1e-13


def test_diffusion_sigma_product_rule(g):
    X1, X2, Z = g.mesh()
    s = as_field(g, 1 + 0.5 * np.cos(X2))
    nm = make_noise_model(g, sigma=np.stack([s]))
    th = as_field(g, np.sin(X1) * (Z + 1) ** 2)
    dv, _ = apply_diffusion(nm, np.zeros((2,) + g.shape), th, np.array([1.0]))
    # vint(th) = sin x1 (z+1)^3 / 3 up to trapezoid error; compare with the exact-integral expansion
    from hydrostoch.domain import grad_h, vint
    I = vint(g, th)
    expanded = s * grad_h(g, I) + grad_h(g, s) * I
    assert np.abs(dv - apply_p(g, expanded)).max() < 1e-12


def test_diffusion_batched_dw(g):
    X1, X2, Z = g.mesh()
    nm = make_noise_model(g, psi=np.stack([const(0.3, 0.1, 0), const(0, 0.2, 0)]))
    th = np.stack([as_field(g, np.sin(X1 + X2)), as_field(g, np.cos(X2))])
    v = np.zeros((2, 2) + g.shape)
    dW = np.array([[0.1, 0.2], [-0.3, 0.4]])
    _, dth = apply_diffusion(nm, v, th, dW)
    for i in range(2):
        _, ref = apply_diffusion(nm, v[i], th[i], dW[i])
        assert np.allclose(dth[i], ref)
