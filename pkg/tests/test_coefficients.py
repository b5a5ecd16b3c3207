import json

import numpy as np
import pytest

from hydrostoch.coefficients import (CoefficientSpecError, generate_family, kraichnan_wavevectors,
                                     load_field_file, pad_modes)
from hydrostoch.domain import Grid, div_h
from hydrostoch.noise import make_noise_model, validate


@pytest.fixture(scope="module")
def g():
    return Grid(8, 8, 5)


def test_constant(g):
    (m,) = generate_family(g, "constant 0.1 0.2 0", True)
    assert m.shape == (3,) + g.shape and np.all(m[1] == 0.2)
    (s,) = generate_family(g, "constant 0.4", False)
    assert s.shape == g.shape and np.all(s == 0.4)
    assert generate_family(g, None, True) == []
    assert len(generate_family(g, "constant 1 0 0; constant 0 1 0", True)) == 2


@pytest.mark.parametrize("spec,vector", [
    ("constant 1 2", True), ("constant 1 2", False), ("constant nan", False),
    ("constant a", False), ("single_fourier_mode 0 0 1", True), ("single_fourier_mode 1.5 0 1", True),
    ("kraichnan_spectrum 3", True), ("kraichnan_spectrum 3 0.5", True), ("whirl 1", True),
])
def test_bad_specs(g, spec, vector):
    with pytest.raises(CoefficientSpecError):
        generate_family(g, spec, vector)


def test_spec_must_be_string(g):
    with pytest.raises(CoefficientSpecError):
        generate_family(g, 3.0, False)


def test_single_fourier_mode(g):
    (m,) = generate_family(g, "single_fourier_mode 1 2 0.3", True)
    k = np.array([1.0, 2.0])
    X1, X2, _ = g.mesh()
    c = 0.3 * np.cos(X1 + 2 * X2)
    assert np.allclose(m[0], -2 / np.sqrt(5) * c) and np.allclose(m[1], 1 / np.sqrt(5) * c)
    assert not m[2].any()
    assert np.abs(div_h(g, m[:2])).max() < 1e-13
    assert np.allclose(m[0] * k[0] + m[1] * k[1], 0)
    (s,) = generate_family(g, "single_fourier_mode 1 2 0.3", False)
    assert np.allclose(s, c)


def test_kraichnan_wavevectors():
    ks = kraichnan_wavevectors(3)
    assert len(ks) == 14
    assert len(set(ks)) == 14
    for k1, k2 in ks:
        assert (-k1, -k2) not in ks
        assert 0 < k1 * k1 + k2 * k2 <= 9


def test_kraichnan_gram(g):
    modes = generate_family(g, "kraichnan_spectrum 3 3", True)
    assert len(modes) == 28
    phi = np.stack(modes)
    G = np.einsum("nixyz,njxyz->ijxyz", phi, phi)
    # cos^2 + sin^2 makes the Gram matrix constant; the disc is symmetric so it is isotropic
    assert np.allclose(np.trace(G), 0.25)
    assert np.allclose(G[:2, :2], 0.125 * np.eye(2)[:, :, None, None, None])
    nm = make_noise_model(g, phi=phi)
    assert validate(nm).nu_phi == pytest.approx(0.125, abs=1e-14)
    assert np.abs(div_h(g, phi[:, :2])).max() < 1e-12


def test_kraichnan_slope_orders_variance(g):
    modes = generate_family(g, "kraichnan_spectrum 2 2 1.0", False)
    amps = [np.abs(m).max() for m in modes]
    assert amps[0] >= amps[-1]
    var = sum(float(np.mean(m ** 2)) * 2 for m in modes[::2])
    assert var == pytest.approx(1.0)


def test_pad_modes(g):
    modes = generate_family(g, "constant 1 0 0", True)
    out = pad_modes(g, modes, 3, True)
    assert out.shape == (3, 3) + g.shape and not out[1:].any()
    with pytest.raises(CoefficientSpecError):
        pad_modes(g, modes * 2, 1, True)


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def test_field_file(g, tmp_path):
    full = np.arange(np.prod(g.shape), dtype=float).reshape(g.shape)
    slab = np.ones((g.n1, g.n2))
    p = write_lines(tmp_path / "f.ndjson", [
        {"family": "phi", "mode": 1, "component": 0, "data": full.ravel().tolist()},
        {"family": "sigma", "mode": 0, "data": slab.ravel().tolist()},
        {"family": "kappa", "data": (2 * slab).ravel().tolist()},
    ])
    out = load_field_file(g, p, 2)
    assert np.array_equal(out["phi"][1, 0], full)
    assert not out["phi"][0].any()
    assert np.array_equal(out["sigma"][0], np.ones(g.shape))
    assert np.array_equal(out["kappa"], 2 * np.ones(g.shape))


@pytest.mark.parametrize("obj", [
    {"family": "omega", "mode": 0, "data": [0.0] * 64},
    {"family": "sigma", "mode": 0, "data": [0.0] * 64, "extra": 1},
    {"family": "sigma", "mode": 0, "data": [0.0] * 63},
    {"family": "sigma", "mode": 5, "data": [0.0] * 64},
    {"family": "psi", "mode": 0, "component": 3, "data": [0.0] * 64},
    {"family": "psi", "mode": 0, "data": [0.0] * 64},
])
def test_field_file_errors(g, tmp_path, obj):
    p = write_lines(tmp_path / "bad.ndjson", [obj])
    with pytest.raises(CoefficientSpecError):
        load_field_file(g, p, 2)


def test_field_file_bad_json(g, tmp_path):
    p = tmp_path / "bad.ndjson"
    p.write_text("{not json\n")
    with pytest.raises(CoefficientSpecError):
        load_field_file(g, p, 1)
