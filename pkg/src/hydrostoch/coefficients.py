"""Named generators for noise coefficients and the NDJSON field-file reader.

A family spec is a ``;``-separated list of generator calls, each producing one
or more modes, e.g. ``"constant 0.5 0 0; single_fourier_mode 1 2 0.1"``.
Modes are concatenated in order and zero-padded to the requested N.

Generators (``vector`` families take three constants, scalar families one):

    constant c1 [c2 c3]
    single_fourier_mode k1 k2 amplitude
    kraichnan_spectrum slope cutoff [amplitude]

Fourier-type vector modes point along k_perp / |k|, have no vertical
component and are x3-independent.  The Kraichnan generator emits a cosine
and a sine mode per wavevector with variance proportional to |k|^-slope,
normalized so the summed variance equals amplitude^2; its Gram matrix is then
the same at every point and bounded by amplitude^2.
"""
from __future__ import annotations

import json

import numpy as np

from .domain import Grid

KRAICHNAN_AMPLITUDE = 0.5


class CoefficientSpecError(ValueError):
    pass


def _floats(args, name, lo, hi=None):
    hi = lo if hi is None else hi
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise CoefficientSpecError(f"{name}: arguments must be numbers, got {args}") from None
    if not lo <= len(vals) <= hi:
        raise CoefficientSpecError(f"{name}: expected {lo}..{hi} arguments, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise CoefficientSpecError(f"{name}: arguments must be finite")
    return vals


def _wave(grid, k1, k2):
    X1, X2, _ = grid.mesh()
    return k1 * X1 + k2 * X2


def _perp(k1, k2):
    norm = np.hypot(k1, k2)
    return -k2 / norm, k1 / norm


def _vector_mode(grid, k1, k2, amp, fn):
    a, b = _perp(k1, k2)
    s = amp * fn(_wave(grid, k1, k2))
    shape = grid.shape
    return np.stack([np.broadcast_to(a * s, shape), np.broadcast_to(b * s, shape), np.zeros(shape)])


def _scalar_mode(grid, k1, k2, amp, fn):
    return np.broadcast_to(amp * fn(_wave(grid, k1, k2)), grid.shape).copy()


def kraichnan_wavevectors(cutoff):
    """Half-plane wavevectors with 0 < |k| <= cutoff, sorted by (|k|, k1, k2)."""
    c = int(np.floor(cutoff))
    out = []
    for k1 in range(-c, c + 1):
        for k2 in range(0, c + 1):
            if k2 == 0 and k1 <= 0:
                continue
            if 0 < k1 * k1 + k2 * k2 <= cutoff * cutoff:
                out.append((k1, k2))
    out.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    return out


def _generate(grid: Grid, call: str, vector: bool):
    parts = call.split()
    name, args = parts[0], parts[1:]
    if name == "constant":
        if vector:
            c = _floats(args, name, 3)
            return [np.stack([np.full(grid.shape, x) for x in c])]
        (c,) = _floats(args, name, 1)
        return [np.full(grid.shape, c)]
    if name == "single_fourier_mode":
        k1, k2, amp = _floats(args, name, 3)
        if k1 != int(k1) or k2 != int(k2) or (k1 == 0 and k2 == 0):
            raise CoefficientSpecError("single_fourier_mode needs a nonzero integer wavevector")
        make = _vector_mode if vector else _scalar_mode
        return [make(grid, k1, k2, amp, np.cos)]
    if name == "kraichnan_spectrum":
        vals = _floats(args, name, 2, 3)
        slope, cutoff = vals[0], vals[1]
        amp = vals[2] if len(vals) == 3 else KRAICHNAN_AMPLITUDE
        ks = kraichnan_wavevectors(cutoff)
        if not ks:
            raise CoefficientSpecError("kraichnan_spectrum: cutoff admits no wavevector")
        var = np.array([np.hypot(*k) ** (-slope) for k in ks])
        var *= amp ** 2 / var.sum()
        make = _vector_mode if vector else _scalar_mode
        modes = []
        for (k1, k2), s2 in zip(ks, var):
            a = float(np.sqrt(s2))
            modes.append(make(grid, k1, k2, a, np.cos))
            modes.append(make(grid, k1, k2, a, np.sin))
        return modes
    raise CoefficientSpecError(f"unknown generator {name!r}")


def generate_family(grid: Grid, spec, vector: bool):
    """All modes of one family as a list of arrays (no padding)."""
    if spec is None:
        return []
    if not isinstance(spec, str):
        raise CoefficientSpecError(f"generator spec must be a string, got {type(spec).__name__}")
    modes = []
    for call in spec.split(";"):
        if call.strip():
            modes.extend(_generate(grid, call.strip(), vector))
    return modes


def pad_modes(grid: Grid, modes, N: int, vector: bool, name="family"):
    if len(modes) > N:
        raise CoefficientSpecError(f"{name} produces {len(modes)} modes but N = {N}")
    shape = ((3,) if vector else ()) + grid.shape
    out = np.zeros((N,) + shape)
    for i, m in enumerate(modes):
        out[i] = m
    return out


# -- NDJSON field files -----------------------------------------------------------

FILE_FAMILIES = {"phi": 3, "psi": 3, "sigma": 0, "kappa": None}


def load_field_file(grid: Grid, path, N: int):
    """Read raw coefficient arrays.

    One JSON object per line::

        {"family": "phi", "mode": 0, "component": 2, "data": [...]}

    ``data`` is the row-major flattening of an (n1, n2, n3) array or of an
    (n1, n2) slab, which is repeated over the levels.  ``kappa`` lines carry
    no mode or component; scalar families carry no component.  Returns a
    dict of full arrays for the families present in the file.
    """
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CoefficientSpecError(f"{path}:{lineno}: {exc}") from None
            fam = obj.get("family")
            if fam not in FILE_FAMILIES:
                raise CoefficientSpecError(f"{path}:{lineno}: unknown family {fam!r}")
            extra = set(obj) - {"family", "mode", "component", "data"}
            if extra:
                raise CoefficientSpecError(f"{path}:{lineno}: unknown keys {sorted(extra)}")
            data = np.asarray(obj.get("data"), float)
            if data.size == grid.n1 * grid.n2 * grid.n3:
                arr = data.reshape(grid.shape)
            elif data.size == grid.n1 * grid.n2:
                arr = np.repeat(data.reshape(grid.n1, grid.n2, 1), grid.n3, axis=-1)
            else:
                raise CoefficientSpecError(f"{path}:{lineno}: data has {data.size} values, "
                                           f"expected {grid.n1 * grid.n2 * grid.n3} or {grid.n1 * grid.n2}")
            ncomp = FILE_FAMILIES[fam]
            if fam == "kappa":
                out["kappa"] = arr
                continue
            mode = obj.get("mode")
            if not isinstance(mode, int) or not 0 <= mode < N:
                raise CoefficientSpecError(f"{path}:{lineno}: mode must be an integer in [0, {N})")
            if ncomp:
                comp = obj.get("component")
                if not isinstance(comp, int) or not 0 <= comp < ncomp:
                    raise CoefficientSpecError(f"{path}:{lineno}: component must be 0, 1 or 2")
                buf = out.setdefault(fam, np.zeros((N, ncomp) + grid.shape))
                buf[mode, comp] = arr
            else:
                buf = out.setdefault(fam, np.zeros((N,) + grid.shape))
                buf[mode] = arr
    return out
