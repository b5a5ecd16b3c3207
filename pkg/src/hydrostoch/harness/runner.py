"""Single paths, ensembles and the continuous-dependence experiment."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..coefficients import generate_family, load_field_file, pad_modes
from ..diagnostics import DiagnosticsRecord, record, split_consistency
from ..domain import BC, Grid, as_field
from ..dynamics import CFLError, Forcing, InvalidStateError, SimState, step_ito, step_stratonovich
from ..noise import BrownianStream, make_noise_model, strat_to_ito, validate
from ..norms import l2_sq, norm_ladder
from ..projection import apply_p
from . import io
from .config import RunConfig

FUNCTIONALS = ("v_l2_h1", "theta_l2_h1", "v_h1_h2", "theta_h1_h2")
RNG_BLOCK = 256
GAMMA_POINTS = 12


class SetupError(ValueError):
    pass


# -- building a run -------------------------------------------------------------------

def _wave(grid, k1, k2):
    X1, X2, _ = grid.mesh()
    return k1 * X1 + k2 * X2


def _parse(spec, what):
    parts = spec.split()
    if not parts:
        raise SetupError(f"empty {what} spec")
    try:
        return parts[0], [float(x) for x in parts[1:]]
    except ValueError:
        raise SetupError(f"{what}: bad numbers in {spec!r}") from None


def _random_smooth(grid, rng, amplitude, kmax, vector):
    """Band-limited random field: horizontal modes |k| <= kmax, vertical
    cosines up to the second; velocities are projected.  Scaled to the given
    root-mean-square value."""
    X1, X2, Z = grid.mesh()
    zeta = (Z + grid.h) / grid.h
    ncomp = 2 if vector else 1
    out = np.zeros((ncomp,) + grid.shape)
    k = int(kmax)
    for c in range(ncomp):
        for k1 in range(-k, k + 1):
            for k2 in range(0, k + 1):
                if k1 * k1 + k2 * k2 > kmax * kmax:
                    continue
                for m in range(3):
                    a, b = rng.standard_normal(2)
                    ph = _wave(grid, k1, k2)
                    out[c] += (a * np.cos(ph) + b * np.sin(ph)) * np.cos(m * np.pi * zeta) / (1 + m)
    if vector:
        out = apply_p(grid, out)
    else:
        out = out[0]
    rms = math.sqrt(float(np.mean(out * out)))
    return out * (amplitude / rms) if rms > 0 else out


def field_from_spec(grid: Grid, spec: str, vector: bool, rng=None):
    name, args = _parse(spec, "field")
    shape = ((2,) if vector else ()) + grid.shape
    if name == "zero":
        return np.zeros(shape)
    if name == "constant":
        want = 2 if vector else 1
        if len(args) != want:
            raise SetupError(f"constant needs {want} values")
        return np.stack([np.full(grid.shape, a) for a in args]) if vector else np.full(grid.shape, args[0])
    if name == "single_fourier_mode":
        if len(args) != 3:
            raise SetupError("single_fourier_mode needs k1 k2 amplitude")
        k1, k2, amp = args
        if (k1, k2) == (0, 0):
            raise SetupError("single_fourier_mode needs a nonzero wavevector")
        c = amp * np.cos(_wave(grid, k1, k2))
        if not vector:
            return as_field(grid, c)
        n = math.hypot(k1, k2)
        return as_field(grid, -k2 / n * c, k1 / n * c)
    if name == "random_smooth":
        if len(args) != 2:
            raise SetupError("random_smooth needs amplitude kmax")
        if rng is None:
            raise SetupError("random_smooth needs a random generator")
        return _random_smooth(grid, rng, args[0], args[1], vector)
    raise SetupError(f"unknown field generator {name!r}")


@dataclass
class Setup:
    cfg: RunConfig
    grid: Grid
    nm_raw: object
    nm_step: object
    forcing: Forcing
    state0: SimState
    scheme: str | None


def build_noise(cfg: RunConfig, grid: Grid):
    fams = {
        "phi": generate_family(grid, cfg.noise_phi, True),
        "psi": generate_family(grid, cfg.noise_psi, True),
        "sigma": generate_family(grid, cfg.noise_sigma, False),
    }
    N = cfg.noise_n if cfg.noise_n is not None else max(len(m) for m in fams.values())
    arrays = {k: pad_modes(grid, m, N, k != "sigma", k) for k, m in fams.items()}
    kappa = np.full(grid.shape, cfg.kappa)
    if cfg.noise_field_file:
        if cfg.noise_n is None:
            raise SetupError("noise_field_file needs an explicit noise_n")
        raw = load_field_file(grid, cfg.noise_field_file, N)
        kappa = raw.pop("kappa", kappa)
        for k, arr in raw.items():
            arrays[k] = arrays[k] + arr
    return make_noise_model(grid, phi=arrays["phi"], psi=arrays["psi"], sigma=arrays["sigma"],
                            kappa=kappa, N=N)


def build(cfg: RunConfig) -> Setup:
    grid = Grid(cfg.n1, cfg.n2, cfg.n3, cfg.h, cfg.alpha)
    nm_raw = build_noise(cfg, grid)
    if cfg.stratonovich:
        scheme = cfg.strat_scheme
        nm_step = nm_raw if scheme == "heun" else strat_to_ito(nm_raw)
    else:
        scheme = None
        nm_step = nm_raw
    rng = np.random.default_rng(cfg.init_seed)
    v0 = field_from_spec(grid, cfg.init_v, True, rng)
    t0 = field_from_spec(grid, cfg.init_theta, False, rng)
    forcing = Forcing(
        f_v=None if cfg.forcing_v == "zero" else apply_p(grid, field_from_spec(grid, cfg.forcing_v, True, rng)),
        f_theta=None if cfg.forcing_theta == "zero" else field_from_spec(grid, cfg.forcing_theta, False, rng),
        k0=cfg.coriolis_k0,
    )
    return Setup(cfg, grid, nm_raw, nm_step, forcing, SimState(apply_p(grid, v0), t0), scheme)


def header(setup: Setup, path_index=None) -> dict:
    cfg = setup.cfg
    h = {
        "format": "hydrostoch-ndjson-1",
        "version": __version__,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "noise_report": validate(setup.nm_raw).to_dict(),
        "noise_n": setup.nm_raw.N,
    }
    if path_index is not None:
        h["path"] = int(path_index)
        h["seed"] = int(cfg.seed)
    return {"header": h}


# -- functionals -------------------------------------------------------------------------

class Tracker:
    """sup ||.||^2_{L2} + int ||.||^2_{H1} and sup ||.||^2_{H1} + int ||.||^2_{H2}
    for v and theta, plus the combined blow-up functional.  Left-endpoint
    quadrature in time."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.sup = np.zeros(4)   # l2_v, l2_t, h1_v, h1_t
        self.int = np.zeros(4)   # h1_v, h1_t, h2_v, h2_t
        self.sup_h1_state = 0.0
        self.last_l2 = (0.0, 0.0)

    def update(self, state: SimState, weight: float):
        lv, hv, Hv = norm_ladder(self.grid, state.v, BC.NEUMANN, True)
        lt, ht, Ht = norm_ladder(self.grid, state.theta, BC.ROBIN_TOP)
        vals = np.array([lv, lt, hv, ht], float)
        self.sup = np.maximum(self.sup, vals)
        self.int += weight * np.array([hv, ht, Hv, Ht], float)
        self.sup_h1_state = max(self.sup_h1_state, float(hv + ht))
        self.last_l2 = (float(lv), float(lt))
        return float(hv + ht), float(Hv + Ht)

    @property
    def blowup_value(self):
        return self.sup_h1_state + float(self.int[2] + self.int[3])

    def values(self) -> dict:
        s, i = self.sup, self.int
        return {
            "v_l2_h1": float(s[0] + i[0]),
            "theta_l2_h1": float(s[1] + i[1]),
            "v_h1_h2": float(s[2] + i[2]),
            "theta_h1_h2": float(s[3] + i[3]),
        }


# -- single path -----------------------------------------------------------------------------

@dataclass
class PathResult:
    path: int
    records: list
    final: SimState
    functionals: dict
    status: str = "ok"
    error: str | None = None
    steps: int = 0
    l2_energy: float = 0.0
    lines: list = field(default_factory=list)


def _stepper(setup: Setup):
    cfg, nm, fo = setup.cfg, setup.nm_step, setup.forcing
    kw = dict(cfl_max=cfg.cfl_max, tol_div=cfg.tol_div, linear=cfg.linear)
    if setup.scheme == "heun":
        return lambda s, dW: step_stratonovich(s, nm, fo, cfg.dt, dW, scheme="heun", **kw)
    return lambda s, dW: step_ito(s, nm, fo, cfg.dt, dW, **kw)


def _split_model(setup: Setup):
    # Heun increments are compared with the Ito form of the same system
    return strat_to_ito(setup.nm_raw) if setup.scheme == "heun" else setup.nm_step


def march(setup: Setup, path_index: int, state0: SimState | None = None, on_step=None,
          records=True, snapshot_dir=None):
    """Advance one path to t_end; returns a PathResult (no files written)."""
    cfg, g = setup.cfg, setup.grid
    report = validate(setup.nm_raw)
    if not report.ok:
        raise SetupError(f"noise validation failed: {report.violations}")
    nm = setup.nm_step
    stream = BrownianStream(cfg.seed, path_index, nm.N)
    step = _stepper(setup)
    split_nm = _split_model(setup) if records else None
    sqdt = math.sqrt(cfg.dt)
    state = state0 if state0 is not None else setup.state0
    tracker = Tracker(g)
    out, last, status, err = [], None, "ok", None
    n = cfg.n_steps
    block, prev, prev_dw = None, None, None

    def emit(s, split):
        nonlocal last
        rec = record(s, nm, last=last, ceiling=None, split_residual=split)
        rec.blowup_flag = rec.blowup_flag or tracker.blowup_value > cfg.blowup_ceiling
        last = rec
        out.append(rec)
        if snapshot_dir is not None and s.valid:
            io.write_snapshot(Path(snapshot_dir) / f"path-{path_index}-step-{s.step}-v.hsto", s.v)
            io.write_snapshot(Path(snapshot_dir) / f"path-{path_index}-step-{s.step}-theta.hsto", s.theta)

    for k in range(n + 1):
        tracker.update(state, cfg.dt if k < n else 0.0)
        if on_step is not None:
            on_step(k, state)
        fired = tracker.blowup_value > cfg.blowup_ceiling
        if records and (k % cfg.record_every == 0 or k == n or fired):
            split = 0.0
            if prev is not None and prev.step == state.step - 1:
                split = split_consistency([(prev, prev_dw), (state, None)], split_nm,
                                          setup.forcing, cfg.linear)
            emit(state, split)
        if fired:
            status = "blowup"
            break
        if k == n:
            break
        if k % RNG_BLOCK == 0:
            block = stream.normals_block(k, min(RNG_BLOCK, n - k)) * sqdt
        dW = block[k % RNG_BLOCK]
        try:
            new = step(state, dW)
        except (CFLError, InvalidStateError) as exc:
            status, err = "blowup", f"{type(exc).__name__}: {exc}"
            break
        if not new.valid:
            status, err = "blowup", "non-finite state"
            if records:
                emit(new, 0.0)
            break
        prev, prev_dw, state = state, dW, new
    if records and status == "blowup" and out and not out[-1].blowup_flag:
        out[-1].blowup_flag = True
    funcs = tracker.values()
    if status == "blowup":
        funcs = {k: math.inf for k in funcs}
    return PathResult(path_index, out, state, funcs, status, err, state.step,
                      float(sum(tracker.last_l2)))


def path_lines(setup: Setup, res: PathResult):
    lines = [header(setup, res.path)]
    lines += [r.to_dict() for r in res.records]
    lines.append({"summary": {"path": res.path, "status": res.status, "error": res.error,
                              "steps": res.steps, "functionals": res.functionals,
                              "l2_energy": res.l2_energy}})
    return lines


def run_path(cfg: RunConfig, path_index: int = 0, outdir=None, write=True):
    """Run one path; returns (records, final state).  Writes path-<i>.ndjson
    under ``outdir`` (default cfg.outdir) when ``write``."""
    setup = build(cfg)
    outdir = Path(outdir or cfg.outdir)
    snap = outdir / "fields" if (write and cfg.emit_fields) else None
    res = march(setup, path_index, snapshot_dir=snap)
    if write:
        io.write_ndjson(outdir / f"path-{path_index}.ndjson", path_lines(setup, res))
    return res.records, res.final


# -- ensembles ----------------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return (lo, hi)


def default_gamma_grid(values, points=GAMMA_POINTS):
    """Geometric ladder spanning the finite positive functional values."""
    vals = np.asarray([x for x in values if math.isfinite(x) and x > 0], float)
    if vals.size == 0:
        return list(np.geomspace(math.e ** math.e, 1e4 * math.e ** math.e, points))
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo * (1 + 1e-12):
        lo, hi = lo / 2, hi * 2
    return [float(x) for x in np.geomspace(lo, hi, points)]


def _run_one(args):
    cfg, path_index, outdir = args
    setup = build(cfg)
    snap = Path(outdir) / "fields" if cfg.emit_fields else None
    try:
        res = march(setup, path_index, snapshot_dir=snap)
    except Exception as exc:  # a failing path must not take the ensemble down
        return path_index, None, f"{type(exc).__name__}: {exc}"
    io.write_ndjson(Path(outdir) / f"path-{path_index}.ndjson", path_lines(setup, res))
    return path_index, {"functionals": res.functionals, "status": res.status,
                        "l2_energy": res.l2_energy, "error": res.error}, None


def summarize(cfg: RunConfig, per_path: dict, failures: list, noise_report: dict):
    ok = [per_path[i] for i in sorted(per_path)]
    grid = cfg.gamma_grid
    if grid is None:
        grid = default_gamma_grid([p["functionals"][f] for p in ok for f in FUNCTIONALS])
    n = len(ok)
    exceed, wilson, significant = {}, {}, {}
    for f in FUNCTIONALS:
        vals = np.array([p["functionals"][f] for p in ok], float)
        counts = [int(np.sum(vals >= gam)) for gam in grid]
        exceed[f] = [c / n if n else 0.0 for c in counts]
        wilson[f] = [list(wilson_interval(c, n)) for c in counts]
        significant[f] = bool(n and wilson[f][-1][1] < wilson[f][0][0])
    energies = [p["l2_energy"] for p in ok if p["status"] == "ok"]
    return {
        "config_hash": cfg.hash(),
        "noise_report": noise_report,
        "paths": cfg.paths,
        "completed": n,
        "seeds": [{"path": i, "seed": cfg.seed} for i in range(cfg.paths)],
        "gamma_grid": [float(x) for x in grid],
        "functionals": list(FUNCTIONALS),
        "exceedance": exceed,
        "wilson95": wilson,
        "significant_decrease": significant,
        "l2_energy": {"mean": float(np.mean(energies)) if energies else None,
                      "max": float(np.max(energies)) if energies else None},
        "blowups": sum(1 for p in ok if p["status"] == "blowup"),
        "failures": failures,
    }


def run_ensemble(cfg: RunConfig, outdir=None):
    """All paths, per-path NDJSON and summary.json; returns the summary dict."""
    if cfg.paths < 2:
        raise SetupError("an ensemble needs at least 2 paths")
    setup = build(cfg)
    report = validate(setup.nm_raw)
    if not report.ok:
        raise SetupError(f"noise validation failed: {report.violations}")
    outdir = Path(outdir or cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, i, str(outdir)) for i in range(cfg.paths)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    per_path, failures = {}, []
    for i, res, err in results:
        if err is not None:
            failures.append({"path": i, "error": err})
        else:
            per_path[i] = res
    summary = summarize(cfg, per_path, failures, report.to_dict())
    io.write_json(outdir / "summary.json", summary)
    return summary


# -- continuous dependence --------------------------------------------------------------------

def perturbation(setup: Setup, seed_offset: int = 1):
    """Fixed smooth direction of unit L2 norm in (v, theta)."""
    g = setup.grid
    rng = np.random.default_rng(setup.cfg.init_seed + seed_offset)
    dv = _random_smooth(g, rng, 1.0, 2, True)
    dt = _random_smooth(g, rng, 1.0, 2, False)
    norm = math.sqrt(float(l2_sq(g, dv, True) + l2_sq(g, dt)))
    return dv / norm, dt / norm


class _GapMeter:
    """Accumulates sup ||a - b||^2_{L2} and int ||a - b||^2_{H1} against a
    stored reference trajectory."""

    def __init__(self, grid, dt, ref):
        self.grid, self.dt, self.ref = grid, dt, ref
        self.sup = 0.0
        self.int = 0.0

    def __call__(self, k, s):
        if k >= len(self.ref):
            return
        rv, rt = self.ref[k]
        lv, hv, _ = norm_ladder(self.grid, s.v - rv, BC.NEUMANN, True)
        lt, ht, _ = norm_ladder(self.grid, s.theta - rt, BC.ROBIN_TOP)
        self.sup = max(self.sup, float(lv + lt))
        if k < len(self.ref) - 1:
            self.int += self.dt * float(hv + ht)


def continuous_dependence(cfg: RunConfig, delta: float, pairs: int | None = None, direction=None):
    """Gaps between paths started delta apart (same Brownian draws) for
    delta, delta/2, delta/4.  ``pairs`` defaults to cfg.paths."""
    if not (delta >= 0 and math.isfinite(delta)):
        raise SetupError("delta must be >= 0")
    setup = build(cfg)
    if direction is None:
        direction = perturbation(setup)
    dv, dth = direction
    pairs = cfg.paths if pairs is None else pairs
    deltas = [delta, delta / 2, delta / 4]
    base = setup.state0
    rows = []
    for p in range(pairs):
        ref = []
        ra = march(setup, p, base, records=False,
                   on_step=lambda k, s: ref.append((s.v.copy(), s.theta.copy())))
        gh, gv, ok = [], [], ra.status == "ok"
        for d in deltas:
            meter = _GapMeter(setup.grid, cfg.dt, ref)
            pert = SimState(base.v + d * dv, base.theta + d * dth)
            rb = march(setup, p, pert, records=False, on_step=meter)
            ok = ok and rb.status == "ok"
            gh.append(math.sqrt(meter.sup))
            gv.append(math.sqrt(meter.int))
        rows.append({"path": p, "gap_H": gh, "gap_V": gv, "ok": ok,
                     "ratio_H": [_ratio(gh[i + 1], gh[i]) for i in range(2)],
                     "ratio_V": [_ratio(gv[i + 1], gv[i]) for i in range(2)]})
    return {"config_hash": cfg.hash(), "deltas": deltas, "pairs": rows}


def _ratio(a, b):
    return a / b if b > 0 else None
