"""Flat, strictly typed run configuration.

Every key has a default; unknown keys, wrong types and out-of-range values
are rejected before anything is allocated.  The hash covers the fully
resolved key set, so two configs that differ only in omitted defaults hash
the same.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace

SCHEMES = ("ito-corrected", "heun")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # grid
    n1: int = 16
    n2: int = 16
    n3: int = 9
    h: float = 1.0
    alpha: float = 0.0
    # noise
    noise_n: int | None = None
    noise_phi: str | None = None
    noise_psi: str | None = None
    noise_sigma: str | None = None
    noise_field_file: str | None = None
    stratonovich: bool = False
    strat_scheme: str = "ito-corrected"
    # physics
    kappa: float = 0.0
    coriolis_k0: float = 0.0
    forcing_v: str = "zero"
    forcing_theta: str = "zero"
    linear: bool = False
    # initial data
    init_v: str = "zero"
    init_theta: str = "zero"
    init_seed: int = 0
    # time
    dt: float = 1e-3
    t_end: float = 0.1
    cfl_max: float = 0.5
    # ensemble
    paths: int = 1
    seed: int = 0
    gamma_grid: list | None = None
    workers: int = 1
    # io
    outdir: str = "out"
    emit_fields: bool = False
    record_every: int = 10
    # tolerances
    tol_div: float = 1e-10
    blowup_ceiling: float = 1e8

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        return check(replace(self, **{k: v for k, v in kw.items() if v is not None}))


_INT = {"n1", "n2", "n3", "noise_n", "init_seed", "paths", "seed", "workers", "record_every"}
_FLOAT = {"h", "alpha", "kappa", "coriolis_k0", "dt", "t_end", "cfl_max", "tol_div", "blowup_ceiling"}
_BOOL = {"stratonovich", "emit_fields", "linear"}
_STR = {"noise_phi", "noise_psi", "noise_sigma", "noise_field_file", "strat_scheme", "forcing_v",
        "forcing_theta", "init_v", "init_theta", "outdir"}
_NULLABLE = {"noise_n", "noise_phi", "noise_psi", "noise_sigma", "noise_field_file", "gamma_grid"}

KEYS = tuple(f.name for f in fields(RunConfig))


def _coerce(key, val):
    if val is None:
        if key in _NULLABLE:
            return None
        raise ConfigError(f"{key} may not be null")
    if key in _BOOL:
        if not isinstance(val, bool):
            raise ConfigError(f"{key} must be true or false")
        return val
    if key in _INT:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{key} must be an integer")
        return val
    if key in _FLOAT:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(val)
    if key in _STR:
        if not isinstance(val, str):
            raise ConfigError(f"{key} must be a string")
        return val
    if key == "gamma_grid":
        if not isinstance(val, list) or not val or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            raise ConfigError("gamma_grid must be a non-empty list of numbers or null")
        return [float(x) for x in val]
    raise ConfigError(f"unhandled key {key}")


def _require(ok, msg):
    if not ok:
        raise ConfigError(msg)


def check(cfg: RunConfig) -> RunConfig:
    for key in ("n1", "n2"):
        v = getattr(cfg, key)
        _require(v >= 4 and v % 2 == 0 and v <= 512, f"{key} must be even and in [4, 512]")
    _require(5 <= cfg.n3 <= 513, "n3 must be in [5, 513]")
    _require(math.isfinite(cfg.h) and cfg.h > 0, "h must be positive")
    _require(math.isfinite(cfg.alpha), "alpha must be finite")
    _require(cfg.noise_n is None or 0 <= cfg.noise_n <= 4096, "noise_n must be in [0, 4096]")
    _require(cfg.strat_scheme in SCHEMES, f"strat_scheme must be one of {SCHEMES}")
    for key in ("kappa", "coriolis_k0"):
        _require(math.isfinite(getattr(cfg, key)), f"{key} must be finite")
    _require(math.isfinite(cfg.dt) and cfg.dt > 0, "dt must be positive")
    _require(math.isfinite(cfg.t_end) and cfg.t_end >= 0, "t_end must be >= 0")
    _require(cfg.n_steps <= 10_000_000, "t_end / dt is too large")
    _require(0 < cfg.cfl_max <= 10, "cfl_max must be in (0, 10]")
    _require(1 <= cfg.paths <= 1_000_000, "paths must be in [1, 1e6]")
    _require(0 <= cfg.seed < 2 ** 64, "seed must fit in 64 bits")
    _require(0 <= cfg.init_seed < 2 ** 64, "init_seed must fit in 64 bits")
    _require(1 <= cfg.workers <= 256, "workers must be in [1, 256]")
    _require(cfg.record_every >= 1, "record_every must be >= 1")
    _require(0 < cfg.tol_div < 1, "tol_div must be in (0, 1)")
    _require(cfg.blowup_ceiling > 0, "blowup_ceiling must be positive")
    if cfg.gamma_grid is not None:
        g = cfg.gamma_grid
        _require(all(math.isfinite(x) and x > 0 for x in g), "gamma_grid values must be positive")
        _require(all(a < b for a, b in zip(g, g[1:])), "gamma_grid must be strictly increasing")
    return cfg


def from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return check(RunConfig(**{k: _coerce(k, v) for k, v in d.items()}))


def load(path) -> RunConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(d)
