"""Command line entry point: validate, run, ensemble, contdep, selftest."""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import io
from .config import SCHEMES, ConfigError, RunConfig, load
from .runner import SetupError, build, continuous_dependence, run_ensemble, run_path


def _config(args) -> RunConfig:
    cfg = load(args.config) if args.config else RunConfig()
    over = {"seed": args.seed, "paths": args.paths, "outdir": args.out}
    if args.stratonovich:
        over.update(stratonovich=True, strat_scheme=args.stratonovich)
    return cfg.with_overrides(**over)


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    p.add_argument("--paths", type=int, metavar="N", help="number of paths override")
    p.add_argument("--out", metavar="DIR", help="output directory override")
    p.add_argument("--stratonovich", choices=SCHEMES, help="treat the noise as Stratonovich")


def cmd_validate(args):
    from ..noise import validate
    cfg = _config(args)
    setup = build(cfg)
    rep = validate(setup.nm_raw)
    print(json.dumps({"config_hash": cfg.hash(), "config": cfg.to_dict(),
                      "noise_report": rep.to_dict()}, indent=2))
    return 0 if rep.ok else 1


def cmd_run(args):
    cfg = _config(args)
    t0 = time.perf_counter()
    records, final = run_path(cfg, args.path)
    last = records[-1] if records else None
    print(f"path {args.path}: {final.step} steps, t = {final.t:.6g}, "
          f"{time.perf_counter() - t0:.2f} s, blow-up = {bool(last and last.blowup_flag)}")
    print(f"wrote {Path(cfg.outdir) / f'path-{args.path}.ndjson'}")
    return 0


def cmd_ensemble(args):
    cfg = _config(args)
    t0 = time.perf_counter()
    summary = run_ensemble(cfg)
    print(f"{summary['completed']}/{cfg.paths} paths, {summary['blowups']} blow-ups, "
          f"{len(summary['failures'])} failures, {time.perf_counter() - t0:.1f} s")
    print(f"wrote {Path(cfg.outdir) / 'summary.json'}")
    return 0 if not summary["failures"] else 1


def cmd_contdep(args):
    cfg = _config(args)
    rep = continuous_dependence(cfg, args.delta)
    io.write_json(Path(cfg.outdir) / "contdep.json", rep)
    for row in rep["pairs"]:
        print(f"path {row['path']}: gap_H {row['gap_H']}  ratios {row['ratio_H']}")
    print(f"wrote {Path(cfg.outdir) / 'contdep.json'}")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest
    return 0 if run_selftest(args.seed or 0) else 1


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hydrostoch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in [("validate", cmd_validate, None), ("run", cmd_run, "path"),
                            ("ensemble", cmd_ensemble, None), ("contdep", cmd_contdep, "delta"),
                            ("selftest", cmd_selftest, None)]:
        p = sub.add_parser(name)
        _add_common(p)
        if extra == "path":
            p.add_argument("--path", type=int, default=0, help="path index")
        if extra == "delta":
            p.add_argument("--delta", type=float, default=1e-2, help="initial perturbation size")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
