"""Command line: ``python -m gesture_isac run|sweep``.

Exit status is 0 when every slot / sweep point finished without an
internal error, 1 if any reported ``internal_error``, 2 on bad arguments or
configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import optimizer as opt
from . import runner as rn
from . import scenario as sc
from .config import RunConfig, load_config


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gesture_isac", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb, helptext in (
        ("run", "simulate one episode and write per-slot, per-user rows"),
        ("sweep", "run the experiment section of the config and write the result table"),
    ):
        q = sub.add_parser(verb, help=helptext)
        q.add_argument("--config", help="YAML configuration file")
        q.add_argument("--out", required=True, help="output CSV path")
        q.add_argument("--seed", type=int, help="override the seed(s)")
        q.add_argument(
            "--mode",
            action="append",
            choices=rn.MODES,
            help="optimisation mode; repeat for several (sweep) ",
        )
        q.add_argument("-v", "--verbose", action="store_true")
    sweep = sub.choices["sweep"]
    sweep.add_argument("--kind", choices=rn.KINDS, help="override the experiment kind")
    sweep.add_argument("--values", type=float, nargs="+", help="override the axis values")
    sweep.add_argument("--workers", type=int, help="worker processes")
    return p


def _run(cfg: RunConfig, args) -> int:
    if args.mode and len(args.mode) > 1:
        raise ValueError("run takes a single --mode")
    mode = args.mode[0] if args.mode else cfg.mode
    seed = cfg.seed if args.seed is None else args.seed
    scen = sc.build_scenario(replace(cfg.scenario, rng_seed=seed))
    records = rn.run_episode(scen, mode, cfg.optimizer, cfg.tracker, seed, cfg.max_range)
    rn.emit_csv(records, args.out)
    return 1 if any(r.status == opt.INTERNAL_ERROR for r in records) else 0


def _sweep(cfg: RunConfig, args) -> int:
    spec = cfg.experiment
    if spec is None and args.kind is None:
        raise ValueError("sweep needs an experiment section or --kind/--values")
    if spec is None:
        spec = rn.ExperimentSpec(kind=args.kind, axis_values=tuple(args.values or (36.0,)))
    overrides = {}
    if args.kind:
        overrides["kind"] = args.kind
    if args.values:
        vals = args.values
        if (args.kind or spec.kind) == rn.M_SWEEP:
            vals = [int(v) for v in vals]
        overrides["axis_values"] = tuple(vals)
    if args.mode:
        overrides["modes"] = tuple(args.mode)
    if args.seed is not None:
        overrides["seeds"] = (args.seed,)
    if overrides:
        spec = rn.ExperimentSpec(**{**spec.__dict__, **overrides})
    workers = args.workers if args.workers else cfg.workers
    result = rn.run_experiment(spec, cfg.scenario, cfg.optimizer, cfg.tracker, workers, cfg.max_range)
    rn.emit_csv(result, args.out)
    return 1 if result.has_internal_error else 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        return _run(cfg, args) if args.verb == "run" else _sweep(cfg, args)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
