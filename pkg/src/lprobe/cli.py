"""Command-line entry point: ``lprobe gen-data | train | measure | experiment``.

Exit codes: 0 ok, 2 config error, 3 training diverged, 4 artifact mismatch,
5 experiment finished with failed runs.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .datagen import DataFormatError, load_suite, save_suite
from .experiment import ExperimentPlan, load_plan, run_experiment
from .measures import NOISE_SCALES, measure_all, write_reports_csv
from .model import CheckpointError, Model, load_checkpoint, save_checkpoint
from .objectives import OBJECTIVES, TrainingDiverged, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ARTIFACT, EXIT_PARTIAL = 0, 2, 3, 4, 5
SEED_ENV = "LPROBE_SEED"


class ArtifactError(Exception):
    pass


def _load_suite(path):
    try:
        return load_suite(path)
    except (OSError, KeyError, ValueError, DataFormatError) as exc:
        raise ArtifactError(f"cannot load suite from {path}: {exc}") from None


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    cfg.require("suite")
    try:
        suite = cfg.suite.build()
    except ValueError as exc:
        raise ConfigError(f"[suite] {exc}") from None
    save_suite(suite, args.out)
    print(f"anchor: train={len(suite.train)} val={len(suite.val)} test={len(suite.test)}")
    for spec, data in suite.shifted:
        print(f"{spec.name}: n={len(data)} theta={spec.shift_angle:.4f}")
    print(f"{1 + len(suite.shifted)} domains written to {args.out}")
    return EXIT_OK


def _seed_override(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg.require("model", "train")
    seed = _seed_override(args)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    overrides = {}
    if args.objective is not None:
        overrides["objective"] = args.objective
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    try:
        tcfg = replace(cfg.train, **overrides)
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None
    suite = _load_suite(args.suite)
    model = Model(cfg.model.spec(suite.input_dim, suite.num_classes))
    result = train(model, suite.train, suite.val, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    result.write_history(out / "history.csv")
    print(f"objective={tcfg.objective} best_epoch={result.best_epoch} "
          f"val_accuracy={result.val_accuracy[result.best_epoch - 1]:.4f}")
    return EXIT_OK


def cmd_measure(args) -> int:
    cfg = load_config(args.config)
    try:
        model = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        raise ArtifactError(str(exc)) from None
    suite = _load_suite(args.suite)
    if model.spec.input_dim != suite.input_dim or model.spec.num_classes != suite.num_classes:
        raise ArtifactError(
            f"checkpoint expects input_dim={model.spec.input_dim}, num_classes={model.spec.num_classes}; "
            f"suite has {suite.input_dim}, {suite.num_classes}"
        )
    reports = measure_all(
        model, suite, cfg.measure.sharpness(), cfg.measure.alpha(),
        model_id=args.model_id or Path(args.checkpoint).stem,
        objective=args.objective or "",
        seed=model.spec.init_seed,
        sweep_noise=NOISE_SCALES if args.sweep_noise else None,
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, args.out)
    failed = sum(r.phi_alpha_failed for r in reports)
    print(f"{len(reports)} rows written to {args.out} ({failed} alpha searches failed)")
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        exp = replace(plan.config.experiment, seeds=tuple(range(args.seeds)))
        plan = ExperimentPlan.from_config(replace(plan.config, experiment=exp))
    jobs = args.jobs if args.jobs is not None else plan.config.experiment.jobs
    bundle = run_experiment(plan, args.out, jobs=jobs)
    print(f"{'group':<28} {'measure':<20} {'r':>8} {'n':>5}")
    for c in bundle.correlations:
        if c.grouping == "objective":
            print(f"{c.group:<28} {c.measure:<20} {c.r:>8.3f} {c.n:>5}")
    if bundle.partial:
        for r in bundle.runs:
            print(f"{r.run_id}: {r.status}{' - ' + r.error if r.error else ''}")
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lprobe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a domain suite")
    g.add_argument("config")
    g.add_argument("out")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one model on the anchor domain")
    t.add_argument("config")
    t.add_argument("suite")
    t.add_argument("out", help="output directory for model.ckpt and history.csv")
    t.add_argument("--objective", choices=OBJECTIVES)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("measure", help="compute measures for a checkpoint")
    m.add_argument("checkpoint")
    m.add_argument("suite")
    m.add_argument("config")
    m.add_argument("out", help="reports CSV path")
    m.add_argument("--sweep-noise", action="store_true",
                   help="add one difference-sharpness column per candidate noise scale")
    m.add_argument("--objective", help="label written into the objective column")
    m.add_argument("--model-id")
    m.set_defaults(func=cmd_measure)

    e = sub.add_parser("experiment", help="run a full multi-seed experiment")
    e.add_argument("plan")
    e.add_argument("out")
    e.add_argument("--jobs", type=int)
    e.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":
    sys.exit(main())
