"""Multi-seed, multi-objective experiment runner.

Every (objective, seed) run trains on the anchor domain, measures every
shifted domain, and the reports are reduced into correlation and stability
tables. Output files depend only on the plan, never on ``jobs``.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .analysis import GROUPINGS, correlate_measures
from .config import Config, ConfigError, config_from_dict, config_to_dict, load_config
from .measures import MeasureReport, measure_all, write_reports_csv
from .model import Model
from .objectives import TrainingDiverged, train

log = logging.getLogger(__name__)

GROUPING_NOTE = (
    "model: one trained model, correlation across domains; "
    "objective: all seeds of one objective pooled; pooled: every run pooled. "
    "Which of these a per-model correlation table should use is ambiguous, so all are emitted."
)


@dataclass(frozen=True)
class ExperimentPlan:
    config: Config

    @classmethod
    def from_config(cls, cfg: Config) -> "ExperimentPlan":
        if not cfg.experiment.objectives or not cfg.experiment.seeds:
            raise ConfigError("an experiment needs at least one objective and one seed")
        return cls(cfg)

    @property
    def objectives(self):
        return self.config.experiment.objectives

    @property
    def seeds(self):
        return self.config.experiment.seeds

    def runs(self) -> list[tuple[str, int]]:
        return [(o, s) for o in self.objectives for s in self.seeds]

    def to_dict(self) -> dict:
        return config_to_dict(self.config)


def load_plan(path) -> ExperimentPlan:
    """Read a plan from an INI config or from a plan.json echo."""
    path = Path(path)
    if path.suffix == ".json":
        try:
            cfg = config_from_dict(json.loads(path.read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    else:
        cfg = load_config(path)
    return ExperimentPlan.from_config(cfg)


@dataclass
class RunOutput:
    run_id: str
    objective: str
    seed: int
    status: str = "ok"
    error: str = ""
    reports: list[MeasureReport] = field(default_factory=list)
    history: list[tuple[float, float]] = field(default_factory=list)
    best_epoch: int = 0


@dataclass
class ExperimentBundle:
    runs: list[RunOutput]
    reports: list[MeasureReport]
    correlations: list
    stability: list[tuple[str, float, float, int]]

    @property
    def partial(self) -> bool:
        return any(r.status != "ok" for r in self.runs)


@lru_cache(maxsize=4)
def _suite(suite_cfg):
    return suite_cfg.build()


def run_one(plan: ExperimentPlan, objective: str, seed: int) -> RunOutput:
    cfg = plan.config
    run_id = f"{objective}-seed{seed}"
    out = RunOutput(run_id, objective, seed)
    try:
        suite = _suite(cfg.suite)
        model_spec = cfg.model.spec(suite.input_dim, suite.num_classes, init_seed=seed)
        model = Model(model_spec)
        result = train(model, suite.train, suite.val, replace(cfg.train, objective=objective, seed=seed))
        out.history = list(zip(result.train_loss, result.val_accuracy))
        out.best_epoch = result.best_epoch
        out.reports = measure_all(
            model, suite, cfg.measure.sharpness(), cfg.measure.alpha(),
            model_id=run_id, objective=objective, seed=seed,
        )
    except TrainingDiverged as exc:
        out.status, out.error = "diverged", str(exc)
    except Exception as exc:  # noqa: BLE001 - recorded in the bundle
        out.status, out.error = "failed", f"{type(exc).__name__}: {exc}"
    return out


def _star(args):
    return run_one(*args)


def stability_table(reports) -> list[tuple[str, float, float, int]]:
    """(objective, mean over seeds, std over seeds, n seeds) of per-seed mean accuracy."""
    per_seed: dict[str, dict[int, list[float]]] = {}
    for r in reports:
        per_seed.setdefault(r.objective, {}).setdefault(r.seed, []).append(r.accuracy)
    rows = []
    for obj, seeds in per_seed.items():
        means = np.array([np.mean(v) for _, v in sorted(seeds.items())])
        rows.append((obj, float(means.mean()), float(means.std()), len(means)))
    return rows


def run_experiment(plan: ExperimentPlan, out_dir=None, jobs: int = 1) -> ExperimentBundle:
    tasks = [(plan, o, s) for o, s in plan.runs()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_star, tasks))
    else:
        runs = [run_one(*t) for t in tasks]
    for r in runs:
        if r.status != "ok":
            log.error("run %s %s: %s", r.run_id, r.status, r.error)
    reports = [rep for r in runs for rep in r.reports]
    correlations = [c for g in GROUPINGS for c in correlate_measures(reports, g)]
    bundle = ExperimentBundle(runs, reports, correlations, stability_table(reports))
    if out_dir is not None:
        write_bundle(plan, bundle, out_dir)
    return bundle


def write_bundle(plan: ExperimentPlan, bundle: ExperimentBundle, out_dir) -> None:
    out = Path(out_dir)
    (out / "history").mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")
    write_reports_csv(bundle.reports, out / "reports.csv")
    with open(out / "correlations.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["group", "measure", "r", "n"])
        for c in bundle.correlations:
            w.writerow([c.group, c.measure, f"{c.r:.17g}", c.n])
    with open(out / "stability.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["objective", "mean_acc", "std_acc"])
        for obj, mean, std, _ in bundle.stability:
            w.writerow([obj, f"{mean:.17g}", f"{std:.17g}"])
    for r in bundle.runs:
        with open(out / "history" / f"{r.run_id}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_accuracy"])
            for i, (loss, acc) in enumerate(r.history, start=1):
                w.writerow([i, f"{loss:.17g}", f"{acc:.17g}"])
    excluded = {}
    for rep in bundle.reports:
        if rep.phi_alpha_failed:
            excluded[rep.model_id] = excluded.get(rep.model_id, 0) + 1
    meta = {
        "partial": bundle.partial,
        "runs": [{"run_id": r.run_id, "status": r.status, "error": r.error, "best_epoch": r.best_epoch} for r in bundle.runs],
        "groupings": GROUPING_NOTE,
        "phi_alpha_excluded_rows": excluded,
    }
    (out / "bundle.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
