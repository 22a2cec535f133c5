"""Accuracy, Pearson correlation and measure-vs-accuracy correlation tables."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MEASURES = ("margin", "phi_difference", "phi_alpha", "frobenius_distance")
GROUPINGS = ("model", "objective", "pooled")


class UndefinedCorrelation(ValueError):
    pass


def accuracy(model, dataset) -> float:
    """Fraction of argmax hits; ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError("accuracy of an empty dataset")
    logits = model.forward(dataset.x)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.y))


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 3:
        raise ValueError("need at least 3 points")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(dx @ dx), math.sqrt(dy @ dy)
    # relative test so that float noise in a constant column still counts as constant
    if sx <= 1e-14 * max(1.0, float(np.abs(x).max())) or sy <= 1e-14 * max(1.0, float(np.abs(y).max())):
        raise UndefinedCorrelation("undefined correlation: constant input")
    r = (dx @ dy) / (sx * sy)
    return float(min(1.0, max(-1.0, r)))


@dataclass(frozen=True)
class CorrelationResult:
    group: str
    grouping: str
    measure: str
    r: float
    n: int


def _group_key(report, grouping: str) -> str:
    if grouping == "model":
        return f"model:{report.objective}:{report.seed}"
    if grouping == "objective":
        return f"objective:{report.objective}"
    return "pooled"


def correlate_measures(reports, grouping: str = "model") -> list[CorrelationResult]:
    """r(measure, accuracy) per group.

    ``model`` groups one trained model's rows across domains, ``objective``
    pools every seed of an objective, ``pooled`` pools everything. Rows with a
    failed alpha search are dropped from the phi_alpha coefficient only.
    Groups with fewer than 3 rows, and measures that are constant within a
    group, are skipped with a warning.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}")
    groups: dict[str, list] = {}
    for rep in reports:
        groups.setdefault(_group_key(rep, grouping), []).append(rep)
    out = []
    for key, rows in groups.items():
        if len(rows) < 3:
            log.warning("group %s has %d rows; skipped", key, len(rows))
            continue
        for measure in MEASURES:
            use = rows
            if measure == "phi_alpha":
                use = [r for r in rows if not r.phi_alpha_failed]
                if len(rows) - len(use):
                    log.info("group %s: %d phi_alpha rows excluded", key, len(rows) - len(use))
                if len(use) < 3:
                    continue
            try:
                r = pearson([getattr(u, measure) for u in use], [u.accuracy for u in use])
            except UndefinedCorrelation:
                log.warning("group %s: %s is constant; no coefficient", key, measure)
                continue
            out.append(CorrelationResult(key, grouping, measure, r, len(use)))
    return out
