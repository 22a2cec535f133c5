"""Generalization measures: margin, difference sharpness, alpha sharpness, distance from init."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import defaults as D
from .analysis import accuracy

log = logging.getLogger(__name__)

NOISE_SCALES = D.NOISE_SCALES
REPORT_COLUMNS = (
    "model_id",
    "objective",
    "seed",
    "domain",
    "accuracy",
    "margin",
    "phi_difference",
    "phi_alpha",
    "phi_alpha_failed",
    "frobenius_distance",
)


@dataclass(frozen=True)
class SharpnessConfig:
    noise_scale: float = D.NOISE_SCALE
    ascent_coeff: float = D.ASCENT_COEFF
    radius_lambda: float = D.RADIUS_LAMBDA
    batch_size: int = D.SHARPNESS_BATCH_SIZE
    num_batches: int = D.SHARPNESS_NUM_BATCHES
    seed: int = 0

    def __post_init__(self):
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be > 0")
        if not self.ascent_coeff > 0:
            raise ValueError("ascent_coeff must be > 0")
        if not 0 < self.radius_lambda < 1:
            raise ValueError("radius_lambda must lie in (0, 1)")
        if self.batch_size < 1 or self.num_batches < 1:
            raise ValueError("batch_size and num_batches must be >= 1")


@dataclass(frozen=True)
class AlphaSharpnessConfig:
    loss_target_offset: float = D.LOSS_TARGET_OFFSET
    ascent_steps: int = D.ASCENT_STEPS
    binary_search_iters: int = D.BINARY_SEARCH_ITERS
    alpha_bounds: tuple[float, float] = D.ALPHA_BOUNDS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha_bounds", tuple(float(a) for a in self.alpha_bounds))
        lo, hi = self.alpha_bounds
        if not 0 < lo < hi:
            raise ValueError(f"alpha_bounds must satisfy 0 < lo < hi, got {self.alpha_bounds}")
        if self.binary_search_iters < 1 or self.ascent_steps < 1:
            raise ValueError("binary_search_iters and ascent_steps must be >= 1")


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def margin(model, dataset) -> float:
    """Mean of (true-class logit - best other logit); can be negative."""
    if len(dataset) == 0:
        raise ValueError("margin of an empty dataset")
    logits = model.forward(dataset.x)
    rows = np.arange(len(dataset))
    true = logits[rows, dataset.y]
    others = logits.copy()
    others[rows, dataset.y] = -np.inf
    return float(np.mean(true - others.max(axis=1)))


def frobenius_distance(model) -> float:
    return float(np.linalg.norm(model.W - model.W0))


def weight_noise(objective, weights, scale: float, rng) -> np.ndarray:
    """Gaussian noise, per parameter tensor scaled by ``scale`` times that tensor's RMS."""
    eps = np.empty_like(weights)
    for seg in objective.segments:
        rms = float(np.sqrt(np.mean(weights[seg] ** 2)))
        eps[seg] = scale * (rms if rms > 0 else 1.0) * rng.standard_normal(seg.stop - seg.start)
    return eps


def difference_step(objective, weights, cfg: SharpnessConfig, noise) -> tuple[np.ndarray, float]:
    """Perturbed point w' and projection radius p for difference sharpness."""
    w0 = np.asarray(weights, dtype=np.float64)
    w = w0 + np.asarray(noise, dtype=np.float64)
    w_new = w + cfg.ascent_coeff * objective.grad(w)
    radius = cfg.radius_lambda * float(np.linalg.norm(w_new))
    disp = w_new - w0
    dist = float(np.linalg.norm(disp))
    if dist > radius:
        w_new = w0 + disp / dist * radius
    return w_new, radius


def phi_difference(objective, weights, cfg: SharpnessConfig, noise=None, rng=None) -> float:
    """Difference-based sharpness around ``weights``.

    Noisy start, one gradient-ascent step of size ``ascent_coeff``, projection
    onto the ball of radius ``radius_lambda * |w'|`` centred at ``weights``,
    then the loss increase relative to ``weights``. ``noise`` overrides the
    random start offset. Nothing is written back into a model.
    """
    w0 = np.array(weights, dtype=np.float64)
    if noise is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        noise = weight_noise(objective, w0, cfg.noise_scale, rng)
    w_new, _ = difference_step(objective, w0, cfg, noise)
    result = objective.loss(w_new) - objective.loss(w0)
    if not math.isfinite(result):
        raise FloatingPointError("non-finite loss in difference sharpness")
    return result


@dataclass(frozen=True)
class AlphaSharpness:
    alpha: float | None
    phi: float | None
    failed: bool


def _worst_loss(objective, w, alpha, steps, rng) -> float:
    """Projected sign-gradient ascent in the box |u_i| <= alpha; best loss seen."""
    u = alpha * rng.uniform(-1.0, 1.0, size=w.shape)
    best = -math.inf
    for _ in range(steps):
        loss, g = objective.value_and_grad(w + u)
        if not math.isfinite(loss):
            return math.inf
        best = max(best, loss)
        u = np.clip(u + 0.5 * alpha * np.sign(g), -alpha, alpha)
    loss = objective.loss(w + u)
    return max(best, loss) if math.isfinite(loss) else math.inf


def phi_alpha(objective, weights, init_weights, cfg: AlphaSharpnessConfig) -> AlphaSharpness:
    """Alpha sharpness |W - W0|^2 / (4 alpha^2) for the largest feasible alpha.

    alpha is feasible when the approximate worst loss in the box of half-width
    alpha stays below loss(W) + ``loss_target_offset``. Geometric bisection
    over ``alpha_bounds``; a result stuck at either bound is flagged failed.
    """
    w = np.array(weights, dtype=np.float64)
    num = float(np.sum((w - np.asarray(init_weights, dtype=np.float64)) ** 2))
    rng = np.random.default_rng(cfg.seed)
    try:
        target = objective.loss(w) + cfg.loss_target_offset
    except (ValueError, FloatingPointError):
        return AlphaSharpness(None, None, True)

    def feasible(a):
        try:
            return _worst_loss(objective, w, a, cfg.ascent_steps, rng) < target
        except (ValueError, FloatingPointError):  # divergence counts as infeasible
            return False

    lo, hi = cfg.alpha_bounds
    if feasible(hi) or not feasible(lo):
        return AlphaSharpness(None, None, True)
    for _ in range(cfg.binary_search_iters):
        mid = math.sqrt(lo * hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    alpha = lo
    if alpha == cfg.alpha_bounds[0] or hi == cfg.alpha_bounds[1]:
        return AlphaSharpness(alpha, None, True)
    return AlphaSharpness(alpha, num / (4.0 * alpha * alpha), False)


@dataclass
class MeasureReport:
    model_id: str
    objective: str
    seed: int
    domain: str
    accuracy: float
    margin: float
    phi_difference: float
    phi_alpha: float | None
    phi_alpha_failed: bool
    frobenius_distance: float
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else f"{v:.17g}"

        return [
            self.model_id,
            self.objective,
            str(self.seed),
            self.domain,
            fmt(self.accuracy),
            fmt(self.margin),
            fmt(self.phi_difference),
            fmt(self.phi_alpha),
            "true" if self.phi_alpha_failed else "false",
            fmt(self.frobenius_distance),
        ] + [fmt(v) for v in self.extra.values()]


def sharpness_batches(dataset, cfg: SharpnessConfig, stream: int):
    for b in range(cfg.num_batches):
        yield dataset.batch(cfg.batch_size, [cfg.seed, stream, b])


def domain_phi_difference(model, dataset, cfg: SharpnessConfig, stream: int) -> float:
    """Mean difference sharpness over ``cfg.num_batches`` seeded batches of ``dataset``."""
    vals = []
    for b, batch in enumerate(sharpness_batches(dataset, cfg, stream)):
        rng = np.random.default_rng([cfg.seed, stream, b, 1])
        vals.append(phi_difference(model.objective(batch.x, batch.y), model.W, cfg, rng=rng))
    return float(np.mean(vals))


def measure_all(
    model,
    suite,
    sharpness: SharpnessConfig | None = None,
    alpha: AlphaSharpnessConfig | None = None,
    *,
    model_id: str = "model",
    objective: str = "",
    seed: int = 0,
    sweep_noise=None,
) -> list[MeasureReport]:
    """One report per shifted domain.

    Sharpness is evaluated on seeded batches of each domain's own eval set;
    Frobenius distance is model-level and repeated on every row. A failing
    measure leaves NaN in its row and the remaining domains still run.
    """
    sharpness = sharpness or SharpnessConfig()
    alpha = alpha or AlphaSharpnessConfig()
    chash = config_hash(sharpness, alpha)
    frob = frobenius_distance(model)
    saved = model.get_flat_weights()
    reports = []
    try:
        for m, (spec, data) in enumerate(suite.shifted):
            rep = MeasureReport(model_id, objective, seed, spec.name, math.nan, math.nan, math.nan, None, True, frob, chash)
            try:
                rep.accuracy = accuracy(model, data)
                rep.margin = margin(model, data)
                rep.phi_difference = domain_phi_difference(model, data, sharpness, m)
                batch = next(sharpness_batches(data, sharpness, m))
                res = phi_alpha(model.objective(batch.x, batch.y), model.W, model.W0, alpha)
                rep.phi_alpha, rep.phi_alpha_failed = res.phi, res.failed
                for s in sweep_noise or ():
                    cfg = SharpnessConfig(s, sharpness.ascent_coeff, sharpness.radius_lambda,
                                          sharpness.batch_size, sharpness.num_batches, sharpness.seed)
                    rep.extra[f"phi_difference_{s:g}"] = domain_phi_difference(model, data, cfg, m)
            except Exception as exc:  # noqa: BLE001 - one bad row must not sink the rest
                log.error("measuring %s on %s failed: %s", model_id, spec.name, exc)
            reports.append(rep)
    finally:
        model.set_flat_weights(saved)
    return reports


def write_reports_csv(reports, path) -> None:
    extra_cols = list(reports[0].extra) if reports else []
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(list(REPORT_COLUMNS) + extra_cols)
        for rep in reports:
            w.writerow(rep.row())


def read_reports_csv(path) -> list[MeasureReport]:
    def num(s):
        return None if s == "" else float(s)

    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            extra = {k: num(row[k]) for k in reader.fieldnames if k not in REPORT_COLUMNS}
            out.append(MeasureReport(
                row["model_id"], row["objective"], int(row["seed"]), row["domain"],
                num(row["accuracy"]), num(row["margin"]), num(row["phi_difference"]),
                num(row["phi_alpha"]), row["phi_alpha_failed"] == "true",
                num(row["frobenius_distance"]), extra=extra,
            ))
    return out
