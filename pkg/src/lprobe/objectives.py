"""Training procedures: AdamW baseline, SAM, Fisher penalty, view consistency."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import defaults as D
from .autodiff import FlatObjective, GraphError

OBJECTIVES = D.OBJECTIVES
GRAD_NORM_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, detail: str = ""):
        self.epoch, self.step = epoch, step
        super().__init__(f"training diverged at epoch {epoch}, step {step}" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "baseline"
    epochs: int = D.EPOCHS
    batch_size: int = D.BATCH_SIZE
    learning_rate: float = D.LEARNING_RATE
    weight_decay: float = D.WEIGHT_DECAY
    seed: int = 0
    sam_rho: float = D.SAM_RHO
    fisher_lambda: float = D.FISHER_LAMBDA
    consistency_lambda: float = D.CONSISTENCY_LAMBDA
    view_noise_sigma: float = D.VIEW_NOISE_SIGMA
    betas: tuple[float, float] = D.ADAM_BETAS
    eps: float = D.ADAM_EPS

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.objective == "sam" and not self.sam_rho > 0:
            raise ValueError("sam_rho must be > 0")
        if self.fisher_lambda < 0 or self.consistency_lambda < 0 or self.view_noise_sigma < 0:
            raise ValueError("fisher_lambda, consistency_lambda and view_noise_sigma must be >= 0")


@dataclass
class TrainResult:
    model: object = field(compare=False, repr=False)
    weights: np.ndarray = field(repr=False)
    train_loss: list[float]
    val_accuracy: list[float]
    best_epoch: int  # 1-based
    wall_time: float = field(compare=False, default=0.0)

    def __eq__(self, other):
        if not isinstance(other, TrainResult):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and self.train_loss == other.train_loss
            and self.val_accuracy == other.val_accuracy
            and self.best_epoch == other.best_epoch
        )

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_accuracy"])
            for i, (loss, acc) in enumerate(zip(self.train_loss, self.val_accuracy), start=1):
                w.writerow([i, f"{loss:.17g}", f"{acc:.17g}"])


# optimizers ---------------------------------------------------------------------

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.lr == 0:  # w - 0 * g would turn -0.0 into +0.0
            return w.copy()
        return w - self.lr * g


class AdamW:
    """Adam with decoupled weight decay; moments start at zero."""

    def __init__(self, lr=D.LEARNING_RATE, betas=D.ADAM_BETAS, eps=D.ADAM_EPS, weight_decay=D.WEIGHT_DECAY):
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self.m = self.v = None
        self.t = 0

    def update(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        if self.m is None:
            self.m, self.v = np.zeros_like(w), np.zeros_like(w)
        b1, b2 = self.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        if self.lr == 0:
            return w.copy()
        w = w - self.lr * self.weight_decay * w
        return w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _apply(model, optimizer, g) -> None:
    model.set_flat_weights(optimizer.update(model.get_flat_weights(), g))


def adamw_step(model, objective: FlatObjective, optimizer: AdamW) -> float:
    """One AdamW step on ``objective``; returns the loss before the update."""
    loss, g = objective.value_and_grad(model.get_flat_weights())
    _apply(model, optimizer, g)
    return loss


def sam_gradient(objective: FlatObjective, w: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
    """Loss at ``w`` and the gradient at the worst-case point ``w + rho g/|g|``.

    Falls back to the plain gradient when |g| is below 1e-12.
    """
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    loss, g = objective.value_and_grad(w)
    norm = np.linalg.norm(g)
    if norm < GRAD_NORM_FLOOR:
        return loss, g
    return loss, objective.grad(w + (rho / norm) * g)


def sam_step(model, objective: FlatObjective, rho: float, optimizer) -> float:
    # the perturbed point is never written into the model, so W is untouched
    # until the base update
    loss, g = sam_gradient(objective, model.get_flat_weights(), rho)
    _apply(model, optimizer, g)
    return loss


def fisher_penalty(objective: FlatObjective, w) -> float:
    """Squared norm of the minibatch-mean gradient at ``w``."""
    g = objective.grad(w)
    return float(g @ g)


def hessian_vector_product(objective: FlatObjective, w, v, r: float = 1e-5) -> np.ndarray:
    """H(w) v from central differences of exact gradients along v/|v|."""
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros_like(v)
    u = v / norm
    return norm * (objective.grad(w + r * u) - objective.grad(w - r * u)) / (2 * r)


def fisher_value_and_grad(objective: FlatObjective, w, fisher_lambda: float) -> tuple[float, np.ndarray]:
    """CE + lambda |g|^2 and its gradient g + 2 lambda H g."""
    loss, g = objective.value_and_grad(w)
    total = loss + fisher_lambda * float(g @ g)
    if fisher_lambda == 0:
        return total, g
    return total, g + 2.0 * fisher_lambda * hessian_vector_product(objective, w, g)


def consistency_loss(model, x, y, view_noise_sigma: float, lambda_c: float, seed) -> float:
    """Mean of half-CE on clean and noisy views plus lambda_c * KL(clean || noisy)."""
    if view_noise_sigma < 0:
        raise ValueError("view_noise_sigma must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    view = x + view_noise_sigma * np.random.default_rng(seed).standard_normal(x.shape)
    return model.consistency_objective(x, view, y, lambda_c).loss(model.W)


# training loop -------------------------------------------------------------------

def _accuracy(model, data) -> float:
    return float(np.mean(np.argmax(model.forward(data.x), axis=1) == data.y))


def train(model, train_data, val_data, config: TrainConfig) -> TrainResult:
    """Train in place on the anchor train split; keep the best-validation weights.

    Only the anchor splits are accepted, so shifted domains cannot leak in.
    On return ``model.W`` holds the selected checkpoint.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("anchor train and validation splits must be nonempty")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    opt = AdamW(config.learning_rate, config.betas, config.eps, config.weight_decay)
    n = len(train_data)
    losses, accs = [], []
    best_acc, best_epoch, best_w = -1.0, 0, model.get_flat_weights()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for step, start_idx in enumerate(range(0, n, config.batch_size)):
            idx = order[start_idx : start_idx + config.batch_size]
            xb, yb = train_data.x[idx], train_data.y[idx]
            w = model.get_flat_weights()
            try:
                if config.objective == "consistency":
                    view = xb + config.view_noise_sigma * rng.standard_normal(xb.shape)
                    obj = model.consistency_objective(xb, view, yb, config.consistency_lambda)
                else:
                    obj = model.objective(xb, yb)
                if config.objective == "sam":
                    loss, g = sam_gradient(obj, w, config.sam_rho)
                elif config.objective == "fisher":
                    loss, g = fisher_value_and_grad(obj, w, config.fisher_lambda)
                else:
                    loss, g = obj.value_and_grad(w)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"loss {loss}")
                model.set_flat_weights(opt.update(w, g))
            except (GraphError, FloatingPointError) as exc:
                raise TrainingDiverged(epoch, step, str(exc)) from exc
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        acc = _accuracy(model, val_data)
        accs.append(acc)
        if acc > best_acc:
            best_acc, best_epoch, best_w = acc, epoch, model.get_flat_weights()
    model.set_flat_weights(best_w)
    return TrainResult(model, best_w.copy(), losses, accs, best_epoch, time.perf_counter() - start)


def config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["betas"] = list(d["betas"])
    return d
