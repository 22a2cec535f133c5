"""Feed-forward ReLU classifiers with a flat weight vector and a frozen init snapshot."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ComputeGraph, FlatObjective, GraphBuilder

MAGIC = b"LPROBE1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    num_classes: int = 3
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim <= 0 or any(h <= 0 for h in self.hidden_dims):
            raise ValueError(f"all layer sizes must be positive: {self}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


class Model:
    """MLP whose weights live in one flat vector ``W``.

    Layout: for each layer, the (fan_in, fan_out) weight matrix row-major,
    then its bias. ``W0`` is a read-only copy of ``W`` taken at construction.
    """

    def __init__(self, spec: ModelSpec, weights=None, init_weights=None):
        self.spec = spec
        if weights is None:
            weights = _glorot(spec)
        w = np.array(weights, dtype=np.float64)
        if w.shape != (spec.param_count,):
            raise ValueError(f"expected {spec.param_count} weights, got shape {w.shape}")
        w0 = w.copy() if init_weights is None else np.array(init_weights, dtype=np.float64)
        if w0.shape != w.shape:
            raise ValueError("init snapshot has the wrong length")
        w0.setflags(write=False)
        self.W = w
        self.W0 = w0
        self._graphs: dict = {}

    @property
    def param_count(self) -> int:
        return self.spec.param_count

    def get_flat_weights(self) -> np.ndarray:
        return self.W.copy()

    def set_flat_weights(self, v) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} weights, got shape {v.shape}")
        self.W = v.copy()

    def copy(self) -> "Model":
        return Model(self.spec, self.W, self.W0)

    # graphs -----------------------------------------------------------

    def _params(self, b: GraphBuilder) -> list[tuple[int, int]]:
        return [
            (b.param(f"W{i}", shape), b.param(f"b{i}", (shape[1],)))
            for i, shape in enumerate(self.spec.layer_shapes)
        ]

    @staticmethod
    def _mlp(b: GraphBuilder, x: int, params) -> int:
        h = x
        for i, (w, bias) in enumerate(params):
            h = b.add(b.matmul(h, w), bias)
            if i < len(params) - 1:
                h = b.relu(h)
        return h

    def _param_ids(self, g: ComputeGraph) -> list[int]:
        ids = []
        for i in range(len(self.spec.layer_shapes)):
            ids += [g[f"W{i}"], g[f"b{i}"]]
        return ids

    def graph(self, kind: str, batch_size: int, lambda_c: float = 0.0) -> ComputeGraph:
        """Cached graph: "logits", "ce" (mean cross-entropy) or "consistency"."""
        key = (kind, batch_size, lambda_c)
        if key in self._graphs:
            return self._graphs[key]
        b = GraphBuilder()
        x = b.input("x", (batch_size, self.spec.input_dim))
        params = self._params(b)
        logits = self._mlp(b, x, params)
        if kind == "logits":
            out = logits
        elif kind == "ce":
            y = b.input("y", (batch_size,))
            out = b.mean(b.cross_entropy(logits, y))
        elif kind == "consistency":
            y = b.input("y", (batch_size,))
            xv = b.input("x_view", (batch_size, self.spec.input_dim))
            h = self._mlp(b, xv, params)  # same parameter nodes as the clean view
            per_row = b.add(
                b.scale(b.cross_entropy(logits, y), 0.5),
                b.scale(b.cross_entropy(h, y), 0.5),
            )
            if lambda_c != 0.0:
                kl = b.kl_div(b.softmax(logits), b.softmax(h))
                per_row = b.add(per_row, b.scale(kl, lambda_c))
            out = b.mean(per_row)
        else:
            raise ValueError(f"unknown graph kind {kind!r}")
        g = b.build(out)
        self._graphs[key] = g
        return g

    def _check_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"batch must have shape (B, {self.spec.input_dim}), got {x.shape}")
        return x

    def objective(self, x, y) -> FlatObjective:
        """Mean cross-entropy on (x, y) as a function of the flat weights."""
        x = self._check_batch(x)
        g = self.graph("ce", len(x))
        return FlatObjective(g, self._param_ids(g), {"x": x, "y": np.asarray(y, dtype=np.float64)})

    def consistency_objective(self, x, x_view, y, lambda_c: float) -> FlatObjective:
        x = self._check_batch(x)
        x_view = self._check_batch(x_view)
        g = self.graph("consistency", len(x), float(lambda_c))
        fixed = {"x": x, "x_view": x_view, "y": np.asarray(y, dtype=np.float64)}
        return FlatObjective(g, self._param_ids(g), fixed)

    def forward(self, x, weights=None) -> np.ndarray:
        """Logits for a (B, input_dim) batch, at ``weights`` or the current W."""
        x = self._check_batch(x)
        g = self.graph("logits", len(x))
        obj = FlatObjective(g, self._param_ids(g), {"x": x})
        return g.evaluate(obj._bind(self.W if weights is None else weights)).data.copy()

    def loss(self, x, y, weights=None) -> float:
        return self.objective(x, y).loss(self.W if weights is None else weights)


def _glorot(spec: ModelSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.init_seed)
    parts = []
    for fan_in, fan_out in spec.layer_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def init_model(spec: ModelSpec) -> Model:
    return Model(spec)


def get_flat_weights(model: Model) -> np.ndarray:
    return model.get_flat_weights()


def set_flat_weights(model: Model, v) -> None:
    model.set_flat_weights(v)


def forward(model: Model, batch) -> np.ndarray:
    return model.forward(batch)


# checkpoint file -------------------------------------------------------------

def save_checkpoint(model: Model, path) -> None:
    s = model.spec
    header = [
        f"input_dim={s.input_dim}",
        f"hidden_dims={','.join(str(h) for h in s.hidden_dims)}",
        f"num_classes={s.num_classes}",
        f"activation={s.activation}",
        f"init_seed={s.init_seed}",
        f"param_count={s.param_count}",
    ]
    n = s.param_count
    with open(path, "wb") as f:
        f.write(MAGIC + b"\n")
        f.write(("\n".join(header) + "\n\n").encode("ascii"))
        f.write(struct.pack(f"<{n}d", *model.W))
        f.write(struct.pack(f"<{n}d", *model.W0))


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC + b"\n"):
        raise CheckpointError(f"{path}: not an {MAGIC.decode()} checkpoint")
    end = raw.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise CheckpointError(f"{path}: truncated header")
    fields = {}
    for line in raw[len(MAGIC) + 1 : end].decode("ascii").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        fields[key] = value
    try:
        hidden = tuple(int(h) for h in fields["hidden_dims"].split(",") if h)
        spec = ModelSpec(
            input_dim=int(fields["input_dim"]),
            hidden_dims=hidden,
            num_classes=int(fields["num_classes"]),
            activation=fields["activation"],
            init_seed=int(fields["init_seed"]),
        )
        declared = int(fields["param_count"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from None
    n = spec.param_count
    if declared != n:
        raise CheckpointError(f"{path}: header says {declared} params, spec implies {n}")
    body = raw[end + 2 :]
    if len(body) != 16 * n:
        raise CheckpointError(f"{path}: expected {16 * n} weight bytes, found {len(body)}")
    w = np.array(struct.unpack(f"<{n}d", body[: 8 * n]))
    w0 = np.array(struct.unpack(f"<{n}d", body[8 * n :]))
    return Model(spec, w, w0)
