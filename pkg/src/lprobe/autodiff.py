"""Dense float64 tensors and a small reverse-mode autodiff graph.

Graphs are built once with :class:`GraphBuilder` and then evaluated many
times against different leaf bindings. Nothing in a built graph mutates, so
one graph can be shared by every measure that re-evaluates the same loss at
different weight points.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

LEAF_KINDS = ("param", "input")
OP_KINDS = (
    "matmul",
    "add",
    "relu",
    "softmax",
    "log",
    "negate",
    "sum",
    "mean",
    "scale",
    "square",
    "l2_norm",
    "cross_entropy",
    "kl_div",
)

PROB_FLOOR = 1e-12


class GraphError(ValueError):
    """Raised for shape mismatches and non-finite values; names the node."""


class Tensor:
    """Immutable row-major float64 array with a finiteness guarantee."""

    __slots__ = ("data",)

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if any(s <= 0 for s in shape):
                raise ValueError(f"dimensions must be positive, got {shape}")
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"{arr.size} values do not fill shape {shape}")
            arr = arr.reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains NaN or Inf")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data.tolist()!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...]
    shape: tuple[int, ...]
    name: str | None = None
    factor: float = 1.0  # only used by "scale"

    def label(self) -> str:
        return f"node {self.id} ({self.kind}{', ' + self.name if self.name else ''})"


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise GraphError(f"shapes {a} and {b} do not broadcast") from None


class GraphBuilder:
    """Accumulates nodes; every method returns the new node id."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._names: dict[str, int] = {}

    def _add(self, kind, inputs=(), shape=(), name=None, factor=1.0) -> int:
        for i in inputs:
            if not 0 <= i < len(self._nodes):
                raise GraphError(f"unknown input node {i} for {kind}")
        node = Node(len(self._nodes), kind, tuple(inputs), tuple(shape), name, float(factor))
        if name is not None:
            if name in self._names:
                raise GraphError(f"duplicate node name {name!r}")
            self._names[name] = node.id
        self._nodes.append(node)
        return node.id

    def shape(self, node: int) -> tuple[int, ...]:
        return self._nodes[node].shape

    def param(self, name: str, shape: Sequence[int]) -> int:
        return self._leaf("param", name, shape)

    def input(self, name: str, shape: Sequence[int]) -> int:
        return self._leaf("input", name, shape)

    def _leaf(self, kind, name, shape):
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise GraphError(f"leaf {name!r} has non-positive dimension {shape}")
        return self._add(kind, (), shape, name)

    def matmul(self, a: int, b: int) -> int:
        sa, sb = self.shape(a), self.shape(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise GraphError(f"matmul needs (m,k)@(k,n), got {sa} @ {sb}")
        return self._add("matmul", (a, b), (sa[0], sb[1]))

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b), _broadcast_shape(self.shape(a), self.shape(b)))

    def relu(self, a: int) -> int:
        return self._add("relu", (a,), self.shape(a))

    def softmax(self, a: int) -> int:
        if not self.shape(a):
            raise GraphError("softmax needs at least one axis")
        return self._add("softmax", (a,), self.shape(a))

    def log(self, a: int) -> int:
        return self._add("log", (a,), self.shape(a))

    def negate(self, a: int) -> int:
        return self._add("negate", (a,), self.shape(a))

    def sum(self, a: int) -> int:
        return self._add("sum", (a,), ())

    def mean(self, a: int) -> int:
        return self._add("mean", (a,), ())

    def scale(self, a: int, factor: float) -> int:
        return self._add("scale", (a,), self.shape(a), factor=factor)

    def square(self, a: int) -> int:
        return self._add("square", (a,), self.shape(a))

    def l2_norm(self, a: int) -> int:
        return self._add("l2_norm", (a,), ())

    def cross_entropy(self, logits: int, labels: int) -> int:
        """Per-row ``-log softmax(logits)[label]``; labels hold class indices."""
        sl, sy = self.shape(logits), self.shape(labels)
        if len(sl) != 2 or sy != (sl[0],):
            raise GraphError(f"cross_entropy needs logits (B,K) and labels (B,), got {sl}, {sy}")
        if self._nodes[labels].kind != "input":
            raise GraphError("cross_entropy labels must be an input leaf")
        return self._add("cross_entropy", (logits, labels), (sl[0],))

    def kl_div(self, p: int, q: int) -> int:
        """KL(p || q) reduced over the last axis."""
        sp, sq = self.shape(p), self.shape(q)
        if sp != sq or not sp:
            raise GraphError(f"kl_div needs equal non-scalar shapes, got {sp}, {sq}")
        return self._add("kl_div", (p, q), sp[:-1])

    def build(self, output: int) -> "ComputeGraph":
        return ComputeGraph(tuple(self._nodes), output)


class ComputeGraph:
    def __init__(self, nodes: tuple[Node, ...], output: int):
        if not 0 <= output < len(nodes):
            raise GraphError(f"output node {output} not in graph")
        self.nodes = nodes
        self.output = output
        self._names = {n.name: n.id for n in nodes if n.name is not None}

    def __getitem__(self, name: str) -> int:
        return self._names[name]

    @property
    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind in LEAF_KINDS]

    @property
    def params(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "param"]

    def _resolve(self, bindings: Mapping) -> dict[int, np.ndarray]:
        values: dict[int, np.ndarray] = {}
        for key, val in bindings.items():
            nid = self._names[key] if isinstance(key, str) else int(key)
            node = self.nodes[nid]
            if node.kind not in LEAF_KINDS:
                raise GraphError(f"{node.label()} is not a leaf and cannot be bound")
            arr = val.data if isinstance(val, Tensor) else np.asarray(val, dtype=np.float64)
            if arr.shape != node.shape:
                raise GraphError(f"{node.label()} expects shape {node.shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise GraphError(f"{node.label()} bound to non-finite values")
            values[nid] = arr
        missing = [n.label() for n in self.nodes if n.kind in LEAF_KINDS and n.id not in values]
        if missing:
            raise GraphError("unbound leaves: " + ", ".join(missing))
        return values

    def _forward(self, bindings: Mapping) -> list[np.ndarray]:
        vals = self._resolve(bindings)
        out: list = [None] * len(self.nodes)
        for node in self.nodes:
            if node.kind in LEAF_KINDS:
                out[node.id] = vals[node.id]
                continue
            with np.errstate(over="ignore", invalid="ignore"):  # checked just below
                res = _FORWARD[node.kind](node, *(out[i] for i in node.inputs))
            if not np.all(np.isfinite(res)):
                raise GraphError(f"non-finite value produced at {node.label()}")
            out[node.id] = res
        return out

    def evaluate(self, bindings: Mapping) -> Tensor:
        return Tensor(self._forward(bindings)[self.output])

    def value_and_gradient(self, bindings: Mapping, wrt=None):
        """Return (output value, {node id: gradient array}) in one sweep."""
        if self.nodes[self.output].shape != ():
            raise GraphError("gradient requires a scalar output")
        wrt = self.params if wrt is None else [self._names[w] if isinstance(w, str) else int(w) for w in wrt]
        for w in wrt:
            if not 0 <= w < len(self.nodes) or self.nodes[w].kind not in LEAF_KINDS:
                raise GraphError(f"gradient target {w} is not a leaf of this graph")
        vals = self._forward(bindings)
        adj: list = [None] * len(self.nodes)
        adj[self.output] = np.ones(())
        for node in reversed(self.nodes[: self.output + 1]):
            g = adj[node.id]
            if g is None or node.kind in LEAF_KINDS:
                continue
            parts = _BACKWARD[node.kind](node, g, vals[node.id], *(vals[i] for i in node.inputs))
            for i, part in zip(node.inputs, parts):
                if part is None:
                    continue
                adj[i] = part if adj[i] is None else adj[i] + part
        grads = {}
        for w in wrt:
            g = adj[w]
            grads[w] = np.zeros(self.nodes[w].shape) if g is None else np.asarray(g, dtype=np.float64)
        return float(vals[self.output]), grads


# forward rules -------------------------------------------------------------

def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _labels(node, y, k):
    idx = y.astype(np.int64)
    if np.any(idx != y) or np.any(idx < 0) or np.any(idx >= k):
        raise GraphError(f"labels for {node.label()} must be integers in [0, {k})")
    return idx


def _fwd_ce(node, logits, y):
    idx = _labels(node, y, logits.shape[1])
    return -_log_softmax(logits)[np.arange(len(idx)), idx]


def _fwd_kl(node, p, q):
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    return np.sum(p * (lp - lq), axis=-1)


def _fwd_log(node, x):
    if np.any(x <= 0):
        raise GraphError(f"log of non-positive value at {node.label()}")
    return np.log(x)


_FORWARD = {
    "matmul": lambda n, a, b: a @ b,
    "add": lambda n, a, b: a + b,
    "relu": lambda n, a: np.maximum(a, 0.0),
    "softmax": lambda n, a: _softmax(a),
    "log": _fwd_log,
    "negate": lambda n, a: -a,
    "sum": lambda n, a: np.sum(a),
    "mean": lambda n, a: np.mean(a),
    "scale": lambda n, a: n.factor * a,
    "square": lambda n, a: a * a,
    "l2_norm": lambda n, a: np.sqrt(np.sum(a * a)),
    "cross_entropy": _fwd_ce,
    "kl_div": _fwd_kl,
}


# backward rules: (node, upstream grad, output value, *input values) -> grads per input

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _bwd_softmax(n, g, s, x):
    return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)


def _bwd_l2(n, g, out, a):
    if out == 0:
        return (np.zeros_like(a),)  # subgradient at the kink
    return (g * a / out,)


def _bwd_ce(n, g, out, logits, y):
    idx = y.astype(np.int64)
    d = _softmax(logits)
    d[np.arange(len(idx)), idx] -= 1.0
    return (g[:, None] * d, None)


def _bwd_kl(n, g, out, p, q):
    lp = np.log(np.maximum(p, PROB_FLOOR))
    lq = np.log(np.maximum(q, PROB_FLOOR))
    gp = lp - lq + (p > PROB_FLOOR)
    gq = -np.where(q > PROB_FLOOR, p / np.maximum(q, PROB_FLOOR), 0.0)
    g = np.asarray(g)[..., None]
    return (g * gp, g * gq)


_BACKWARD = {
    "matmul": lambda n, g, o, a, b: (g @ b.T, a.T @ g),
    "add": lambda n, g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    "relu": lambda n, g, o, a: (g * (a > 0),),
    "softmax": _bwd_softmax,
    "log": lambda n, g, o, a: (g / a,),
    "negate": lambda n, g, o, a: (-g,),
    "sum": lambda n, g, o, a: (np.full(a.shape, float(g)),),
    "mean": lambda n, g, o, a: (np.full(a.shape, float(g) / a.size),),
    "scale": lambda n, g, o, a: (n.factor * g,),
    "square": lambda n, g, o, a: (2.0 * a * g,),
    "l2_norm": _bwd_l2,
    "cross_entropy": _bwd_ce,
    "kl_div": _bwd_kl,
}


# public functional API -----------------------------------------------------

def evaluate(graph: ComputeGraph, bindings: Mapping) -> Tensor:
    return graph.evaluate(bindings)


def gradient(graph: ComputeGraph, bindings: Mapping, wrt=None) -> dict[int, Tensor]:
    """Exact reverse-mode gradient of the scalar output.

    ``wrt`` defaults to every parameter node. Keys of the result are node ids.
    """
    _, grads = graph.value_and_gradient(bindings, wrt)
    return {k: Tensor(v) for k, v in grads.items()}


def finite_difference_gradient(graph: ComputeGraph, bindings: Mapping, wrt=None, h: float = 1e-4) -> dict[int, Tensor]:
    """Central-difference gradient, one coordinate at a time. Test oracle."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    if graph.nodes[graph.output].shape != ():
        raise GraphError("gradient requires a scalar output")
    base = {(graph[k] if isinstance(k, str) else int(k)): np.array(v, dtype=np.float64) for k, v in bindings.items()}
    wrt = graph.params if wrt is None else [graph[w] if isinstance(w, str) else int(w) for w in wrt]
    out = {}
    for w in wrt:
        if w not in base:
            raise GraphError(f"gradient target {w} is not bound")
        x = base[w]
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(graph.evaluate(base).data)
            flat[i] = orig - h
            down = float(graph.evaluate(base).data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        out[w] = Tensor(g)
    return out


class FlatObjective:
    """A scalar loss viewed as a function of one flat parameter vector.

    The vector is split, in order, across ``param_ids``; every other leaf is
    held fixed at ``fixed``. Calls never mutate anything.
    """

    def __init__(self, graph: ComputeGraph, param_ids: Sequence[int], fixed: Mapping):
        self.graph = graph
        self.param_ids = list(param_ids)
        self.shapes = [graph.nodes[p].shape for p in self.param_ids]
        sizes = [int(np.prod(s, dtype=np.int64)) for s in self.shapes]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.segments = [slice(offsets[i], offsets[i + 1]) for i in range(len(sizes))]
        self.size = int(offsets[-1])
        self.fixed = {(graph[k] if isinstance(k, str) else int(k)): v for k, v in fixed.items()}

    def _bind(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.size,):
            raise ValueError(f"expected a flat vector of length {self.size}, got shape {w.shape}")
        b = dict(self.fixed)
        for pid, seg, shape in zip(self.param_ids, self.segments, self.shapes):
            b[pid] = w[seg].reshape(shape)
        return b

    def loss(self, w) -> float:
        return float(self.graph.evaluate(self._bind(w)).data)

    def value_and_grad(self, w) -> tuple[float, np.ndarray]:
        value, grads = self.graph.value_and_gradient(self._bind(w), self.param_ids)
        return value, np.concatenate([grads[p].reshape(-1) for p in self.param_ids])

    def grad(self, w) -> np.ndarray:
        return self.value_and_grad(w)[1]
