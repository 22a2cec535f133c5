"""
Checking reverse-mode gradients
===============================

Build a small two-layer network by hand, then compare the gradients from
the graph against central finite differences.
"""

import numpy as np

from lprobe.autodiff import GraphBuilder, finite_difference_gradient, gradient

rng = np.random.default_rng(0)

b = GraphBuilder()
x = b.input("x", (6, 4))
y = b.input("y", (6,))
w1, b1 = b.param("w1", (4, 5)), b.param("b1", (5,))
w2, b2 = b.param("w2", (5, 3)), b.param("b2", (3,))
hidden = b.relu(b.add(b.matmul(x, w1), b1))
logits = b.add(b.matmul(hidden, w2), b2)
graph = b.build(b.mean(b.cross_entropy(logits, y)))

bindings = {
    "x": rng.standard_normal((6, 4)),
    "y": rng.integers(0, 3, 6),
    "w1": rng.standard_normal((4, 5)),
    "b1": np.zeros(5),
    "w2": rng.standard_normal((5, 3)),
    "b2": np.zeros(3),
}

exact = gradient(graph, bindings)
approx = finite_difference_gradient(graph, bindings, h=1e-4)

for name in ("w1", "b1", "w2", "b2"):
    a, f = exact[graph[name]].data, approx[graph[name]].data
    err = np.linalg.norm(a - f) / max(np.linalg.norm(f), 1e-12)
    print(f"{name:>3}: |grad| = {np.linalg.norm(a):.4f}   relative error = {err:.1e}")
