import numpy as np
import pytest

from lprobe.autodiff import FlatObjective, GraphBuilder
from lprobe.datagen import Dataset
from lprobe.model import Model, ModelSpec


class Holder:
    """Bare weight container for steps that only need get/set."""

    def __init__(self, w):
        self.W = np.array(w, dtype=np.float64)

    def get_flat_weights(self):
        return self.W.copy()

    def set_flat_weights(self, v):
        self.W = np.array(v, dtype=np.float64)


def quadratic_objective(center=0.0, coeff=1.0):
    """coeff * (w - center)^2 on a single weight, built from graph ops."""
    b = GraphBuilder()
    w = b.param("w", (1,))
    c = b.input("c", (1,))
    out = b.scale(b.sum(b.square(b.add(w, c))), coeff)
    return FlatObjective(b.build(out), [w], {"c": [-center]})


def identity_model(k):
    """Linear model whose logits equal its inputs."""
    spec = ModelSpec(k, (), k)
    return Model(spec, np.concatenate([np.eye(k).ravel(), np.zeros(k)]))


@pytest.fixture
def small_model():
    return Model(ModelSpec(4, (5,), 3, init_seed=1))


@pytest.fixture
def small_data():
    rng = np.random.default_rng(0)
    return Dataset(rng.standard_normal((8, 4)), np.arange(8) % 3)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def check(name, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        assert ok, f"{name}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
