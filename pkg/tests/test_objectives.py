import numpy as np
import pytest

from conftest import Holder, quadratic_objective
from lprobe.autodiff import FlatObjective, GraphBuilder
from lprobe.datagen import Dataset
from lprobe.model import Model, ModelSpec
from lprobe.objectives import (
    SGD,
    AdamW,
    TrainConfig,
    adamw_step,
    consistency_loss,
    fisher_penalty,
    fisher_value_and_grad,
    hessian_vector_product,
    sam_gradient,
    sam_step,
    train,
)


def linear_mean(xs):
    """mean_i x_i * w for a single weight; per-example gradients are the x_i."""
    b = GraphBuilder()
    w = b.param("w", (1, 1))
    x = b.input("x", (len(xs), 1))
    return FlatObjective(b.build(b.mean(b.matmul(x, w))), [w], {"x": np.reshape(xs, (-1, 1))})


# AdamW ----------------------------------------------------------------------------

def test_adamw_zero_lr_is_identity():
    opt = AdamW(lr=0.0, weight_decay=0.01)
    w = np.array([1.5, -2.0, 0.25])
    assert opt.update(w, np.array([1.0, 2.0, -3.0])).tobytes() == w.tobytes()


def test_adamw_decay_on_zero_gradient():
    opt = AdamW(lr=0.1, weight_decay=0.01)
    w = np.array([1.0, -4.0, 2.5])
    assert np.allclose(opt.update(w, np.zeros(3)), w * (1 - 0.001), rtol=1e-15, atol=0)


def test_adamw_first_step_is_sign_step():
    opt = AdamW(lr=0.01, weight_decay=0.0)
    g = np.array([3.0, -0.2, 1e-3])
    step = opt.update(np.zeros(3), g)
    assert np.allclose(step, -0.01 * np.sign(g), rtol=1e-4)


def test_adamw_rejects_non_finite_gradient():
    with pytest.raises(FloatingPointError):
        AdamW().update(np.zeros(2), np.array([1.0, np.inf]))


def test_adamw_step_on_model_weights():
    h = Holder([2.0])
    loss = adamw_step(h, quadratic_objective(), AdamW(lr=0.1, weight_decay=0.0))
    assert loss == 4.0
    assert h.W[0] == pytest.approx(1.9, abs=1e-6)


# SAM ------------------------------------------------------------------------------

def test_sam_hand_example():
    h = Holder([1.0])
    sam_step(h, quadratic_objective(coeff=0.5), 0.1, SGD(0.1))
    assert h.W[0] == pytest.approx(0.89, abs=1e-15)


@pytest.mark.parametrize("rho", [0.01, 0.05, 0.3])
def test_sam_perturbation_has_norm_rho(rho):
    obj = quadratic_objective(center=0.5, coeff=2.0)
    w = np.array([2.0])
    g = obj.grad(w)
    # gradient of a quadratic is linear, so the perturbed gradient encodes eps
    _, g_adv = sam_gradient(obj, w, rho)
    eps = (g_adv - g) / 4.0
    assert np.linalg.norm(eps) == pytest.approx(rho, rel=1e-12)


def test_sam_zero_gradient_falls_back():
    obj = quadratic_objective(center=1.0)
    a, b = Holder([1.0]), Holder([1.0])
    sam_step(a, obj, 0.05, AdamW(lr=0.1))
    adamw_step(b, obj, AdamW(lr=0.1))
    assert a.W.tobytes() == b.W.tobytes()


def test_sam_zero_lr_leaves_weights_bit_exact(small_model, small_data):
    before = small_model.get_flat_weights()
    sam_step(small_model, small_model.objective(small_data.x, small_data.y), 0.05, SGD(0.0))
    assert small_model.W.tobytes() == before.tobytes()


def test_sam_rejects_bad_rho():
    with pytest.raises(ValueError):
        sam_gradient(quadratic_objective(), np.ones(1), 0.0)


# Fisher penalty -------------------------------------------------------------------

@pytest.mark.parametrize("xs, expected", [([1.0, -1.0], 0.0), ([2.0], 4.0), ([0.0, 0.0], 0.0)])
def test_fisher_penalty_examples(xs, expected):
    assert fisher_penalty(linear_mean(xs), np.array([0.7])) == pytest.approx(expected, abs=1e-15)


def test_hessian_vector_product_on_quadratic():
    obj = quadratic_objective(coeff=3.0)
    hv = hessian_vector_product(obj, np.array([0.4]), np.array([2.0]))
    assert hv[0] == pytest.approx(12.0, rel=1e-8)


def test_fisher_gradient_matches_finite_differences(small_model, small_data):
    obj = small_model.objective(small_data.x, small_data.y)
    w = small_model.W
    lam = 0.3
    _, g = fisher_value_and_grad(obj, w, lam)
    h = 1e-5
    fd = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        fd[i] = (fisher_value_and_grad(obj, w + e, lam)[0] - fisher_value_and_grad(obj, w - e, lam)[0]) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5


def test_fisher_with_zero_lambda_is_plain_gradient(small_model, small_data):
    obj = small_model.objective(small_data.x, small_data.y)
    loss, g = fisher_value_and_grad(obj, small_model.W, 0.0)
    l2, g2 = obj.value_and_grad(small_model.W)
    assert loss == l2 and g.tobytes() == g2.tobytes()


# consistency ----------------------------------------------------------------------

def test_consistency_without_noise_is_cross_entropy(small_model, small_data):
    ce = small_model.loss(small_data.x, small_data.y)
    got = consistency_loss(small_model, small_data.x, small_data.y, 0.0, 1.0, seed=0)
    assert got == pytest.approx(ce, rel=1e-14)


def test_consistency_with_zero_lambda_averages_views(small_model, small_data):
    sigma, seed = 0.5, 3
    view = small_data.x + sigma * np.random.default_rng(seed).standard_normal(small_data.x.shape)
    expected = 0.5 * small_model.loss(small_data.x, small_data.y) + 0.5 * small_model.loss(view, small_data.y)
    got = consistency_loss(small_model, small_data.x, small_data.y, sigma, 0.0, seed)
    assert got == pytest.approx(expected, rel=1e-14)


def test_consistency_uniform_predictions():
    m = Model(ModelSpec(2, (), 2), np.zeros(6))
    got = consistency_loss(m, [[1.0, -1.0]], [0], 0.3, 1.0, seed=1)
    assert got == pytest.approx(np.log(2.0), abs=1e-12)


def test_consistency_rejects_negative_sigma(small_model, small_data):
    with pytest.raises(ValueError):
        consistency_loss(small_model, small_data.x, small_data.y, -1.0, 1.0, 0)


# training loop --------------------------------------------------------------------

def separable(n, seed):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.standard_normal((n, 4)) * 0.5
    x[:, 0] += np.where(y == 1, 2.0, -2.0)
    return Dataset(x, y)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(objective="adam")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


@pytest.mark.parametrize("objective", ["baseline", "sam", "fisher", "consistency"])
def test_training_is_deterministic(objective):
    cfg = TrainConfig(objective=objective, epochs=2, seed=4)
    runs = []
    for _ in range(2):
        m = Model(ModelSpec(4, (6,), 2, init_seed=2))
        runs.append(train(m, separable(64, 0), separable(32, 1), cfg))
    assert runs[0] == runs[1]
    assert runs[0].weights.tobytes() == runs[1].weights.tobytes()


def test_zero_lr_leaves_weights():
    m = Model(ModelSpec(4, (6,), 2, init_seed=2))
    w = m.W.copy()
    res = train(m, separable(64, 0), separable(32, 1), TrainConfig(epochs=1, learning_rate=0.0))
    assert res.weights.tobytes() == w.tobytes() == m.W.tobytes()
    assert res.best_epoch == 1 and len(res.train_loss) == 1


def test_separable_problem_is_learned():
    m = Model(ModelSpec(4, (8,), 2))
    res = train(m, separable(400, 0), separable(200, 1), TrainConfig(epochs=15))
    assert max(res.val_accuracy) >= 0.99
    assert np.mean(np.argmax(m.forward(separable(200, 1).x), 1) == separable(200, 1).y) >= 0.99


def test_history_file(tmp_path):
    m = Model(ModelSpec(4, (), 2))
    res = train(m, separable(40, 0), separable(20, 1), TrainConfig(epochs=3))
    res.write_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_accuracy" and len(lines) == 4


@pytest.mark.parametrize("opt", [SGD(0.0), AdamW(lr=0.0)])
def test_zero_lr_keeps_signed_zeros(opt):
    w = np.array([-0.0, 0.0, 1.0])
    assert opt.update(w, np.array([1.0, -1.0, 2.0])).tobytes() == w.tobytes()
