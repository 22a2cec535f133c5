import math

import numpy as np
import pytest

from conftest import identity_model, quadratic_objective
from lprobe.autodiff import FlatObjective, GraphBuilder
from lprobe.datagen import Dataset, DomainSpec, make_domain_suite
from lprobe.measures import (
    REPORT_COLUMNS,
    AlphaSharpnessConfig,
    SharpnessConfig,
    difference_step,
    frobenius_distance,
    margin,
    measure_all,
    phi_alpha,
    phi_difference,
    read_reports_csv,
    weight_noise,
    write_reports_csv,
)
from lprobe.model import Model, ModelSpec


def constant_objective(c=2.5):
    b = GraphBuilder()
    w = b.param("w", (3,))
    k = b.input("k", ())
    # 0 * sum(w) + k keeps w in the graph without affecting the value
    out = b.add(b.scale(b.sum(w), 0.0), k)
    return FlatObjective(b.build(out), [w], {"k": c})


# margin ---------------------------------------------------------------------------

def test_margin_examples():
    assert margin(identity_model(3), Dataset([[2.0, 0.0, 0.0]], [0])) == 2.0
    assert margin(identity_model(2), Dataset([[1.0, 3.0], [0.0, 5.0]], [0, 1])) == 1.5


def test_margin_can_be_negative():
    assert margin(identity_model(2), Dataset([[0.0, 1.0]], [0])) == -1.0


# frobenius ------------------------------------------------------------------------

def test_frobenius_distance():
    m = Model(ModelSpec(2, (), 2))
    assert frobenius_distance(m) == 0.0
    disp = np.zeros(m.param_count)
    disp[[0, 3]] = [3.0, 4.0]
    m.set_flat_weights(m.W0 + disp)
    assert frobenius_distance(m) == pytest.approx(5.0, abs=1e-12)
    m.set_flat_weights(m.W0 + 2 * disp)
    assert frobenius_distance(m) == pytest.approx(10.0, abs=1e-12)


# difference sharpness -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SharpnessConfig(noise_scale=0.0)
    with pytest.raises(ValueError):
        SharpnessConfig(radius_lambda=1.0)
    with pytest.raises(ValueError):
        AlphaSharpnessConfig(alpha_bounds=(1.0, 0.5))


def test_phi_difference_hand_example():
    cfg = SharpnessConfig(noise_scale=0.01, ascent_coeff=0.05, radius_lambda=0.05)
    got = phi_difference(quadratic_objective(), np.array([0.0]), cfg, noise=np.array([0.1]))
    assert got == pytest.approx(3.025e-5, rel=1e-12)


def test_difference_step_projects_onto_radius():
    cfg = SharpnessConfig(0.01, 0.05, 0.05)
    w_new, radius = difference_step(quadratic_objective(), np.array([0.0]), cfg, np.array([0.1]))
    assert radius == pytest.approx(0.0055, rel=1e-12)
    assert w_new[0] == pytest.approx(0.0055, rel=1e-12)


def test_phi_difference_of_constant_loss_is_zero():
    obj = constant_objective()
    assert phi_difference(obj, np.array([1.0, -2.0, 3.0]), SharpnessConfig()) == 0.0


def test_weight_noise_scales_with_tensor_rms(small_model):
    obj = small_model.objective(np.zeros((2, 4)), np.array([0, 1]))
    eps = weight_noise(obj, small_model.W, 0.01, np.random.default_rng(0))
    first = obj.segments[0]
    rms = np.sqrt(np.mean(small_model.W[first] ** 2))
    assert np.std(eps[first]) == pytest.approx(0.01 * rms, rel=0.3)
    # zero biases fall back to unit scale
    bias = obj.segments[1]
    assert 0 < np.std(eps[bias]) < 0.05


def test_phi_difference_is_seeded(small_model, small_data):
    obj = small_model.objective(small_data.x, small_data.y)
    cfg = SharpnessConfig(seed=3)
    assert phi_difference(obj, small_model.W, cfg) == phi_difference(obj, small_model.W, cfg)


# alpha sharpness ------------------------------------------------------------------

def test_phi_alpha_closed_form():
    obj = quadratic_objective(center=1.0, coeff=0.5)
    res = phi_alpha(obj, [1.0], [0.0], AlphaSharpnessConfig(0.1, 10, 40))
    assert not res.failed
    assert res.alpha == pytest.approx(math.sqrt(0.2), rel=1e-6)
    assert res.phi == pytest.approx(1.25, rel=1e-6)


def test_phi_alpha_zero_displacement():
    obj = quadratic_objective(center=1.0, coeff=0.5)
    res = phi_alpha(obj, [1.0], [1.0], AlphaSharpnessConfig(0.1, 10, 30))
    assert res.phi == 0.0 and not res.failed


def test_phi_alpha_quarters_when_alpha_doubles():
    # quarter the curvature and the feasible radius doubles
    a = phi_alpha(quadratic_objective(1.0, 0.5), [1.0], [0.0], AlphaSharpnessConfig(0.1, 10, 40))
    b = phi_alpha(quadratic_objective(1.0, 0.125), [1.0], [0.0], AlphaSharpnessConfig(0.1, 10, 40))
    assert b.alpha == pytest.approx(2 * a.alpha, rel=1e-6)
    assert b.phi == pytest.approx(a.phi / 4, rel=1e-6)


def test_phi_alpha_flags_search_at_bounds():
    # flat loss: every alpha is feasible, so the search pins to the top bound
    res = phi_alpha(constant_objective(), np.ones(3), np.zeros(3), AlphaSharpnessConfig())
    assert res.failed and res.phi is None
    # extremely sharp loss: nothing in bounds is feasible
    res = phi_alpha(quadratic_objective(0.0, 1e12), [0.0], [1.0], AlphaSharpnessConfig())
    assert res.failed and res.phi is None


# measure_all ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_suite():
    specs = [DomainSpec(f"d{i}", 0.2 * i) for i in range(4)]
    return make_domain_suite(3, 5, 0, (60, 30, 90), specs, 1)


def test_measure_all_rows(tiny_suite):
    m = Model(ModelSpec(5, (4,), 3, init_seed=0))
    reps = measure_all(m, tiny_suite, model_id="m", objective="baseline", seed=0)
    assert [r.domain for r in reps] == tiny_suite.domain_names
    for r in reps:
        assert 0.0 <= r.accuracy <= 1.0
        assert math.isfinite(r.margin) and math.isfinite(r.phi_difference)
        assert r.frobenius_distance == 0.0


def test_measure_all_chance_accuracy():
    suite = make_domain_suite(3, 5, 0, (60, 30, 3000), [DomainSpec("s", 0.4)], 1)
    m = Model(ModelSpec(5, (), 3), np.zeros(18))
    rep = measure_all(m, suite)[0]
    assert abs(rep.accuracy - 1 / 3) <= 0.1


def test_measure_all_restores_weights(tiny_suite, small_model):
    m = Model(ModelSpec(5, (4,), 3, init_seed=2))
    m.set_flat_weights(m.W * 1.3)
    before, w0 = m.W.tobytes(), m.W0.tobytes()
    measure_all(m, tiny_suite, sweep_noise=(0.001, 0.02))
    assert m.W.tobytes() == before and m.W0.tobytes() == w0


def test_measure_all_is_deterministic(tmp_path, tiny_suite):
    m = Model(ModelSpec(5, (4,), 3, init_seed=2))
    for name in ("a.csv", "b.csv"):
        write_reports_csv(measure_all(m, tiny_suite, sweep_noise=(0.001, 0.005, 0.01, 0.02)), tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0].split(",")
    assert header[: len(REPORT_COLUMNS)] == list(REPORT_COLUMNS)
    assert header[len(REPORT_COLUMNS):] == [f"phi_difference_{s}" for s in ("0.001", "0.005", "0.01", "0.02")]


def test_reports_csv_round_trip(tmp_path, tiny_suite):
    m = Model(ModelSpec(5, (4,), 3, init_seed=2))
    reps = measure_all(m, tiny_suite)
    write_reports_csv(reps, tmp_path / "r.csv")
    back = read_reports_csv(tmp_path / "r.csv")
    for a, b in zip(reps, back):
        assert (a.domain, a.accuracy, a.margin, a.phi_difference, a.phi_alpha_failed) == (
            b.domain, b.accuracy, b.margin, b.phi_difference, b.phi_alpha_failed)


def test_failed_alpha_keeps_other_measures(tiny_suite):
    # inside a tiny box every radius is feasible, so the search pins to the top bound
    m = Model(ModelSpec(5, (4,), 3, init_seed=1))
    reps = measure_all(m, tiny_suite, alpha=AlphaSharpnessConfig(alpha_bounds=(1e-7, 1e-6)))
    for r in reps:
        assert r.phi_alpha_failed and r.phi_alpha is None
        assert math.isfinite(r.margin) and math.isfinite(r.accuracy)
