import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twinsight.data import Dataset
from twinsight.diagnostics import (
    NEVER,
    UNDEFINED,
    RoundReport,
    evaluate,
    gradient_conflict_probe,
    labeled_gradient,
    rounds_to_target,
)
from twinsight.federation import MethodConfig
from twinsight.losses import TwinHyper
from twinsight.numerics import MlpSpec, ModelParams

from conftest import random_params


def constant_model(dim, classes, cls):
    spec = MlpSpec((dim, classes))
    b = np.zeros(classes)
    b[cls] = 1.0
    return ModelParams.flatten(spec, [(np.zeros((dim, classes)), b)])


def test_evaluate_constant_model():
    test = Dataset(np.random.default_rng(0).normal(size=(10, 3)), np.full(10, 2), 4)
    assert evaluate(constant_model(3, 4, 2), test) == 1.0


def test_evaluate_symmetric_model_is_chance():
    accs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        test = Dataset(rng.normal(size=(200, 3)), rng.integers(0, 4, 200), 4)
        # zero model: every row ties, argmax picks class 0
        accs.append(evaluate(ModelParams(MlpSpec((3, 4)), np.zeros(16)), test))
    assert abs(np.mean(accs) - 0.25) < 0.1


def test_evaluate_hand_built():
    spec = MlpSpec((2, 2))
    w = ModelParams.flatten(spec, [(np.eye(2), np.zeros(2))])
    test = Dataset(np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([0, 1]), 2)
    assert evaluate(w, test) == 0.5


def test_evaluate_tie_goes_to_lowest_class():
    test = Dataset(np.zeros((1, 2)), np.array([0]), 3)
    assert evaluate(ModelParams(MlpSpec((2, 3)), np.zeros(9)), test) == 1.0


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate(ModelParams(MlpSpec((2, 2)), np.zeros(6)), Dataset(np.zeros((1, 2)), [-1], 2))


def _probe_setup(rng):
    w = random_params(rng, (4, 6, 3), "relu")
    xl, yl = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    xu = 3 * rng.normal(size=(8, 4))
    return w, (xl, yl), xu


def test_probe_identity_hook(rng):
    w, lab, xu = _probe_setup(rng)
    cos = gradient_conflict_probe(w, lab, xu, MethodConfig(),
                                  unlabeled_grad=lambda w_, x, r: labeled_gradient(w_, *lab))
    assert cos == pytest.approx(1.0, abs=1e-12)


def test_probe_opposite_hook(rng):
    w, lab, xu = _probe_setup(rng)
    cos = gradient_conflict_probe(w, lab, xu, MethodConfig(),
                                  unlabeled_grad=lambda w_, x, r: -labeled_gradient(w_, *lab))
    assert cos == pytest.approx(-1.0, abs=1e-12)


def test_probe_fully_masked_is_undefined(rng):
    w, lab, xu = _probe_setup(rng)
    w = ModelParams(w.spec, np.zeros(w.spec.n_params))
    cfg = MethodConfig(hyper=TwinHyper(threshold=0.5))
    assert gradient_conflict_probe(w, lab, xu, cfg) == UNDEFINED


def test_probe_in_range(rng):
    for _ in range(10):
        w, lab, xu = _probe_setup(rng)
        cos = gradient_conflict_probe(w, lab, xu, MethodConfig(hyper=TwinHyper(threshold=0.4)), rng)
        assert cos == UNDEFINED or -1.0 <= cos <= 1.0


def test_probe_empty_batch(rng):
    w, lab, _ = _probe_setup(rng)
    with pytest.raises(ValueError):
        gradient_conflict_probe(w, lab, np.zeros((0, 4)), MethodConfig())


def test_rounds_to_target_examples():
    assert rounds_to_target([0.10, 0.20, 0.30], 0.25) == 3
    assert rounds_to_target([0.10, 0.20, 0.30], 0.05) == 1
    assert rounds_to_target([0.10, 0.20, 0.30], 0.99) == NEVER == "None"
    with pytest.raises(ValueError):
        rounds_to_target([], 0.5)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 1), st.floats(0.01, 1))
def test_rounds_to_target_monotone(hist, t1, t2):
    lo, hi = sorted((t1, t2))
    a, b = rounds_to_target(hist, lo), rounds_to_target(hist, hi)
    if a == NEVER:
        assert b == NEVER
    elif b != NEVER:
        assert a <= b


def test_round_report_validation():
    with pytest.raises(ValueError):
        RoundReport(1, "x", 1.5)
    with pytest.raises(ValueError):
        RoundReport(1, "x", 0.5, probe_cos=1.5)
    RoundReport(1, "x", 0.5, probe_cos=UNDEFINED)
