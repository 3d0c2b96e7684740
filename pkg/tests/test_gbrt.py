import numpy as np
import pytest

from tokencurve.errors import EmptyInputError, InsufficientGridError
from tokencurve.evaluation import pattern_check
from tokencurve.models.gbrt import (
    GBRTConfig,
    GBRTModel,
    Tree,
    allocation_grid,
    gbrt_curve_pl,
    gbrt_curve_ss,
    moving_average,
    train_gbrt,
)


class Stub:
    """Run-time model given by a plain function of the allocation."""

    def __init__(self, fn):
        self.fn = fn

    def predict_runtime(self, job, allocations):
        return np.array([self.fn(a) for a in allocations], dtype=float)


class _Job:
    observed_allocation = 100


def _regression_data(seed=0, n=300):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = np.exp(1.0 + 0.8 * X[:, 0] - 0.5 * (X[:, 1] > 0) + 0.05 * rng.normal(size=n))
    return X, y


def test_constant_target_predicts_constant():
    X = np.random.default_rng(1).normal(size=(50, 3))
    model = train_gbrt(X, np.full(50, 42.0), GBRTConfig(n_rounds=10))
    assert np.allclose(model.predict(X), 42.0, rtol=1e-12)
    assert all(t.n_leaves == 1 for t in model.trees)


def test_stump_predicts_branch_means_of_log_targets():
    x = np.array([0, 0, 0, 1, 1, 1, 1], dtype=float)[:, None]
    y = np.array([1.0, 2.0, 4.0, 10.0, 20.0, 30.0, 40.0])
    cfg = GBRTConfig(n_rounds=1, max_depth=1, learning_rate=1.0, reg_lambda=0.0)
    pred = train_gbrt(x, y, cfg).predict_raw(x)
    assert np.allclose(pred[:3], np.log(y[:3]).mean())
    assert np.allclose(pred[3:], np.log(y[3:]).mean())


@pytest.mark.parametrize("objective", ["squared_log", "gamma"])
def test_training_loss_non_increasing(objective):
    X, y = _regression_data()
    model = train_gbrt(X, y, GBRTConfig(n_rounds=40, max_depth=3, objective=objective))
    losses = np.array(model.train_loss)
    assert len(losses) == 41
    assert np.all(np.diff(losses) <= 1e-12)
    assert losses[-1] < losses[0]


def test_fit_quality_and_determinism():
    X, y = _regression_data()
    cfg = GBRTConfig(n_rounds=60, max_depth=3, subsample=0.8, seed=3)
    m1, m2 = train_gbrt(X, y, cfg), train_gbrt(X, y, cfg)
    assert m1.to_dict() == m2.to_dict()
    rel = np.abs(m1.predict(X) / y - 1)
    assert np.median(rel) < 0.1


def test_serialization_round_trip():
    X, y = _regression_data(2)
    model = train_gbrt(X, y, GBRTConfig(n_rounds=15, max_depth=4))
    back = GBRTModel.from_dict(model.to_dict())
    assert np.array_equal(back.predict(X), model.predict(X))
    tree = model.trees[0]
    again = Tree.from_nested(tree.to_nested())
    assert np.array_equal(again.predict(X), tree.predict(X))


def test_empty_dataset_rejected():
    with pytest.raises(EmptyInputError):
        train_gbrt(np.zeros((0, 3)), np.zeros(0))


def test_grid_and_moving_average():
    grid = allocation_grid(100)
    assert grid.size == 17 and grid[0] == pytest.approx(60) and grid[-1] == pytest.approx(140)
    assert moving_average(np.array([1.0, 2.0, 3.0, 10.0])).tolist() == [1.5, 2.0, 5.0, 6.5]


def test_constant_model_curves_are_flat():
    stub = Stub(lambda a: 50.0)
    ss = gbrt_curve_ss(stub, _Job())
    assert {r for _, r in ss} == {50.0}
    fit = gbrt_curve_pl(stub, _Job())
    assert fit.params.a == pytest.approx(0, abs=1e-12) and fit.params.b == pytest.approx(50)


def test_power_law_model_recovered():
    fit = gbrt_curve_pl(Stub(lambda a: 3000.0 / a), _Job())
    assert fit.params.a == pytest.approx(-1, abs=1e-12)


def test_increasing_model_flagged():
    stub = Stub(lambda a: 2.0 * a**0.3)
    fit = gbrt_curve_pl(stub, _Job())
    assert fit.params.a > 0
    assert not pattern_check(fit.params)
    assert not pattern_check(gbrt_curve_ss(stub, _Job()))


def test_short_grid_rejected():
    with pytest.raises(InsufficientGridError):
        gbrt_curve_ss(Stub(lambda a: 1.0), _Job(), grid=[10, 20])
