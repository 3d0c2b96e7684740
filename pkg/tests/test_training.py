import math
from dataclasses import replace

import numpy as np
import pytest

from tokencurve.errors import ConfigError, DomainError, TrainingDivergedError, VersionError
from tokencurve.features import aggregate_job
from tokencurve.models.artifact import (
    ModelArtifact,
    attach_gbrt_predictions,
    deserialize,
    dumps,
    forced_curve_artifact,
    serialize,
    train_gbrt_artifact,
    train_network,
)
from tokencurve.models.data import ParamScales
from tokencurve.models.gbrt import GBRTConfig
from tokencurve.models.losses import LossTargets, loss_and_grad
from tokencurve.models.training import TrainingConfig, fit_network, tune_runtime_weight
from tokencurve.pcc import PccParams

FAST = TrainingConfig(epochs=5, batch_size=16, mlp_hidden=(16,), gnn_layers=2, gnn_width=8, gnn_head=(8,))


def _one(a_t, b_t, log_alloc, runtime):
    return LossTargets(np.array([a_t]), np.array([b_t]), np.array([log_alloc]), np.array([runtime]))


def test_perfect_prediction_has_zero_loss():
    out = np.array([[0.0, math.log(50.0)]])
    t = _one(-1.0, math.log(50.0), math.log(10.0), 5.0)
    for kind in ("lf1", "lf2"):
        parts, _ = loss_and_grad(out, t, ParamScales(1.0, 1.0), kind)
        assert parts.total == pytest.approx(0.0, abs=1e-12)


def test_worked_loss_value():
    # parameter errors 0.1 and 0.2, predicted run-time 10% high, weight 0.5
    out = np.array([[0.0, 2.0]])
    t = _one(-1.1, 1.8, 0.0, math.exp(2.0) / 1.1)
    parts, _ = loss_and_grad(out, t, ParamScales(1.0, 1.0), "lf2", w_runtime=0.5)
    assert parts.param_mae == pytest.approx(0.15)
    assert parts.runtime_ape == pytest.approx(0.1)
    assert parts.total == pytest.approx(0.20)
    lf1, _ = loss_and_grad(out, t, ParamScales(1.0, 1.0), "lf1")
    assert lf1.total == pytest.approx(0.15)


def test_loss_domain_checks():
    out = np.zeros((1, 2))
    with pytest.raises(DomainError):
        loss_and_grad(out, _one(-1, 0, 0, 0.0), ParamScales(1, 1), "lf2")
    with pytest.raises(ConfigError):
        loss_and_grad(out, _one(-1, 0, 0, 1.0), ParamScales(1, 1), "lf3")
    with pytest.raises(ConfigError):
        loss_and_grad(out, _one(-1, 0, 0, 1.0), ParamScales(1, 1), "lf9")


@pytest.mark.parametrize("kind", ["mlp", "gnn"])
def test_training_is_deterministic_and_records_history(examples, kind):
    a = fit_network(examples, FAST, kind)
    b = fit_network(examples, FAST, kind)
    assert len(a.history) == FAST.epochs
    assert a.history == b.history
    for k in a.network.params:
        assert np.array_equal(a.network.params[k], b.network.params[k])


def test_training_reduces_loss(examples):
    tn = fit_network(examples, replace(FAST, epochs=60, learning_rate=3e-3), "mlp")
    assert tn.history[-1] < tn.history[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected(examples):
    with pytest.raises(TrainingDivergedError):
        fit_network(examples, replace(FAST, learning_rate=1e4, epochs=20), "mlp")


def test_lf3_requires_tree_predictions(examples):
    with pytest.raises(ConfigError):
        fit_network(examples, replace(FAST, loss_kind="lf3"), "mlp")


def test_lf3_trains_with_attached_predictions(corpus, space, examples):
    gbrt = train_gbrt_artifact(corpus.jobs[:90], space, GBRTConfig(n_rounds=20))
    by_id = {j.id: j for j in corpus.jobs}
    ex = [replace(e) for e in examples]
    attach_gbrt_predictions(ex, by_id, gbrt)
    assert all(e.gbrt_runtime > 0 for e in ex)
    tn = fit_network(ex, replace(FAST, loss_kind="lf3"), "mlp")
    assert all(math.isfinite(h) for h in tn.history)


def test_early_stopping(examples):
    cfg = replace(FAST, epochs=200, patience=2, learning_rate=5e-2)
    tn = fit_network(examples[:60], cfg, "mlp", val_examples=examples[60:])
    assert len(tn.val_history) < 200
    assert len(tn.history) == len(tn.val_history)


def test_invalid_configs():
    for bad in (replace(FAST, loss_kind="nope"), replace(FAST, w_runtime=-1),
                replace(FAST, sigma_a=0.0), replace(FAST, batch_size=0)):
        with pytest.raises(ConfigError):
            bad.validate()
    with pytest.raises(ConfigError):
        TrainingConfig.from_dict({"bogus": 1})
    assert TrainingConfig.from_dict(FAST.to_dict()) == FAST


@pytest.mark.parametrize("kind", ["mlp", "gnn", "gbrt"])
def test_artifact_round_trip(tmp_path, corpus, space, examples, kind):
    if kind == "gbrt":
        art = train_gbrt_artifact(corpus.jobs[:90], space, GBRTConfig(n_rounds=10))
    else:
        art = train_network(examples, FAST, kind, space)
    path = tmp_path / "model.json"
    serialize(art, path)
    back = deserialize(path)
    jobs = corpus.jobs[:100]
    assert back.predict_many(jobs) == art.predict_many(jobs)
    assert dumps(back) == dumps(art)
    assert back.version_tag == art.version_tag


def test_version_mismatch_rejected(space):
    art = forced_curve_artifact(space, PccParams(-0.5, 20.0))
    d = art.to_dict()
    d["format_version"] = 99
    with pytest.raises(VersionError):
        ModelArtifact.from_dict(d)


@pytest.mark.parametrize("kind", ["mlp", "gnn"])
def test_forced_curve_artifact(corpus, space, kind):
    target = PccParams(-1.0, 1000.0)
    art = forced_curve_artifact(space, target, kind)
    for p in art.predict_many(corpus.jobs[:10]):
        assert p.a == pytest.approx(-1.0, rel=1e-12) and p.b == pytest.approx(1000.0, rel=1e-12)
    with pytest.raises(ConfigError):
        forced_curve_artifact(space, PccParams(0.2, 1.0))


def test_predict_from_features_matches_job_path(corpus, space, examples):
    art = train_network(examples, FAST, "mlp", space)
    job = corpus.jobs[100]
    p1 = art.predict(job)
    p2 = art.predict_from_features(aggregate_job(job, space.vocab))
    assert p2.a == pytest.approx(p1.a, rel=1e-12) and p2.b == pytest.approx(p1.b, rel=1e-12)


def test_tune_runtime_weight_returns_grid_value(examples):
    w = tune_runtime_weight(examples[:60], examples[60:], replace(FAST, epochs=3), "mlp", grid=(0.1, 0.5))
    assert w in (0.1, 0.5)
