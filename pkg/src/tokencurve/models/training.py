"""Mini-batch training of the curve-predicting networks."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import ConfigError, EmptyInputError, TrainingDivergedError
from .data import ParamScales, TrainingExample
from .losses import LOSS_KINDS, LossParts, LossTargets, loss_and_grad
from .nn import (
    Adam,
    GraphBatch,
    Params,
    gnn_backward,
    gnn_forward,
    init_gnn,
    init_mlp,
    mlp_backward,
    mlp_forward,
)

log = logging.getLogger(__name__)

NETWORK_KINDS = ("mlp", "gnn")


@dataclass
class TrainingConfig:
    loss_kind: str = "lf2"
    w_runtime: float = 0.5
    w_distill: float = 0.5
    sigma_a: float | None = None        # None: std of the training targets
    sigma_logb: float | None = None
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    mlp_hidden: tuple[int, ...] = (64, 64)
    gnn_layers: int = 3
    gnn_width: int = 32
    gnn_head: tuple[int, ...] = (32,)
    patience: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.loss_kind.lower() not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        for w in (self.w_runtime, self.w_distill):
            if not (math.isfinite(w) and w >= 0):
                raise ConfigError("loss weights must be finite and >= 0")
        for s in (self.sigma_a, self.sigma_logb):
            if s is not None and not s > 0:
                raise ConfigError("parameter scales must be > 0")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, learning_rate > 0 required")
        if self.gnn_layers < 1 or self.gnn_width < 1:
            raise ConfigError("gnn needs at least one layer of width >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        d["gnn_head"] = list(self.gnn_head)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainingConfig:
        d = dict(d)
        for k in ("mlp_hidden", "gnn_head"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown training config keys {sorted(unknown)}")
        return cls(**d)


class Network:
    """One of the two architectures behind a common forward/backward surface."""

    def __init__(self, kind: str, params: Params):
        if kind not in NETWORK_KINDS:
            raise ConfigError(f"network kind must be one of {NETWORK_KINDS}")
        self.kind = kind
        self.params = params

    @classmethod
    def init(cls, kind: str, config: TrainingConfig, in_dim: int, rng: np.random.Generator) -> Network:
        if kind == "mlp":
            return cls(kind, init_mlp(rng, in_dim, config.mlp_hidden))
        return cls(kind, init_gnn(rng, in_dim, [config.gnn_width] * config.gnn_layers, config.gnn_head))

    def inputs(self, examples: Sequence[TrainingExample]):
        if self.kind == "mlp":
            return np.vstack([e.job_features for e in examples])
        return GraphBatch.from_graphs([(e.operator_features, e.normalized_adjacency) for e in examples])

    def forward(self, inputs):
        if self.kind == "mlp":
            return mlp_forward(self.params, inputs)
        return gnn_forward(self.params, inputs)

    def backward(self, inputs, cache, dout) -> Params:
        if self.kind == "mlp":
            return mlp_backward(self.params, cache, dout)[0]
        return gnn_backward(self.params, inputs, cache, dout)

    @property
    def output_bias(self) -> str:
        n = sum(1 for k in self.params if k[0] == "W" and k[1:].isdigit())
        return f"b{n - 1}"


def loss_targets(examples: Sequence[TrainingExample], scales: ParamScales) -> LossTargets:
    scaled = np.array([scales.scale(e.target_params) for e in examples])
    gb = [e.gbrt_runtime for e in examples]
    return LossTargets(
        a_scaled=scaled[:, 0],
        b_scaled=scaled[:, 1],
        log_alloc=np.log([float(e.observed_allocation) for e in examples]),
        runtime=np.array([e.observed_runtime for e in examples], dtype=float),
        gbrt_runtime=None if any(g is None for g in gb) else np.array(gb, dtype=float),
    )


def _subset(t: LossTargets, idx: np.ndarray) -> LossTargets:
    return LossTargets(t.a_scaled[idx], t.b_scaled[idx], t.log_alloc[idx], t.runtime[idx],
                       None if t.gbrt_runtime is None else t.gbrt_runtime[idx])


def resolve_scales(examples: Sequence[TrainingExample], config: TrainingConfig) -> ParamScales:
    fitted = ParamScales.fit([e.target_params for e in examples])
    return ParamScales(config.sigma_a or fitted.sigma_a, config.sigma_logb or fitted.sigma_logb)


@dataclass
class TrainedNetwork:
    network: Network
    scales: ParamScales
    config: TrainingConfig
    history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


def evaluate_loss(net: Network, examples: Sequence[TrainingExample], scales: ParamScales,
                  config: TrainingConfig, kind: str | None = None) -> LossParts:
    out, _ = net.forward(net.inputs(examples))
    parts, _ = loss_and_grad(out, loss_targets(examples, scales), scales, kind or config.loss_kind,
                             config.w_runtime, config.w_distill)
    return parts


def fit_network(examples: Sequence[TrainingExample], config: TrainingConfig, kind: str,
                val_examples: Sequence[TrainingExample] | None = None) -> TrainedNetwork:
    """Adam on the configured loss; deterministic for a fixed seed."""
    config.validate()
    if not examples:
        raise EmptyInputError("cannot train on zero examples")
    if config.loss_kind.lower() == "lf3" and any(e.gbrt_runtime is None for e in examples):
        raise ConfigError("lf3 needs a trained tree model; attach gbrt_runtime to every example")
    rng = np.random.default_rng(config.seed)
    scales = resolve_scales(examples, config)
    in_dim = examples[0].job_features.size if kind == "mlp" else examples[0].operator_features.shape[1]
    net = Network.init(kind, config, in_dim, rng)
    targets = loss_targets(examples, scales)
    # start the decoded curve at the typical target
    mean_abs_a = float(np.mean(np.abs(targets.a_scaled)))
    net.params[net.output_bias][:] = [math.log(max(mean_abs_a, 1e-3)), float(np.mean(targets.b_scaled))]

    opt = Adam(net.params, lr=config.learning_rate)
    n = len(examples)
    batches_fixed = config.batch_size >= n
    full_inputs = net.inputs(examples) if batches_fixed else None
    history: list[float] = []
    val_history: list[float] = []
    best = (math.inf, None)
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            inputs = full_inputs if batches_fixed else net.inputs([examples[i] for i in idx])
            out, cache = net.forward(inputs)
            parts, dout = loss_and_grad(out, _subset(targets, idx), scales, config.loss_kind,
                                        config.w_runtime, config.w_distill)
            if not math.isfinite(parts.total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            grads = net.backward(inputs, cache, dout)
            opt.step(net.params, grads)
            epoch_loss += parts.total * idx.size
        history.append(epoch_loss / n)
        if val_examples:
            vl = evaluate_loss(net, val_examples, scales, config).total
            val_history.append(vl)
            if config.patience is not None:
                if vl < best[0] - 1e-9:
                    best = (vl, copy.deepcopy(net.params))
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        log.info("early stop at epoch %d", epoch)
                        break
    if config.patience is not None and best[1] is not None:
        net.params = best[1]
    return TrainedNetwork(net, scales, config, history, val_history)


def tune_runtime_weight(train: Sequence[TrainingExample], val: Sequence[TrainingExample],
                        config: TrainingConfig, kind: str,
                        grid: Sequence[float] = (0.05, 0.1, 0.25, 0.5, 1.0, 2.0),
                        slack: float = 0.1) -> float:
    """Largest run-time weight whose validation parameter MAE stays within
    ``slack`` of the curve-only loss's."""
    base_cfg = replace(config, loss_kind="lf1")
    base = fit_network(train, base_cfg, kind)
    ref = evaluate_loss(base.network, val, base.scales, base_cfg).param_mae
    chosen = min(grid)
    for w in sorted(grid):
        cfg = replace(config, loss_kind="lf2", w_runtime=w)
        tn = fit_network(train, cfg, kind)
        mae = evaluate_loss(tn.network, val, tn.scales, cfg).param_mae
        log.info("w_runtime=%g param_mae=%.4f (lf1 %.4f)", w, mae, ref)
        if mae <= (1 + slack) * ref:
            chosen = w
    return chosen

