"""Trained model artifacts: prediction entry points and versioned JSON files."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ParseError, VersionError
from ..features import FeatureSpace, adjacency
from ..pcc import PccParams
from ..workload import Job
from .data import ParamScales, TrainingExample, gbrt_rows
from .gbrt import GBRTConfig, GBRTModel, gbrt_curve_pl, train_gbrt
from .nn import GraphBatch, Params, normalized_adjacency
from .training import Network, TrainingConfig, fit_network

FORMAT_VERSION = 1
KINDS = ("gbrt", "mlp", "gnn")


@dataclass
class ModelArtifact:
    kind: str
    features: FeatureSpace
    config: dict
    weights: Params | None = None
    scales: ParamScales | None = None
    gbrt: GBRTModel | None = None
    history: list[float] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")

    # -- prediction ---------------------------------------------------------

    def _network(self) -> Network:
        return Network(self.kind, self.weights)

    def raw_outputs(self, jobs: Sequence[Job]) -> np.ndarray:
        net = self._network()
        if self.kind == "mlp":
            inputs = self.features.job_matrix(jobs)
        else:
            inputs = GraphBatch.from_graphs(
                [(self.features.operator_features(j), normalized_adjacency(adjacency(j))) for j in jobs])
        out, _ = net.forward(inputs)
        return out

    def predict_many(self, jobs: Sequence[Job]) -> list[PccParams]:
        if not jobs:
            return []
        if self.kind == "gbrt":
            return [gbrt_curve_pl(self, j).params for j in jobs]
        return [self.scales.decode(float(u), float(v)) for u, v in self.raw_outputs(jobs)]

    def predict(self, job: Job) -> PccParams:
        return self.predict_many([job])[0]

    def predict_from_features(self, raw_job_vector: Sequence[float]) -> PccParams:
        """Curve from a precomputed (untransformed) aggregated job vector; MLP only."""
        if self.kind != "mlp":
            raise ConfigError("precomputed features are only accepted by mlp artifacts")
        x = self.features.job_scaler.transform(np.asarray(raw_job_vector, dtype=float))
        out, _ = self._network().forward(x[None, :])
        return self.scales.decode(float(out[0, 0]), float(out[0, 1]))

    def predict_runtime(self, job: Job, allocations: Sequence[float]) -> np.ndarray:
        alloc = np.asarray(allocations, dtype=float)
        if self.kind == "gbrt":
            vec = self.features.job_vector(job)
            X = np.column_stack([np.tile(vec, (alloc.size, 1)), np.log(alloc)])
            return self.gbrt.predict(X)
        p = self.predict(job)
        return p.b * alloc**p.a

    @property
    def parameter_count(self) -> int:
        if self.kind == "gbrt":
            return sum(2 * t.feature.size for t in self.gbrt.trees)
        return int(sum(v.size for v in self.weights.values()))

    @property
    def version_tag(self) -> str:
        digest = hashlib.sha256(dumps(self).encode()).hexdigest()[:12]
        return f"{self.kind}-v{self.format_version}-{digest}"

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "format_version": self.format_version,
            "kind": self.kind,
            "config": self.config,
            "features": self.features.to_dict(),
            "history": list(self.history),
        }
        if self.kind == "gbrt":
            d["gbrt"] = self.gbrt.to_dict()
        else:
            d["param_scales"] = self.scales.to_dict()
            d["weights"] = {k: v.tolist() for k, v in sorted(self.weights.items())}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelArtifact:
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise VersionError(f"artifact format_version {version!r} is not supported (expected {FORMAT_VERSION})")
        kind = d["kind"]
        art = cls(kind=kind, features=FeatureSpace.from_dict(d["features"]), config=d.get("config", {}),
                  history=list(d.get("history", [])))
        if kind == "gbrt":
            art.gbrt = GBRTModel.from_dict(d["gbrt"])
        else:
            art.scales = ParamScales(**d["param_scales"])
            art.weights = {k: np.asarray(v, dtype=float) for k, v in d["weights"].items()}
        return art


def dumps(artifact: ModelArtifact) -> str:
    return json.dumps(artifact.to_dict(), sort_keys=True)


def serialize(artifact: ModelArtifact, path: str | Path) -> None:
    Path(path).write_text(dumps(artifact) + "\n")


def deserialize(path: str | Path) -> ModelArtifact:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"artifact is not valid JSON ({exc.msg})", line=exc.lineno) from None
    if not isinstance(data, dict) or "kind" not in data:
        raise ParseError("artifact JSON lacks a 'kind' field")
    return ModelArtifact.from_dict(data)


def predict(artifact: ModelArtifact, job: Job) -> PccParams:
    return artifact.predict(job)


def train_gbrt_artifact(jobs: Sequence[Job], space: FeatureSpace, config: GBRTConfig | None = None) -> ModelArtifact:
    """Tree model on augmented (job features + log tokens -> runtime) rows."""
    cfg = config or GBRTConfig()
    X, y = gbrt_rows(jobs, space)
    model = train_gbrt(X, y, cfg)
    return ModelArtifact(kind="gbrt", features=space, config=asdict(cfg), gbrt=model, history=model.train_loss)


def train_network(examples: Sequence[TrainingExample], config: TrainingConfig, kind: str,
                  space: FeatureSpace, val_examples: Sequence[TrainingExample] | None = None) -> ModelArtifact:
    tn = fit_network(examples, config, kind, val_examples)
    return ModelArtifact(kind=kind, features=space, config=config.to_dict(), weights=tn.network.params,
                         scales=tn.scales, history=tn.history)


def attach_gbrt_predictions(examples: Sequence[TrainingExample], jobs_by_id: dict[str, Job],
                            gbrt: ModelArtifact) -> None:
    """Store the tree model's run-time at each example's observed allocation (needed by lf3)."""
    for e in examples:
        e.gbrt_runtime = float(gbrt.predict_runtime(jobs_by_id[e.job_id], [e.observed_allocation])[0])


def forced_curve_artifact(space: FeatureSpace, params: PccParams, kind: str = "mlp",
                          hidden: Sequence[int] = (4,)) -> ModelArtifact:
    """Network artifact with zero weights whose output bias decodes to ``params`` for every job."""
    if params.a >= 0:
        raise ConfigError("forced curves need a < 0")
    scales = ParamScales(1.0, 1.0)
    cfg = TrainingConfig(mlp_hidden=tuple(hidden), gnn_layers=1, gnn_width=hidden[0], gnn_head=tuple(hidden))
    rng = np.random.default_rng(0)
    in_dim = space.vocab.job_dim if kind == "mlp" else space.vocab.operator_dim
    net = Network.init(kind, cfg, in_dim, rng)
    for k in net.params:
        net.params[k][...] = 0.0
    u, v = scales.encode(params)
    net.params[net.output_bias][:] = [u, v]
    return ModelArtifact(kind=kind, features=space, config=cfg.to_dict(), weights=net.params, scales=scales)
