"""Job featurization: aggregated job vectors, operator matrices, adjacency.

Raw values are produced first (means, counts, one-hots); a fitted
:class:`Standardizer` then applies ``log1p`` and z-scoring to the numeric
columns. Statistics are fitted on the training split only and travel with
the model artifact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInputError, InvalidDAGError, ShapeError
from .workload import NUMERIC_FIELDS, OTHER, Job, Operator, check_acyclic, partition_kinds, physical_ops

N_NUMERIC = len(NUMERIC_FIELDS)


@dataclass(frozen=True)
class Vocabulary:
    physical_ops: tuple[str, ...]
    partition_kinds: tuple[str, ...]

    @classmethod
    def default(cls) -> Vocabulary:
        return cls(physical_ops() + (OTHER,), partition_kinds() + (OTHER,))

    def op_index(self, name: str) -> int:
        try:
            return self.physical_ops.index(name)
        except ValueError:
            return len(self.physical_ops) - 1

    def partition_index(self, name: str) -> int:
        try:
            return self.partition_kinds.index(name)
        except ValueError:
            return len(self.partition_kinds) - 1

    @property
    def n_categorical(self) -> int:
        return len(self.physical_ops) + len(self.partition_kinds)

    @property
    def operator_dim(self) -> int:
        return N_NUMERIC + self.n_categorical

    @property
    def job_dim(self) -> int:
        return N_NUMERIC + self.n_categorical + 2

    def operator_columns(self) -> list[str]:
        return (list(NUMERIC_FIELDS) + [f"op={k}" for k in self.physical_ops]
                + [f"partition={k}" for k in self.partition_kinds])

    def job_columns(self) -> list[str]:
        return (
            [f"mean_{f}" for f in NUMERIC_FIELDS]
            + [f"count_op={k}" for k in self.physical_ops]
            + [f"count_partition={k}" for k in self.partition_kinds]
            + ["operator_count", "stage_count"]
        )

    def to_dict(self) -> dict:
        return {"physical_ops": list(self.physical_ops), "partition_kinds": list(self.partition_kinds)}

    @classmethod
    def from_dict(cls, d: dict) -> Vocabulary:
        return cls(tuple(d["physical_ops"]), tuple(d["partition_kinds"]))


def operator_row(op: Operator, vocab: Vocabulary | None = None) -> np.ndarray:
    """Raw operator row: numeric fields untouched, then the two one-hot blocks."""
    vocab = vocab or Vocabulary.default()
    row = np.zeros(vocab.operator_dim)
    row[:N_NUMERIC] = [0.0 if v is None else v for v in op.numeric()]
    row[N_NUMERIC + vocab.op_index(op.physical_op)] = 1.0
    row[N_NUMERIC + len(vocab.physical_ops) + vocab.partition_index(op.partition_kind)] = 1.0
    return row


def operator_matrix(job: Job, vocab: Vocabulary | None = None) -> np.ndarray:
    if not job.operators:
        raise EmptyInputError(f"job {job.id} has no operators")
    vocab = vocab or Vocabulary.default()
    return np.vstack([operator_row(op, vocab) for op in job.operators])


def aggregate_job(job: Job, vocab: Vocabulary | None = None) -> np.ndarray:
    """Raw job vector: numeric means, categorical frequency counts, operator and stage counts."""
    mat = operator_matrix(job, vocab)
    return np.concatenate([
        mat[:, :N_NUMERIC].mean(axis=0),
        mat[:, N_NUMERIC:].sum(axis=0),
        [len(job.operators), job.stage_count],
    ])


def adjacency(job: Job) -> np.ndarray:
    """Binary N x N matrix with (i, j) = 1 for an edge from operator i to operator j."""
    ids = [op.id for op in job.operators]
    check_acyclic(ids, job.edges)
    pos = {oid: k for k, oid in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    for p, c in job.edges:
        A[pos[p], pos[c]] = 1.0
    if np.any(np.diag(A)):
        raise InvalidDAGError("self loop in operator graph")
    return A


@dataclass
class Standardizer:
    """log1p + z-score on the first ``n_transform`` columns; remaining columns pass through."""

    mean: np.ndarray
    std: np.ndarray
    n_transform: int

    @classmethod
    def fit(cls, raw: np.ndarray, n_transform: int | None = None) -> Standardizer:
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[0] == 0:
            raise EmptyInputError("need a non-empty 2-d matrix to fit statistics")
        n = raw.shape[1] if n_transform is None else n_transform
        logged = np.log1p(raw[:, :n])
        mean = logged.mean(axis=0)
        std = logged.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(mean, std, n)

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] < self.n_transform:
            raise ShapeError(f"expected at least {self.n_transform} columns, got {raw.shape[-1]}")
        out = raw.copy()
        out[..., : self.n_transform] = (np.log1p(raw[..., : self.n_transform]) - self.mean) / self.std
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "n_transform": self.n_transform}

    @classmethod
    def from_dict(cls, d: dict) -> Standardizer:
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float), int(d["n_transform"]))


def featurize_operator(op: Operator, scaler: Standardizer, vocab: Vocabulary | None = None) -> np.ndarray:
    return scaler.transform(operator_row(op, vocab))


@dataclass
class FeatureSpace:
    """Vocabulary plus fitted statistics for job vectors and operator rows."""

    vocab: Vocabulary
    job_scaler: Standardizer
    op_scaler: Standardizer

    @classmethod
    def fit(cls, jobs: Sequence[Job], vocab: Vocabulary | None = None) -> FeatureSpace:
        vocab = vocab or Vocabulary.default()
        if not jobs:
            raise EmptyInputError("cannot fit feature statistics on zero jobs")
        job_raw = np.vstack([aggregate_job(j, vocab) for j in jobs])
        op_raw = np.vstack([operator_matrix(j, vocab) for j in jobs])
        return cls(vocab, Standardizer.fit(job_raw), Standardizer.fit(op_raw, N_NUMERIC))

    def job_vector(self, job: Job) -> np.ndarray:
        return self.job_scaler.transform(aggregate_job(job, self.vocab))

    def job_matrix(self, jobs: Sequence[Job]) -> np.ndarray:
        return self.job_scaler.transform(np.vstack([aggregate_job(j, self.vocab) for j in jobs]))

    def operator_features(self, job: Job) -> np.ndarray:
        return self.op_scaler.transform(operator_matrix(job, self.vocab))

    def to_dict(self) -> dict:
        return {"vocab": self.vocab.to_dict(), "job_scaler": self.job_scaler.to_dict(),
                "op_scaler": self.op_scaler.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> FeatureSpace:
        return cls(Vocabulary.from_dict(d["vocab"]), Standardizer.from_dict(d["job_scaler"]),
                   Standardizer.from_dict(d["op_scaler"]))
