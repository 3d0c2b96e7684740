"""Training data: simulator-based augmentation, curve targets, example assembly."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import InsufficientDataError
from ..features import FeatureSpace, adjacency
from ..pcc import PccParams, fit_power_law
from ..skyline import simulate
from ..workload import Job
from .nn import normalized_adjacency

log = logging.getLogger(__name__)

BELOW_FRACTIONS = (0.8, 0.6)
ABOVE_PEAK_FRACTIONS = (1.2, 1.4)


def round_tokens(x: float) -> int:
    return max(1, int(math.floor(x + 0.5)))


def augment(job: Job) -> list[tuple[int, int]]:
    """(allocation, runtime) points: the observed run, simulated runs at 80%/60% of
    the allocation, and for over-allocated jobs 120%/140% of the peak at the
    peak run-time. Duplicate allocations keep their first point."""
    sky = job.observed_skyline
    if sky is None:
        raise InsufficientDataError(f"job {job.id} has no observed skyline")
    alloc = job.observed_allocation
    pts = [(alloc, sky.runtime)]
    for f in BELOW_FRACTIONS:
        a = round_tokens(f * alloc)
        pts.append((a, simulate(sky, a).runtime))
    if alloc > sky.peak:
        for f in ABOVE_PEAK_FRACTIONS:
            pts.append((round_tokens(f * sky.peak), sky.runtime))
    seen = set()
    out = []
    for a, r in pts:
        if a not in seen:
            seen.add(a)
            out.append((a, r))
    return out


def fit_targets(job: Job) -> PccParams:
    return fit_power_law(augment(job)).params


@dataclass(frozen=True)
class ParamScales:
    """Divisors putting ``a`` and ``log b`` on comparable scales."""

    sigma_a: float = 1.0
    sigma_logb: float = 1.0

    @classmethod
    def fit(cls, params: Sequence[PccParams]) -> ParamScales:
        a = np.array([p.a for p in params])
        lb = np.log([p.b for p in params])
        sa, sb = float(a.std()), float(lb.std())
        return cls(sa if sa > 1e-8 else 1.0, sb if sb > 1e-8 else 1.0)

    def scale(self, p: PccParams) -> tuple[float, float]:
        return p.a / self.sigma_a, math.log(p.b) / self.sigma_logb

    def encode(self, p: PccParams) -> tuple[float, float]:
        """Raw network outputs (u, v) that decode to ``p``; needs a < 0."""
        if p.a >= 0:
            raise ValueError("only curves with a < 0 have an encoding")
        return math.log(-p.a / self.sigma_a), math.log(p.b) / self.sigma_logb

    def decode(self, u: float, v: float) -> PccParams:
        return PccParams(-self.sigma_a * math.exp(u), math.exp(self.sigma_logb * v))

    def to_dict(self) -> dict:
        return {"sigma_a": self.sigma_a, "sigma_logb": self.sigma_logb}


@dataclass
class TrainingExample:
    job_id: str
    job_features: np.ndarray
    operator_features: np.ndarray
    adjacency: np.ndarray
    target_params: PccParams
    observed_allocation: int
    observed_runtime: float
    gbrt_runtime: float | None = None

    @cached_property
    def normalized_adjacency(self):
        return normalized_adjacency(self.adjacency)


def build_examples(jobs: Sequence[Job], space: FeatureSpace) -> list[TrainingExample]:
    """Featurize jobs and attach fitted curve targets; jobs without a usable fit are skipped."""
    out = []
    for job in jobs:
        try:
            target = fit_targets(job)
        except InsufficientDataError as exc:
            log.warning("skipping %s: %s", job.id, exc)
            continue
        out.append(TrainingExample(
            job_id=job.id,
            job_features=space.job_vector(job),
            operator_features=space.operator_features(job),
            adjacency=adjacency(job),
            target_params=target,
            observed_allocation=job.observed_allocation,
            observed_runtime=float(job.observed_runtime),
        ))
    return out


def gbrt_rows(jobs: Sequence[Job], space: FeatureSpace) -> tuple[np.ndarray, np.ndarray]:
    """Tree-model rows: job vector + log(allocation) -> runtime, one row per augmented point."""
    X, y = [], []
    for job in jobs:
        vec = space.job_vector(job)
        for a, r in augment(job):
            X.append(np.append(vec, math.log(a)))
            y.append(float(r))
    return np.asarray(X), np.asarray(y)
