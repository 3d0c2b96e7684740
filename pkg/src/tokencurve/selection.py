"""Representative subset selection: filter, cluster, stratified under-sampling, KS check.

A *population* (the whole workload) is clustered; a *pool* of candidate jobs
is mapped onto the population clusters and under-sampled so the subset's
cluster mix follows the population's. Two-sample KS statistics on every
feature, before and after, measure how far the pool and the subset sit from
the population.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .configfile import dataclass_from_mapping, read_mapping
from .errors import ConfigError, EmptyInputError, InfeasibleSelectionError
from .features import FeatureSpace
from .workload import Job

log = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    k: int = 8
    subset_size: int = 200
    per_template_cap: int = 3
    seed: int = 0
    n_init: int = 4
    min_allocation: int = 0          # 0: no lower bound
    max_allocation: int = 0          # 0: no upper bound
    templates: tuple[str, ...] = ()  # empty: every template allowed
    window_start: int = 0            # position window over the workload's job order
    window_stop: int = 0             # 0: through the end

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.subset_size < 1:
            raise ConfigError("subset_size must be >= 1")
        if self.per_template_cap < 1:
            raise ConfigError("per_template_cap must be >= 1")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")
        if self.min_allocation < 0 or self.max_allocation < 0:
            raise ConfigError("allocation bounds must be >= 0")
        if self.max_allocation and self.max_allocation < self.min_allocation:
            raise ConfigError("max_allocation must be >= min_allocation")
        if self.window_start < 0 or self.window_stop < 0:
            raise ConfigError("window bounds must be >= 0")

    @classmethod
    def from_mapping(cls, data: dict) -> SelectionConfig:
        return dataclass_from_mapping(cls, data)

    @classmethod
    def from_file(cls, path: str | Path) -> SelectionConfig:
        return cls.from_mapping(read_mapping(path))


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    inertia: float
    iterations: int


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (X**2).sum(1)[:, None] - 2 * X @ centers.T + (centers**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def nearest_center(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.argmin(_sq_dists(np.asarray(X, dtype=float), centers), axis=1)


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a chosen center; take any unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx:idx + 1]).ravel())
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int, tol: float) -> KMeansResult:
    k = centers.shape[0]
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centers)
        assign = np.argmin(d, axis=1)
        new = np.empty_like(centers)
        for c in range(k):
            members = X[assign == c]
            if len(members):
                new[c] = members.mean(0)
            else:
                # refill an empty cluster with the point farthest from its center
                far = int(np.argmax(d[np.arange(len(X)), assign]))
                new[c] = X[far]
        shift = float(np.sqrt(((new - centers) ** 2).sum(1)).max())
        centers = new
        if shift < tol:
            break
    d = _sq_dists(X, centers)
    assign = np.argmin(d, axis=1)
    inertia = float(d[np.arange(len(X)), assign].sum())
    return KMeansResult(assign, centers, inertia, it)


def kmeans(X: np.ndarray, k: int, seed: int = 0, n_init: int = 4,
           max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """k-means++ seeding then Lloyd iterations; the lowest-inertia of ``n_init`` runs wins."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("kmeans needs a non-empty 2-D array")
    if not 1 <= k <= X.shape[0]:
        raise ConfigError(f"k={k} must be between 1 and the number of vectors ({X.shape[0]})")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(X, _plus_plus(X, k, rng), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# ---------------------------------------------------------------------------
# stratified under-sampling


def largest_remainder(weights: Sequence[float], total: int) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights``; ties go to the lower index."""
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        w = np.ones_like(w)
    exact = w / w.sum() * total
    base = np.floor(exact).astype(int)
    rest = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base


@dataclass
class SampleResult:
    indices: list[int]
    quotas: list[int]
    counts: list[int]
    spilled: dict[int, int] = field(default_factory=dict)


def stratified_sample(assignments: Sequence[int], templates: Sequence[str],
                      population_proportions: Sequence[float], subset_size: int,
                      per_template_cap: int, seed: int = 0) -> SampleResult:
    """Pick ``subset_size`` pool indices whose cluster counts follow the population.

    Each template contributes at most ``per_template_cap`` jobs. Clusters that
    run dry hand their shortfall to the others in proportion to population
    share; if the whole pool is exhausted an InfeasibleSelectionError lists the
    per-cluster deficits.
    """
    assignments = np.asarray(assignments, dtype=int)
    if len(assignments) != len(templates):
        raise ConfigError("assignments and templates must have the same length")
    props = np.asarray(population_proportions, dtype=float)
    k = len(props)
    if subset_size < 1 or per_template_cap < 1:
        raise ConfigError("subset_size and per_template_cap must be >= 1")
    rng = np.random.default_rng(seed)
    queues = [list(rng.permutation(np.flatnonzero(assignments == c))) for c in range(k)]
    used: dict[str, int] = {}
    picked: list[list[int]] = [[] for _ in range(k)]

    def take(c: int, want: int) -> int:
        got = 0
        q = queues[c]
        while got < want and q:
            i = int(q.pop(0))
            t = templates[i]
            if used.get(t, 0) >= per_template_cap:
                continue
            used[t] = used.get(t, 0) + 1
            picked[c].append(i)
            got += 1
        return got

    def has_candidates(c: int) -> bool:
        queues[c] = [i for i in queues[c] if used.get(templates[i], 0) < per_template_cap]
        return bool(queues[c])

    quotas = largest_remainder(props, subset_size)
    deficits = {}
    for c in range(k):
        short = int(quotas[c]) - take(c, int(quotas[c]))
        if short:
            deficits[c] = short
    spilled: dict[int, int] = {}
    owed = sum(deficits.values())
    if owed:
        log.warning("clusters %s are short %s jobs; spilling to other clusters", sorted(deficits), owed)
    while owed:
        open_ = [c for c in range(k) if has_candidates(c)]
        if not open_:
            raise InfeasibleSelectionError(
                f"pool exhausted with {owed} jobs still owed", deficits=deficits)
        share = largest_remainder(props[open_] if props[open_].sum() > 0 else np.ones(len(open_)), owed)
        for c, want in zip(open_, share):
            if want:
                got = take(c, int(want))
                spilled[c] = spilled.get(c, 0) + got
                owed -= got
    indices = sorted(i for p in picked for i in p)
    return SampleResult(indices, [int(q) for q in quotas], [len(p) for p in picked], spilled)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_statistic(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sample KS distance: largest gap between the empirical CDFs."""
    a = np.sort(np.asarray(sample_a, dtype=float))
    b = np.sort(np.asarray(sample_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptyInputError("ks_statistic needs two non-empty samples")
    xs = np.concatenate([a, b])
    fa = np.searchsorted(a, xs, side="right") / a.size
    fb = np.searchsorted(b, xs, side="right") / b.size
    return float(np.abs(fa - fb).max())


def ks_per_feature(A: np.ndarray, B: np.ndarray) -> list[float]:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape[1] != B.shape[1]:
        raise ConfigError("feature counts differ")
    return [ks_statistic(A[:, j], B[:, j]) for j in range(A.shape[1])]


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class SelectionReport:
    k: int
    population_size: int
    pool_size: int
    subset_size: int
    population_proportions: list[float]
    pool_proportions: list[float]
    subset_proportions: list[float]
    quotas: list[int]
    spilled: dict[int, int]
    ks_before: list[float]
    ks_after: list[float]
    selected: list[str] = field(default_factory=list)

    @property
    def ks_before_max(self) -> float:
        return max(self.ks_before)

    @property
    def ks_after_max(self) -> float:
        return max(self.ks_after)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spilled"] = {str(c): n for c, n in sorted(self.spilled.items())}
        d["ks_before_max"] = self.ks_before_max
        d["ks_after_max"] = self.ks_after_max
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _proportions(assign: np.ndarray, k: int) -> list[float]:
    counts = np.bincount(assign, minlength=k).astype(float)
    return (counts / counts.sum()).tolist() if counts.sum() else [0.0] * k


def select_from_matrices(population: np.ndarray, pool: np.ndarray, pool_templates: Sequence[str],
                         config: SelectionConfig,
                         pool_ids: Sequence[str] | None = None) -> tuple[list[int], SelectionReport]:
    """Core selection on feature matrices; returns chosen pool row indices and the report."""
    config.validate()
    population = np.asarray(population, dtype=float)
    pool = np.asarray(pool, dtype=float)
    if len(pool) == 0:
        raise EmptyInputError("the candidate pool is empty")
    km = kmeans(population, config.k, seed=config.seed, n_init=config.n_init)
    pop_props = _proportions(km.assignments, config.k)
    pool_assign = nearest_center(pool, km.centers)
    res = stratified_sample(pool_assign, pool_templates, pop_props, config.subset_size,
                            config.per_template_cap, seed=config.seed)
    chosen = res.indices
    report = SelectionReport(
        k=config.k,
        population_size=len(population),
        pool_size=len(pool),
        subset_size=len(chosen),
        population_proportions=pop_props,
        pool_proportions=_proportions(pool_assign, config.k),
        subset_proportions=_proportions(pool_assign[chosen], config.k),
        quotas=res.quotas,
        spilled=res.spilled,
        ks_before=ks_per_feature(population, pool),
        ks_after=ks_per_feature(population, pool[chosen]),
        selected=[str(pool_ids[i]) for i in chosen] if pool_ids is not None else [],
    )
    return chosen, report


def filter_jobs(jobs: Sequence[Job], config: SelectionConfig) -> list[Job]:
    """Candidate pool: position window, allocation range, and template allowlist."""
    stop = config.window_stop or len(jobs)
    allowed = set(config.templates)
    out = []
    for job in jobs[config.window_start:stop]:
        if config.min_allocation and job.observed_allocation < config.min_allocation:
            continue
        if config.max_allocation and job.observed_allocation > config.max_allocation:
            continue
        if allowed and job.template_id not in allowed:
            continue
        out.append(job)
    return out


def select_jobs(jobs: Sequence[Job], config: SelectionConfig,
                space: FeatureSpace | None = None) -> tuple[list[Job], SelectionReport]:
    """Full pipeline over a workload: clustering on standardized job vectors of all jobs."""
    if not jobs:
        raise EmptyInputError("empty workload")
    space = space or FeatureSpace.fit(jobs)
    pool = filter_jobs(jobs, config)
    if not pool:
        raise EmptyInputError("no jobs survive the filters")
    chosen, report = select_from_matrices(
        space.job_matrix(jobs), space.job_matrix(pool), [j.template_id for j in pool], config,
        pool_ids=[j.id for j in pool])
    return [pool[i] for i in chosen], report


# ---------------------------------------------------------------------------
# shipped fixture

FIXTURE_POPULATION = (0.12, 0.08, 0.10, 0.14, 0.059, 0.267, 0.094, 0.14)
FIXTURE_POOL = (0.04, 0.006, 0.035, 0.035, 0.03, 0.799, 0.025, 0.03)


@dataclass
class BiasedPool:
    population: np.ndarray
    pool: np.ndarray
    pool_templates: list[str]
    population_labels: np.ndarray
    pool_labels: np.ndarray


def biased_pool_fixture(seed: int = 0, n_population: int = 10_000, n_pool: int = 5_000,
                        dim: int = 4, spread: float = 0.35) -> BiasedPool:
    """Eight separated Gaussian groups; the pool over-represents group 6 (79.9% vs 26.7%).

    Pool jobs come in pairs sharing a template so a cap of 3 never binds.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 4.0, size=(len(FIXTURE_POPULATION), dim))

    def draw(props, n):
        counts = largest_remainder(props, n)
        labels = np.repeat(np.arange(len(props)), counts)
        X = means[labels] + rng.normal(0.0, spread, size=(n, dim))
        return X, labels

    pop, pop_labels = draw(FIXTURE_POPULATION, n_population)
    pool, pool_labels = draw(FIXTURE_POOL, n_pool)
    templates = [f"g{pool_labels[i]}-{i // 2}" for i in range(n_pool)]
    return BiasedPool(pop, pool, templates, pop_labels, pool_labels)
