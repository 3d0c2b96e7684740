"""Scoring predicted curves and validating the skyline simulator against an executor."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import EmptyInputError, InfeasibleCapError, InsufficientDataError
from .models.artifact import ModelArtifact
from .models.data import ParamScales, fit_targets, round_tokens
from .models.gbrt import gbrt_curve_pl, gbrt_curve_ss
from .pcc import PccFit, PccParams
from .skyline import Skyline, relative_area_difference, simulate
from .workload import Job, execute_at_cap

log = logging.getLogger(__name__)

Points = Sequence[tuple[float, float]]
Curve = Union[PccParams, PccFit, Points, Sequence[float]]


def _is_points(curve) -> bool:
    return len(curve) > 0 and isinstance(curve[0], (tuple, list, np.ndarray))


def pattern_check(curve: Curve) -> bool:
    """True when the curve never increases with more tokens.

    Parametric curves pass iff a <= 0; point lists (allocation, runtime) or
    bare runtime sequences ordered by allocation pass iff no step goes up.
    """
    if isinstance(curve, PccFit):
        curve = curve.params
    if isinstance(curve, PccParams):
        return curve.a <= 0 and curve.b > 0
    if _is_points(curve):
        pts = sorted((float(a), float(r)) for a, r in curve)
        values = np.array([r for _, r in pts])
    else:
        values = np.asarray(curve, dtype=float)
    return bool(np.all(np.diff(values) <= 0))


def runtime_at(curve: Curve, allocation: float) -> float:
    if isinstance(curve, PccFit):
        curve = curve.params
    if isinstance(curve, PccParams):
        return curve.b * allocation**curve.a
    pts = sorted((float(a), float(r)) for a, r in curve)
    xs, ys = zip(*pts)
    return float(np.interp(allocation, xs, ys))


@dataclass(frozen=True)
class GroundTruth:
    allocation: float
    runtime: float
    params: PccParams | None = None


@dataclass
class EvalReport:
    model: str
    n: int
    pattern_non_increasing: float
    mae_curve_params: float | None
    median_ae_runtime: float

    def to_dict(self) -> dict:
        return asdict(self)


def score(predictions: Sequence[Curve], truths: Sequence[GroundTruth],
          scales: ParamScales | None = None, model: str = "model") -> EvalReport:
    """Pattern fraction, scaled parameter MAE, and median relative run-time error.

    The parameter MAE averages |a - a*|/sigma_a and |log b - log b*|/sigma_logb;
    it is None when any prediction is not parametric or a truth lacks params.
    """
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths must be aligned")
    if not truths:
        raise EmptyInputError("nothing to score")
    scales = scales or ParamScales()
    pattern = [pattern_check(p) for p in predictions]
    ape = []
    for p, t in zip(predictions, truths):
        if t.runtime <= 0:
            raise ValueError("observed runtime must be > 0")
        ape.append(abs(runtime_at(p, t.allocation) - t.runtime) / t.runtime)
    mae = None
    params = [p.params if isinstance(p, PccFit) else p for p in predictions]
    if all(isinstance(p, PccParams) for p in params) and all(t.params is not None for t in truths):
        errs = [(abs(p.a - t.params.a) / scales.sigma_a
                 + abs(math.log(p.b) - math.log(t.params.b)) / scales.sigma_logb) / 2
                for p, t in zip(params, truths)]
        mae = float(np.mean(errs))
    return EvalReport(model, len(truths), float(np.mean(pattern)), mae, float(np.median(ape)))


def ground_truth(jobs: Sequence[Job]) -> tuple[list[Job], list[GroundTruth]]:
    """Jobs with a usable fitted curve, paired with their truth records."""
    kept, truths = [], []
    for job in jobs:
        try:
            params = fit_targets(job)
        except InsufficientDataError:
            log.warning("no ground-truth curve for %s; skipped", job.id)
            continue
        kept.append(job)
        truths.append(GroundTruth(job.observed_allocation, float(job.observed_runtime), params))
    return kept, truths


def evaluate_artifact(artifact: ModelArtifact, jobs: Sequence[Job],
                      scales: ParamScales | None = None) -> list[EvalReport]:
    """One report per curve variant: the network itself, or the tree model's SS and PL curves."""
    kept, truths = ground_truth(jobs)
    if not kept:
        raise EmptyInputError("no evaluable jobs")
    if scales is None:
        scales = artifact.scales or ParamScales.fit([t.params for t in truths])
    if artifact.kind == "gbrt":
        ss = [gbrt_curve_ss(artifact, j) for j in kept]
        pl = [gbrt_curve_pl(artifact, j) for j in kept]
        return [score(ss, truths, scales, "gbrt-ss"), score(pl, truths, scales, "gbrt-pl")]
    return [score(artifact.predict_many(kept), truths, scales, artifact.kind)]


def reports_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "n", "pattern_non_increasing", "mae_curve_params", "median_ae_runtime"])
    for r in reports:
        w.writerow([r.model, r.n, f"{r.pattern_non_increasing:.6f}",
                    "" if r.mae_curve_params is None else f"{r.mae_curve_params:.6f}",
                    f"{r.median_ae_runtime:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# simulator validation

Executor = Callable[[Job, int], Skyline]
DEFAULT_CAPS = (1.0, 0.8, 0.6, 0.2)
DEFAULT_TOLERANCE_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass
class JobValidation:
    job_id: str
    caps: list[int]
    areas: list[int]
    runtimes: list[int]
    simulated_runtimes: list[int]
    ape: list[float]
    outliers: int
    pairs: int
    matched_pairs: int
    monotone: bool


@dataclass
class GroupStats:
    n_jobs: int
    n_points: int
    median_ape: float | None
    mean_ape: float | None
    max_ape: float | None


@dataclass
class SimulatorValidationReport:
    tolerance: float
    tolerance_grid: list[float]
    pair_match_cdf: list[float]
    jobs: list[JobValidation]
    groups: dict[str, GroupStats]
    skipped: list[tuple[str, int]] = field(default_factory=list)

    @property
    def outlier_counts(self) -> dict[str, int]:
        return {j.job_id: j.outliers for j in self.jobs}

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "tolerance_grid": self.tolerance_grid,
            "pair_match_cdf": self.pair_match_cdf,
            "groups": {k: asdict(v) for k, v in self.groups.items()},
            "skipped": [list(s) for s in self.skipped],
            "jobs": [asdict(j) for j in self.jobs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def groups_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "n_jobs", "n_points", "median_ape", "mean_ape", "max_ape"])
        fmt = lambda x: "" if x is None else f"{x:.6f}"  # noqa: E731
        for name, g in self.groups.items():
            w.writerow([name, g.n_jobs, g.n_points, fmt(g.median_ape), fmt(g.mean_ape), fmt(g.max_ape)])
        return buf.getvalue()

    def cdf_csv(self) -> str:
        rows = ["tolerance,fraction_matched"]
        rows += [f"{t:.4f},{f:.6f}" for t, f in zip(self.tolerance_grid, self.pair_match_cdf)]
        return "\n".join(rows) + "\n"


def _group(jobs: Sequence[JobValidation]) -> GroupStats:
    ape = np.array([a for j in jobs for a in j.ape])
    if ape.size == 0:
        return GroupStats(len(jobs), 0, None, None, None)
    return GroupStats(len(jobs), int(ape.size), float(np.median(ape)), float(ape.mean()), float(ape.max()))


def validate_simulator(jobs: Sequence[Job], caps: Sequence[float] = DEFAULT_CAPS,
                       executor: Executor = execute_at_cap, tolerance: float = 0.30,
                       tolerance_grid: Sequence[float] = DEFAULT_TOLERANCE_GRID) -> SimulatorValidationReport:
    """Re-run every job at fractions of its observed allocation and compare with the simulator.

    The first cap is the reference run; the simulator reshapes its skyline to
    every other cap and the relative error against the executor's run-time is
    recorded. Every pair of executions of a job is checked for matching area.
    An execution is an outlier when its area is more than ``tolerance`` away
    from the job's median area. Jobs whose executor run-times grow with more
    tokens are kept out of the ``non_anomalous`` group.
    """
    if not jobs:
        raise EmptyInputError("no jobs to validate")
    grid = np.asarray(tolerance_grid, dtype=float)
    diffs: list[float] = []
    results: list[JobValidation] = []
    skipped: list[tuple[str, int]] = []
    for job in jobs:
        runs: list[tuple[int, Skyline]] = []
        for frac in caps:
            cap = round_tokens(frac * job.observed_allocation)
            try:
                runs.append((cap, executor(job, cap)))
            except InfeasibleCapError as exc:
                log.warning("job %s: cap %d skipped (%s)", job.id, cap, exc)
                skipped.append((job.id, cap))
        if not runs:
            continue
        ref_cap, ref = runs[0]
        areas = [s.area for _, s in runs]
        sim_rt, ape = [], []
        for cap, s in runs[1:]:
            r = simulate(ref, cap).runtime
            sim_rt.append(r)
            ape.append(abs(r - s.runtime) / s.runtime)
        pair_diffs = [relative_area_difference(a1, a2) for a1, a2 in itertools.combinations(areas, 2)]
        diffs.extend(pair_diffs)
        median_area = float(np.median(areas))
        outliers = sum(relative_area_difference(a, median_area) > tolerance for a in areas)
        by_cap = sorted((c, s.runtime) for c, s in runs)
        monotone = all(r1 >= r2 for (_, r1), (_, r2) in zip(by_cap, by_cap[1:]))
        results.append(JobValidation(
            job_id=job.id, caps=[c for c, _ in runs], areas=areas,
            runtimes=[s.runtime for _, s in runs], simulated_runtimes=sim_rt, ape=ape,
            outliers=int(outliers), pairs=len(pair_diffs),
            matched_pairs=int(sum(d <= tolerance for d in pair_diffs)), monotone=monotone))
    d = np.asarray(diffs)
    cdf = [float((d <= t + 1e-12).mean()) if d.size else 1.0 for t in grid]
    groups = {
        "all": _group(results),
        "non_anomalous": _group([r for r in results if r.monotone and r.outliers == 0]),
        "fully_matched": _group([r for r in results if r.matched_pairs == r.pairs]),
    }
    return SimulatorValidationReport(tolerance, grid.tolist(), cdf, results, groups, skipped)
