"""Power-law performance curves ``runtime = b * tokens**a``.

Fitting happens in log-log space, where the curve is a straight line with
slope ``a`` and intercept ``log b``. Curves with ``a <= 0`` never get slower
as tokens are added, which is what recommendation relies on.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EmptyInputError, InsufficientDataError, InvalidCurveError

__all__ = [
    "PccParams",
    "PccFit",
    "fit_power_law",
    "predict_runtime",
    "optimal_tokens",
    "min_tokens_within_loss",
    "savings_cdf",
    "curve_csv",
    "plot_curves_svg",
]


@dataclass(frozen=True)
class PccParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.b > 0 and math.isfinite(self.b)):
            raise DomainError(f"scale b must be finite and > 0, got {self.b}")
        if not math.isfinite(self.a):
            raise DomainError(f"exponent a must be finite, got {self.a}")

    @property
    def non_increasing(self) -> bool:
        return self.a <= 0

    def clamped(self) -> PccParams:
        """Same curve with a positive slope flattened to 0, for recommendation."""
        return self if self.a <= 0 else PccParams(0.0, self.b)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b}


@dataclass(frozen=True)
class PccFit:
    params: PccParams
    n_points: int
    residual: float


def fit_power_law(points: Iterable[tuple[float, float]]) -> PccFit:
    """Ordinary least squares of log(runtime) on log(allocation)."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != 2:
        raise InsufficientDataError("need (allocation, runtime) pairs")
    alloc, rt = pts[:, 0], pts[:, 1]
    if np.any(~np.isfinite(pts)):
        raise DomainError("points must be finite")
    if np.any(alloc < 1):
        raise DomainError("allocations must be >= 1")
    if np.any(rt <= 0):
        raise DomainError("runtimes must be > 0")
    if np.unique(alloc).size < 2:
        raise InsufficientDataError("need at least 2 distinct allocations")
    x, y = np.log(alloc), np.log(rt)
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    if intercept > 709.0:
        raise DomainError("fitted curve scale overflows; points are too steep to describe a run-time curve")
    return PccFit(
        params=PccParams(float(slope), float(math.exp(intercept))),
        n_points=int(pts.shape[0]),
        residual=float(np.sqrt(np.mean(resid**2))),
    )


def predict_runtime(p: PccParams, allocation: float) -> float:
    if allocation < 1:
        raise DomainError(f"allocation must be >= 1, got {allocation}")
    return p.b * allocation**p.a


def _require_valid(p: PccParams) -> None:
    if p.a > 0:
        raise InvalidCurveError(f"curve is increasing (a={p.a}); clamp before recommending")


def optimal_tokens(p: PccParams, threshold: float, max_tokens: int) -> int:
    """Smallest A where the relative gain of one more token, |a|/A, is <= threshold.

    Closed form ceil(|a|/threshold), nudged so it agrees with the float
    predicate exactly, then clamped to [1, max_tokens].
    """
    _require_valid(p)
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1)")
    if max_tokens < 1:
        raise DomainError("max_tokens must be >= 1")
    mag = abs(p.a)
    if mag == 0:
        return 1

    def ok(A: int) -> bool:
        return mag / A <= threshold

    cand = max(1, math.ceil(mag / threshold))
    while cand > 1 and ok(cand - 1):
        cand -= 1
    while not ok(cand):
        cand += 1
    return int(min(max(cand, 1), max_tokens))


def min_tokens_within_loss(p: PccParams, reference_allocation: int, loss: float) -> int:
    """Smallest integer A <= reference whose predicted runtime is within (1+loss) of the reference."""
    _require_valid(p)
    if loss < 0:
        raise DomainError("loss must be >= 0")
    if reference_allocation < 1:
        raise DomainError("reference_allocation must be >= 1")
    ref = int(reference_allocation)
    budget = (1 + loss) * predict_runtime(p, ref)
    if p.a == 0:
        return 1

    def ok(A: int) -> bool:
        return predict_runtime(p, A) <= budget

    cand = math.ceil(ref * (1 + loss) ** (1 / p.a)) if math.isfinite((1 + loss) ** (1 / p.a)) else 1
    cand = min(max(cand, 1), ref)
    while cand > 1 and ok(cand - 1):
        cand -= 1
    while cand < ref and not ok(cand):
        cand += 1
    return cand


def savings_cdf(workload: Sequence[tuple[PccParams, int]], loss: float) -> list[tuple[float, float]]:
    """Empirical CDF of token reductions achievable within the given runtime loss."""
    if len(workload) == 0:
        raise EmptyInputError("savings_cdf needs at least one job")
    if loss < 0:
        raise DomainError("loss must be >= 0")
    reductions = np.array(
        [1.0 - min_tokens_within_loss(p, ref, loss) / ref for p, ref in workload]
    )
    values, counts = np.unique(reductions, return_counts=True)
    cum = np.cumsum(counts) / reductions.size
    return [(float(v), float(c)) for v, c in zip(values, cum)]


def curve_csv(p: PccParams, allocations: Iterable[float], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["allocation", "predicted_runtime"])
    for A in allocations:
        w.writerow([A, repr(predict_runtime(p, A))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def plot_curves_svg(
    series: dict[str, Sequence[tuple[float, float]]],
    path: str | Path,
    *,
    xlabel: str = "tokens",
    ylabel: str = "runtime (s)",
    title: str | None = None,
    step: bool = False,
) -> None:
    """Static SVG line chart; output is byte-stable for identical input."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "tokencurve", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, pts in series.items():
            xs, ys = zip(*pts) if pts else ((), ())
            if step:
                ax.step(xs, ys, where="post", label=label)
            else:
                ax.plot(xs, ys, marker="o", markersize=3, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
