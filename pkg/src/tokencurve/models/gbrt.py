"""Gradient-boosted regression trees for point run-time prediction.

Second-order boosting over histogram-binned features. The default objective
is squared error on log(runtime); ``objective="gamma"`` switches to the
gamma deviance with a log link.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from ..errors import ConfigError, EmptyInputError, InsufficientGridError
from ..pcc import PccFit, fit_power_law
from ..workload import Job

OBJECTIVES = ("squared_log", "gamma")


@dataclass
class GBRTConfig:
    n_rounds: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    min_split_gain: float = 1e-10
    max_bins: int = 64
    subsample: float = 1.0
    objective: str = "squared_log"
    seed: int = 0

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.n_rounds < 0 or self.max_depth < 0 or self.max_bins < 2:
            raise ConfigError("n_rounds, max_depth >= 0 and max_bins >= 2 required")
        if not 0 < self.subsample <= 1:
            raise ConfigError("subsample must be in (0, 1]")


@dataclass
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf holding ``value``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_nested(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_nested(int(self.left[i])),
            "right": self.to_nested(int(self.right[i])),
        }

    @classmethod
    def from_nested(cls, root: dict) -> Tree:
        feat, thr, left, right, val = [], [], [], [], []

        def walk(node: dict) -> int:
            i = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(0.0)
            if "leaf" in node:
                val[i] = float(node["leaf"])
            else:
                feat[i] = int(node["feature"])
                thr[i] = float(node["threshold"])
                left[i] = walk(node["left"])
                right[i] = walk(node["right"])
            return i

        walk(root)
        return cls(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                   np.array(right, dtype=np.int64), np.array(val))

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


def _bin_edges(col: np.ndarray, max_bins: int) -> np.ndarray:
    uniq = np.unique(col)
    if uniq.size <= max_bins:
        return uniq[:-1]
    qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
    return np.unique(qs)


def _objective(name: str, F: np.ndarray, y: np.ndarray, logy: np.ndarray):
    if name == "squared_log":
        r = F - logy
        return 0.5 * float(np.mean(r * r)), r, np.ones_like(F)
    ye = y * np.exp(-F)
    return float(np.mean(ye + F)), 1.0 - ye, ye


class _Builder:
    def __init__(self, bins: np.ndarray, edges: list[np.ndarray], cfg: GBRTConfig):
        self.bins = bins
        self.edges = edges
        self.cfg = cfg
        self.width = max(len(e) for e in edges) + 1
        self.n_edges = np.array([len(e) for e in edges])
        self.offsets = np.arange(bins.shape[1]) * self.width
        k = np.arange(self.width)
        self.valid = k[None, :] < self.n_edges[:, None]

    def best_split(self, idx: np.ndarray, g: np.ndarray, h: np.ndarray):
        cfg = self.cfg
        p = self.bins.shape[1]
        flat = (self.bins[idx] + self.offsets).ravel()
        size = p * self.width
        Gh = np.bincount(flat, weights=np.repeat(g[idx], p), minlength=size).reshape(p, self.width)
        Hh = np.bincount(flat, weights=np.repeat(h[idx], p), minlength=size).reshape(p, self.width)
        GL, HL = np.cumsum(Gh, axis=1), np.cumsum(Hh, axis=1)
        G, H = GL[0, -1], HL[0, -1]
        GR, HR = G - GL, H - HL
        lam = cfg.reg_lambda
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
        ok = self.valid & (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight) & np.isfinite(gain)
        gain = np.where(ok, gain, -np.inf)
        best = int(np.argmax(gain))
        if not gain.flat[best] > cfg.min_split_gain:
            return None
        return divmod(best, self.width)

    def grow(self, idx: np.ndarray, g: np.ndarray, h: np.ndarray) -> Tree:
        cfg = self.cfg
        feat, thr, left, right, val = [], [], [], [], []

        def node(ids: np.ndarray, depth: int) -> int:
            i = len(feat)
            feat.append(-1), thr.append(0.0), left.append(-1), right.append(-1), val.append(0.0)
            split = self.best_split(ids, g, h) if depth < cfg.max_depth and ids.size >= 2 else None
            if split is None:
                val[i] = -cfg.learning_rate * g[ids].sum() / (h[ids].sum() + cfg.reg_lambda)
                return i
            j, k = split
            mask = self.bins[ids, j] <= k
            feat[i] = j
            thr[i] = float(self.edges[j][k])
            left[i] = node(ids[mask], depth + 1)
            right[i] = node(ids[~mask], depth + 1)
            return i

        node(idx, 0)
        return Tree(np.array(feat, dtype=np.int64), np.array(thr), np.array(left, dtype=np.int64),
                    np.array(right, dtype=np.int64), np.array(val))


@dataclass
class GBRTModel:
    trees: list[Tree]
    base_score: float
    config: GBRTConfig
    train_loss: list[float] = field(default_factory=list)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        F = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            F += t.predict(X)
        return F

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Predicted run-time (seconds)."""
        return np.exp(self.predict_raw(X))

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "config": asdict(self.config),
            "trees": [t.to_nested() for t in self.trees],
            "train_loss": list(self.train_loss),
        }

    @classmethod
    def from_dict(cls, d: dict) -> GBRTModel:
        return cls(
            trees=[Tree.from_nested(t) for t in d["trees"]],
            base_score=float(d["base_score"]),
            config=GBRTConfig(**d["config"]),
            train_loss=list(d.get("train_loss", [])),
        )


def train_gbrt(X: np.ndarray, y: np.ndarray, config: GBRTConfig | None = None) -> GBRTModel:
    """Boost trees on rows ``X`` against positive run-times ``y``."""
    cfg = config or GBRTConfig()
    cfg.validate()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("train_gbrt needs a non-empty dataset")
    if y.shape != (X.shape[0],) or np.any(y <= 0):
        raise ConfigError("targets must be positive and aligned with rows")
    logy = np.log(y)
    base = float(np.mean(logy)) if cfg.objective == "squared_log" else math.log(float(np.mean(y)))
    edges = [_bin_edges(X[:, j], cfg.max_bins) for j in range(X.shape[1])]
    bins = np.column_stack([np.searchsorted(e, X[:, j], side="left") for j, e in enumerate(edges)])
    builder = _Builder(bins, edges, cfg)
    rng = np.random.default_rng(cfg.seed)
    F = np.full(X.shape[0], base)
    trees, losses = [], []
    loss, g, h = _objective(cfg.objective, F, y, logy)
    losses.append(loss)
    all_idx = np.arange(X.shape[0])
    for _ in range(cfg.n_rounds):
        if cfg.subsample < 1.0:
            n = max(1, int(round(cfg.subsample * X.shape[0])))
            idx = np.sort(rng.choice(X.shape[0], size=n, replace=False))
        else:
            idx = all_idx
        tree = builder.grow(idx, g, h)
        trees.append(tree)
        F += tree.predict(X)
        loss, g, h = _objective(cfg.objective, F, y, logy)
        losses.append(loss)
    return GBRTModel(trees, base, cfg, losses)


class RuntimeModel(Protocol):
    def predict_runtime(self, job: Job, allocations: Sequence[float]) -> np.ndarray: ...


def allocation_grid(observed_allocation: float, lo: float = 0.6, hi: float = 1.4, step: float = 0.05) -> np.ndarray:
    """Allocations spanning lo..hi of the observed value, floored at one token."""
    n = int(round((hi - lo) / step)) + 1
    fracs = np.round(lo + step * np.arange(n), 10)
    return np.maximum(observed_allocation * fracs, 1.0)


def _grid_predictions(model: RuntimeModel, job: Job, grid: Sequence[float] | None):
    grid = allocation_grid(job.observed_allocation) if grid is None else np.asarray(grid, dtype=float)
    return grid, np.asarray(model.predict_runtime(job, grid), dtype=float)


def moving_average(values: np.ndarray, window: int = 3) -> np.ndarray:
    """Centered moving average; the window shrinks at both ends."""
    n = values.size
    half = window // 2
    c = np.concatenate(([0.0], np.cumsum(values)))
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) + half + 1, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)


def gbrt_curve_ss(model: RuntimeModel, job: Job, grid: Sequence[float] | None = None,
                  window: int = 3) -> list[tuple[float, float]]:
    grid, pred = _grid_predictions(model, job, grid)
    if grid.size < window:
        raise InsufficientGridError(f"grid of {grid.size} points is shorter than the window {window}")
    return list(zip(grid.tolist(), moving_average(pred, window).tolist()))


def gbrt_curve_pl(model: RuntimeModel, job: Job, grid: Sequence[float] | None = None) -> PccFit:
    """Power law fitted through grid predictions; the slope is left unconstrained."""
    grid, pred = _grid_predictions(model, job, grid)
    if grid.size < 2:
        raise InsufficientGridError("power-law fit needs at least 2 grid points")
    return fit_power_law(zip(grid.tolist(), pred.tolist()))
