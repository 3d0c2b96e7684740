"""Curve-parameter and run-time losses over raw network outputs ``(u, v)``.

LF1  mean absolute error of the scaled curve parameters (averaged over a, b)
LF2  LF1 + w_runtime * mean |R_hat - R| / R at the observed allocation
LF3  LF2 + w_distill * mean |R_hat - R_gbrt| / R_gbrt
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError
from .data import ParamScales

LOSS_KINDS = ("lf1", "lf2", "lf3")


@dataclass
class LossTargets:
    a_scaled: np.ndarray
    b_scaled: np.ndarray
    log_alloc: np.ndarray
    runtime: np.ndarray
    gbrt_runtime: np.ndarray | None = None


@dataclass
class LossParts:
    total: float
    param_mae: float
    runtime_ape: float
    distill_ape: float


def predicted_log_runtime(out: np.ndarray, log_alloc: np.ndarray, scales: ParamScales) -> np.ndarray:
    u, v = out[:, 0], out[:, 1]
    return scales.sigma_logb * v - scales.sigma_a * np.exp(u) * log_alloc


def loss_and_grad(out: np.ndarray, t: LossTargets, scales: ParamScales, kind: str,
                  w_runtime: float = 0.5, w_distill: float = 0.5) -> tuple[LossParts, np.ndarray]:
    """Loss value and its gradient with respect to ``out`` (shape G x 2)."""
    kind = kind.lower()
    if kind not in LOSS_KINDS:
        raise ConfigError(f"loss kind must be one of {LOSS_KINDS}")
    if np.any(t.runtime <= 0):
        raise DomainError("observed runtimes must be > 0")
    n = out.shape[0]
    u, v = out[:, 0], out[:, 1]
    eu = np.exp(u)
    ea = -eu - t.a_scaled
    eb = v - t.b_scaled
    param_mae = float(np.mean(np.abs(ea) + np.abs(eb)) / 2)
    du = np.sign(ea) * (-eu) / (2 * n)
    dv = np.sign(eb) / (2 * n)
    total = param_mae

    runtime_ape = distill_ape = 0.0
    log_r_hat = predicted_log_runtime(out, t.log_alloc, scales)
    r_hat = np.exp(log_r_hat)
    dlog_r_hat = np.zeros(n)
    rel = r_hat / t.runtime - 1.0
    runtime_ape = float(np.mean(np.abs(rel)))
    if kind in ("lf2", "lf3"):
        total += w_runtime * runtime_ape
        dlog_r_hat += w_runtime * np.sign(rel) * (r_hat / t.runtime) / n
    if kind == "lf3":
        if t.gbrt_runtime is None:
            raise ConfigError("lf3 needs tree-model run-time predictions for every example")
        if np.any(t.gbrt_runtime <= 0):
            raise DomainError("tree-model runtimes must be > 0")
        rel3 = r_hat / t.gbrt_runtime - 1.0
        distill_ape = float(np.mean(np.abs(rel3)))
        total += w_distill * distill_ape
        dlog_r_hat += w_distill * np.sign(rel3) * (r_hat / t.gbrt_runtime) / n
    dv = dv + dlog_r_hat * scales.sigma_logb
    du = du + dlog_r_hat * (-scales.sigma_a * eu * t.log_alloc)
    return LossParts(total, param_mae, runtime_ape, distill_ape), np.column_stack([du, dv])
