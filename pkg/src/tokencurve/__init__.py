"""Token allocation vs run-time modeling for DAG-structured analytical jobs."""
from .pcc import PccFit, PccParams, fit_power_law, min_tokens_within_loss, optimal_tokens, predict_runtime
from .skyline import Skyline, area, runtime, simulate, split_sections

__version__ = "0.1.0"

__all__ = [
    "PccFit",
    "PccParams",
    "Skyline",
    "area",
    "fit_power_law",
    "min_tokens_within_loss",
    "optimal_tokens",
    "predict_runtime",
    "runtime",
    "simulate",
    "split_sections",
]
