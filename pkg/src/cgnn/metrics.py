"""Evaluation metrics: counterfactual-outcome MSE and effect-estimation PEHE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricResult:
    name: str
    value: float
    n: int
    kind: str

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"{self.name} must be >= 0, got {self.value}")


def _pair(predicted, true) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(true, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"inputs must be equal-length vectors, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    return p, t


def pehe(predicted_deltas, true_deltas, kind: str = "effect") -> MetricResult:
    """Root-mean-square error of per-node effect contrasts."""
    p, t = _pair(predicted_deltas, true_deltas)
    value = float(np.sqrt(np.mean((p - t) ** 2)))
    return MetricResult(name="pehe", value=value, n=p.size, kind=kind)


def mse(predicted, true, kind: str = "outcome") -> MetricResult:
    """Mean squared error of predictions."""
    p, t = _pair(predicted, true)
    value = float(np.mean((p - t) ** 2))
    return MetricResult(name="mse", value=value, n=p.size, kind=kind)
