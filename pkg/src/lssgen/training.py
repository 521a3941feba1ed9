"""Shared pieces of the small training loops."""
from __future__ import annotations

import math

import numpy as np

from .tensorkit.rng import Rng


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite."""


def check_loss(loss: float, where: str, step: int) -> float:
    if not math.isfinite(loss):
        raise TrainingDiverged(f"{where}: non-finite loss {loss} at step {step}")
    return loss


def minibatches(n: int, batch_size: int, rng: Rng):
    """Yield index arrays covering a fresh permutation of ``range(n)``."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def mse_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all entries and its gradient."""
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
