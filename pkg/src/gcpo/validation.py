"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np


class NotFittedError(RuntimeError):
    """Estimator used before fit()."""


def check_observation(obs, obs_dim, name="obs"):
    """Coerce to float64, require finite entries and trailing dim obs_dim.

    Accepts a single observation (obs_dim,) or a batch (B, obs_dim); returns
    (array, batched flag).
    """
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 1:
        batched = False
    elif arr.ndim == 2:
        batched = True
    else:
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if arr.shape[-1] != obs_dim:
        raise ValueError(f"{name} has trailing dim {arr.shape[-1]}, expected {obs_dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr, batched


def check_in_range(value, lo, hi, name):
    if not (lo <= value <= hi):
        raise ValueError(f"{name} must be in [{lo}, {hi}], got {value}")
    return value
