"""Central finite-difference checks for hand-derived gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckResult:
    block: str
    coords: int
    max_rel_error: float


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(loss_fn, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                    rng: np.random.Generator, coords: int = 200, h: float = 1e-4) -> list[GradCheckResult]:
    """Compare ``grads`` against central differences of ``loss_fn(params)``.

    Each block is probed at ``coords`` random coordinates (every coordinate
    when the block is smaller). ``loss_fn`` must be deterministic.
    """
    results = []
    for name, value in params.items():
        flat_size = value.size
        if flat_size <= coords:
            idx = np.arange(flat_size)
        else:
            idx = rng.choice(flat_size, size=coords, replace=False)
        g = grads.get(name, np.zeros_like(value)).ravel()
        worst = 0.0
        for j in idx:
            bumped = dict(params)
            arr = value.copy().ravel()
            arr[j] = value.flat[j] + h
            bumped[name] = arr.reshape(value.shape)
            f_plus = loss_fn(bumped)
            arr[j] = value.flat[j] - h
            bumped[name] = arr.reshape(value.shape)
            f_minus = loss_fn(bumped)
            numeric = (f_plus - f_minus) / (2 * h)
            worst = max(worst, relative_error(g[j], numeric))
        results.append(GradCheckResult(name, len(idx), worst))
    return results
