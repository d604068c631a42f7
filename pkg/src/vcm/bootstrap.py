"""Subject-level bootstrap for pointwise confidence bands of coefficient curves.

Whole subjects are resampled with replacement (within-subject dependence is
never split), the model is refit at fixed regularization weights, and bands
are empirical percentiles of the refitted coefficient curves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import basis_matrix
from .estimation import DesignStats, FitConfig, RankDeficiencyError, fit
from .model import LongitudinalDataset, ModelSpec


@dataclass(frozen=True)
class BandResult:
    """Pointwise bootstrap bands: per term, a mean curve and percentile bounds."""

    grid: np.ndarray
    means: np.ndarray   # (num_terms, len(grid))
    lower: np.ndarray
    upper: np.ndarray
    B: int
    level: float

    @property
    def num_terms(self) -> int:
        return self.means.shape[0]


def bootstrap_bands(spec: ModelSpec, data: LongitudinalDataset, lambdas, B: int,
                    grid, seed: int, config: FitConfig | None = None,
                    *, level: float = 0.95, max_attempt_factor: int = 10) -> BandResult:
    """Percentile bands from B subject-level resamples at fixed weights.

    Resamples whose refit fails or does not converge are redrawn, up to
    ``max_attempt_factor * B`` draws in total.
    """
    if B < 2:
        raise ValueError("need at least 2 bootstrap samples")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    grid = np.asarray(grid, dtype=float)
    stats = DesignStats(spec, data)
    rng = np.random.default_rng(seed)

    eval_mats = [basis_matrix(b, grid) for b in spec.bases]
    curves = np.empty((B, spec.num_terms, grid.size))
    done = 0
    attempts = 0
    while done < B:
        if attempts >= max_attempt_factor * B:
            raise RuntimeError(
                f"{attempts} resamples produced only {done} usable refits")
        attempts += 1
        idx = rng.integers(0, data.n, size=data.n)
        weights = np.bincount(idx, minlength=data.n).astype(float)
        try:
            m = fit(spec, data, lambdas, config, stats=stats, weights=weights)
        except RankDeficiencyError:
            continue
        if not m.converged:
            continue
        for j in range(spec.num_terms):
            curves[done, j] = eval_mats[j] @ m.gammas[j]
        done += 1

    alpha = 100.0 * (1.0 - level) / 2.0
    lower = np.percentile(curves, alpha, axis=0)
    upper = np.percentile(curves, 100.0 - alpha, axis=0)
    return BandResult(grid=grid, means=curves.mean(axis=0), lower=lower,
                      upper=upper, B=B, level=level)
