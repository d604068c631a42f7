"""Regularization-weight selection: information criteria and cross-validation.

The information criteria need the curvature matrices of the penalized
log-likelihood. Both are assembled from exact per-subject derivatives of the
Gaussian objective; the parameter vector stacks all coefficient blocks
followed by the noise variance, so d = sum_j M_j + 1.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .estimation import DesignStats, FitConfig, RankDeficiencyError, fit
from .model import (FittedModel, LongitudinalDataset, ModelSpec, expand_lambdas,
                    log_likelihood, penalty_quadratic)

_RANK_EIG_TOL = 1e-10


class SingularCurvatureError(RuntimeError):
    """Curvature matrix is numerically singular at a grid point."""

    def __init__(self, lambdas, detail: str = ""):
        lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
        msg = f"singular curvature matrix at lambda={lam.tolist()}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class CurvatureMatrices:
    """Negative mean penalized Hessian (R) and mean mixed score outer product (Q)."""

    R: np.ndarray
    Q: np.ndarray
    d: int

    def __post_init__(self):
        if self.R.shape != (self.d, self.d) or self.Q.shape != (self.d, self.d):
            raise ValueError("curvature matrices do not match the parameter dimension")
        if not np.allclose(self.R, self.R.T, atol=1e-8 * (1 + np.abs(self.R).max())):
            raise ValueError("R must be symmetric")


def _penalty_gradient(spec: ModelSpec, stats: DesignStats, model: FittedModel) -> np.ndarray:
    """Stacked gradient of (1/2) sum_j lambda_j gamma_j' Omega_j gamma_j."""
    out = np.zeros(stats.dim)
    for j in spec.penalized_terms:
        if model.lambdas[j] > 0:
            out[stats.slices[j]] = model.lambdas[j] * (spec.penalty(j) @ model.gammas[j])
    return out


def compute_R(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
              *, stats: DesignStats | None = None) -> np.ndarray:
    """Minus the mean per-subject Hessian of the penalized log-likelihood."""
    stats = stats if stats is not None else DesignStats(spec, data)
    if not model.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    G, h, _, N, n, _ = stats.totals(None)
    gamma = np.concatenate(model.gammas)
    s2 = model.sigma2
    D = stats.dim
    R = np.zeros((D + 1, D + 1))
    R[:D, :D] = G / (n * s2)
    for j in spec.penalized_terms:
        if model.lambdas[j] > 0:
            sl = stats.slices[j]
            R[sl, sl] += model.lambdas[j] * spec.penalty(j)
    cross = (h - G @ gamma) / (n * s2 * s2)
    R[:D, D] = cross
    R[D, :D] = cross
    q_tot = float(stats.subject_quadratics(gamma).sum())
    R[D, D] = q_tot / (n * s2 ** 3) - N / (2.0 * n * s2 * s2)
    return R


def _score_rows(model: FittedModel, spec: ModelSpec, stats: DesignStats):
    """Per-subject scores of the plain and the penalized log-likelihood.

    Returns (U, U_pen): n x (d) arrays whose last column is the variance score.
    """
    gamma = np.concatenate(model.gammas)
    s2 = model.sigma2
    q = stats.subject_quadratics(gamma)
    grad_gamma = (stats.moments - stats.grams @ gamma) / s2
    grad_s2 = -stats.n_obs / (2.0 * s2) + q / (2.0 * s2 * s2)
    U = np.column_stack([grad_gamma, grad_s2])
    U_pen = U.copy()
    U_pen[:, :stats.dim] -= _penalty_gradient(spec, stats, model)
    return U, U_pen


def compute_Q(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
              *, stats: DesignStats | None = None) -> np.ndarray:
    """Mean outer product of penalized and plain per-subject scores, symmetrized."""
    stats = stats if stats is not None else DesignStats(spec, data)
    if not model.sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    U, U_pen = _score_rows(model, spec, stats)
    Q = U_pen.T @ U / data.n
    return 0.5 * (Q + Q.T)


def compute_curvature(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
                      *, stats: DesignStats | None = None) -> CurvatureMatrices:
    stats = stats if stats is not None else DesignStats(spec, data)
    return CurvatureMatrices(R=compute_R(model, spec, data, stats=stats),
                             Q=compute_Q(model, spec, data, stats=stats),
                             d=stats.dim + 1)


def _loglik(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
            stats: DesignStats | None) -> float:
    if stats is None:
        return log_likelihood(model, spec, data)
    gamma = np.concatenate(model.gammas)
    _, _, _, N, _, logdet = stats.totals(None)
    q_tot = float(stats.subject_quadratics(gamma).sum())
    return float(-0.5 * N * np.log(2.0 * np.pi)
                 - 0.5 * (N * np.log(model.sigma2) + logdet)
                 - 0.5 * q_tot / model.sigma2)


def gic(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
        *, stats: DesignStats | None = None) -> float:
    """Information criterion -2*loglik + 2*tr(R^{-1} Q)."""
    stats = stats if stats is not None else DesignStats(spec, data)
    R = compute_R(model, spec, data, stats=stats)
    Q = compute_Q(model, spec, data, stats=stats)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            solved = scipy.linalg.solve(R, Q, assume_a="sym")
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise SingularCurvatureError(model.lambdas, str(exc)) from exc
    trace = float(np.trace(solved))
    if not np.isfinite(trace):
        raise SingularCurvatureError(model.lambdas, "non-finite trace")
    return -2.0 * _loglik(model, spec, data, stats) + 2.0 * trace


def _penalty_spectrum(spec: ModelSpec, j: int):
    """(rank, log pseudo-determinant) of the penalty matrix for term j."""
    eigs = scipy.linalg.eigvalsh(spec.penalty(j))
    cutoff = _RANK_EIG_TOL * max(eigs.max(), 1e-300)
    nonzero = eigs[eigs > cutoff]
    return nonzero.size, float(np.sum(np.log(nonzero))) if nonzero.size else 0.0


def _log_det_R(model: FittedModel, R: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(R)
    if sign <= 0 or not np.isfinite(logdet):
        raise SingularCurvatureError(model.lambdas, "non-positive-definite R")
    return float(logdet)


def gbic(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset,
         *, variant: str = "printed", stats: DesignStats | None = None) -> float:
    """Bayesian criterion from a Laplace approximation under Gaussian-type priors.

    "printed" drops the rank_j * log(lambda_j) contribution of the prior
    normalization; "rederived" keeps it, making the value agree exactly with
    the assembled Laplace marginal (requires positive weights on penalized
    terms).
    """
    if variant not in ("printed", "rederived"):
        raise ValueError(f"unknown gbic variant {variant!r}")
    stats = stats if stats is not None else DesignStats(spec, data)
    n = data.n
    R = compute_R(model, spec, data, stats=stats)
    value = -2.0 * _loglik(model, spec, data, stats)
    value += n * penalty_quadratic(model, spec)
    null_total = 0
    for j in spec.penalized_terms:
        rank, logdet = _penalty_spectrum(spec, j)
        null_total += spec.bases[j].M - rank
        value -= logdet
        if variant == "rederived":
            if not model.lambdas[j] > 0:
                raise ValueError(
                    "rederived variant needs positive weights on penalized terms")
            value -= rank * np.log(model.lambdas[j])
    value += (null_total + 1) * (np.log(n) - np.log(2.0 * np.pi))
    value += _log_det_R(model, R)
    return float(value)


def laplace_marginal_neg2log(model: FittedModel, spec: ModelSpec,
                             data: LongitudinalDataset, *, include_sigma2: bool = True,
                             stats: DesignStats | None = None) -> float:
    """-2 log of the Laplace-approximated marginal likelihood.

    Assembled directly from the fitted likelihood, the prior density at the
    estimate and the curvature term; ``include_sigma2=False`` treats the
    variance as known and drops its parameter slot.
    """
    stats = stats if stats is not None else DesignStats(spec, data)
    n = data.n
    R = compute_R(model, spec, data, stats=stats)
    if not include_sigma2:
        R = R[:stats.dim, :stats.dim]
    d = stats.dim + (1 if include_sigma2 else 0)
    neg2_prior = 0.0
    for j in spec.penalized_terms:
        lam = model.lambdas[j]
        if not lam > 0:
            raise ValueError("prior density needs positive weights on penalized terms")
        rank, logdet = _penalty_spectrum(spec, j)
        g = model.gammas[j]
        neg2_prior += (rank * np.log(2.0 * np.pi) - rank * np.log(n * lam) - logdet
                       + n * lam * float(g @ spec.penalty(j) @ g))
    value = -2.0 * _loglik(model, spec, data, stats) + neg2_prior
    value += d * (np.log(n) - np.log(2.0 * np.pi))
    value += _log_det_R(model, R)
    return float(value)


def _cv_details(spec: ModelSpec, data: LongitudinalDataset, lambdas, folds: int,
                config: FitConfig | None, seed: int,
                stats: DesignStats | None = None) -> tuple[float, bool]:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > data.n:
        raise ValueError(f"cannot split {data.n} subjects into {folds} folds")
    stats = stats if stats is not None else DesignStats(spec, data)
    perm = np.random.default_rng(seed).permutation(data.n)
    sq_total = 0.0
    count = 0
    all_converged = True
    for fold in np.array_split(perm, folds):
        w = np.ones(data.n)
        w[fold] = 0.0
        try:
            m = fit(spec, data, lambdas, config, stats=stats, weights=w)
        except RankDeficiencyError:
            return np.inf, False
        all_converged &= m.converged
        gamma = np.concatenate(m.gammas)
        for i in fold:
            rows = stats.subject_rows(int(i))
            resid = stats.y[rows] - stats.X[rows] @ gamma
            sq_total += float(resid @ resid)
            count += resid.size
    return sq_total / count, all_converged


def cv_score(spec: ModelSpec, data: LongitudinalDataset, lambdas, folds: int,
             config: FitConfig | None = None, seed: int = 0,
             *, stats: DesignStats | None = None) -> float:
    """Mean held-out squared prediction error over a seeded subject partition."""
    return _cv_details(spec, data, lambdas, folds, config, seed, stats)[0]


def lambda_axis(lo: float = 1e-6, hi: float = 1e2, num: int = 9) -> np.ndarray:
    """Log-spaced candidate values shared by every penalized term."""
    if num < 1 or lo <= 0 or hi < lo:
        raise ValueError(f"bad axis specification ({lo}, {hi}, {num})")
    return np.logspace(np.log10(lo), np.log10(hi), num)


def lambda_grid(spec: ModelSpec, axis: np.ndarray | None = None) -> list[np.ndarray]:
    """Cartesian product of the axis over all penalized terms (full vectors)."""
    axis = lambda_axis() if axis is None else np.asarray(axis, dtype=float)
    pen = spec.penalized_terms
    grid = []
    for combo in itertools.product(axis, repeat=len(pen)):
        full = np.zeros(spec.num_terms)
        full[list(pen)] = combo
        grid.append(full)
    return grid


@dataclass(frozen=True)
class CriterionReport:
    """Criterion values over candidate weight vectors with the minimizer."""

    grid: tuple[np.ndarray, ...]
    values: np.ndarray
    best_index: int
    criterion: str
    per_point_fits: tuple[bool, ...] | None = None

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValueError("empty candidate grid")
        if not np.isfinite(self.values[self.best_index]):
            raise ValueError("criterion value at the selected point is not finite")

    @property
    def best_lambdas(self) -> np.ndarray:
        return self.grid[self.best_index]


def _lex_greater(a: np.ndarray, b: np.ndarray) -> bool:
    for x, y in zip(a, b):
        if x != y:
            return x > y
    return False


def _argmin_with_ties(grid, values) -> int:
    """Smallest value; exact ties go to the lexicographically larger weights
    (the later entry when tied points are identical)."""
    best = -1
    for i, v in enumerate(values):
        if not np.isfinite(v):
            continue
        if best < 0 or v < values[best] or (v == values[best]
                                            and not _lex_greater(grid[best], grid[i])):
            best = i
    if best < 0:
        raise RuntimeError("criterion failed at every grid point")
    return best


def _score_point(spec, data, stats, lam_full, criterion, config, seed, folds,
                 gbic_variant) -> tuple[float, bool]:
    if criterion == "cv":
        return _cv_details(spec, data, lam_full, folds, config, seed, stats)
    try:
        m = fit(spec, data, lam_full, config, stats=stats)
        if criterion == "gic":
            value = gic(m, spec, data, stats=stats)
        elif criterion == "gbic":
            value = gbic(m, spec, data, variant=gbic_variant, stats=stats)
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
        return value, m.converged
    except (RankDeficiencyError, SingularCurvatureError):
        return np.inf, False


def select(spec: ModelSpec, data: LongitudinalDataset, grid, criterion: str,
           config: FitConfig | None = None, seed: int = 0, *, folds: int = 5,
           gbic_variant: str = "printed") -> CriterionReport:
    """Score every candidate weight vector and return the minimizer.

    Deterministic for a fixed seed; candidates that fail to fit or evaluate
    score +inf and cannot be selected.
    """
    criterion = criterion.lower()
    if criterion not in ("gic", "gbic", "cv"):
        raise ValueError(f"unknown criterion {criterion!r}")
    grid = [expand_lambdas(spec, g) for g in grid]
    if not grid:
        raise ValueError("empty candidate grid")
    stats = DesignStats(spec, data)
    values = np.empty(len(grid))
    flags = []
    for i, lam_full in enumerate(grid):
        values[i], ok = _score_point(spec, data, stats, lam_full, criterion,
                                     config, seed, folds, gbic_variant)
        flags.append(ok)
    best = _argmin_with_ties(grid, values)
    return CriterionReport(grid=tuple(grid), values=values, best_index=best,
                           criterion=criterion, per_point_fits=tuple(flags))


def select_coordinate_descent(spec: ModelSpec, data: LongitudinalDataset,
                              axis: np.ndarray, criterion: str,
                              config: FitConfig | None = None, seed: int = 0,
                              *, folds: int = 5, gbic_variant: str = "printed",
                              max_cycles: int = 10) -> CriterionReport:
    """Cyclic one-axis-at-a-time search; used when the product grid is too big.

    Starts every penalized term at the middle axis value and sweeps terms until
    no coordinate moves. The report lists the points in evaluation order.
    """
    criterion = criterion.lower()
    axis = np.asarray(axis, dtype=float)
    pen = spec.penalized_terms
    stats = DesignStats(spec, data)
    current = np.zeros(spec.num_terms)
    current[list(pen)] = axis[len(axis) // 2]

    order: list[np.ndarray] = []
    cache: dict[tuple, tuple[float, bool]] = {}

    def scored(lam_full: np.ndarray) -> float:
        key = tuple(lam_full.tolist())
        if key not in cache:
            cache[key] = _score_point(spec, data, stats, lam_full, criterion,
                                      config, seed, folds, gbic_variant)
            order.append(lam_full.copy())
        return cache[key][0]

    for _ in range(max_cycles):
        moved = False
        for j in pen:
            candidates = []
            for v in axis:
                lam = current.copy()
                lam[j] = v
                candidates.append(lam)
            cand_values = [scored(lam) for lam in candidates]
            best = _argmin_with_ties(candidates, cand_values)
            if candidates[best][j] != current[j]:
                current = candidates[best]
                moved = True
        if not moved:
            break

    values = np.array([cache[tuple(g.tolist())][0] for g in order])
    flags = tuple(cache[tuple(g.tolist())][1] for g in order)
    best = _argmin_with_ties(order, values)
    return CriterionReport(grid=tuple(order), values=values, best_index=best,
                           criterion=criterion, per_point_fits=flags)
