"""Synthetic longitudinal benchmark: data generator, AMSE, selector comparison.

The generating model has two covariates and no intercept:

    y = x1 * sin(pi t) + x2 * t + noise,   t ~ U(0,1),
    x1 = a_i cos(pi t) + b_i,  a_i ~ N(0, 4),  b_i ~ U(2, 3),
    x2 in {0, 1} (a per-subject fair coin by default),

with noise sd sigma = 0.05 * range of the replication's mean response curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .estimation import DesignStats, FitConfig, RankDeficiencyError, fit
from .model import LongitudinalDataset, SubjectRecord, auto_model_spec
from .selection import (SingularCurvatureError, _argmin_with_ties, _cv_details,
                        gbic, gic, lambda_axis, lambda_grid)

_SIGMA_GRID_POINTS = 10_000


def true_beta1(t) -> np.ndarray:
    return np.sin(np.pi * np.asarray(t, dtype=float))


def true_beta2(t) -> np.ndarray:
    return np.asarray(t, dtype=float)


@dataclass(frozen=True)
class SimDesign:
    """Benchmark design: subject count, observations per subject, noise rule."""

    n: int
    ni_range: tuple[int, int] = (8, 15)
    sigma_scale: float = 0.05
    seed: int = 0
    replications: int = 1000
    x2_per_observation: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 subjects")
        lo, hi = self.ni_range
        if not (1 <= lo <= hi <= 10_000):
            raise ValueError(f"bad per-subject observation range {self.ni_range}")
        if self.replications < 1:
            raise ValueError("need at least one replication")


@dataclass(frozen=True)
class SimulatedData:
    """One generated dataset plus the noiseless truth needed for AMSE."""

    dataset: LongitudinalDataset
    truth: tuple[np.ndarray, ...]
    sigma: float

    @property
    def truth_stacked(self) -> np.ndarray:
        return np.concatenate(self.truth)


def _replication_rng(design: SimDesign, replication: int) -> np.random.Generator:
    # Counter-style stream: the replication index keys an independent child
    # sequence of the design seed, so replications can run in any order.
    return np.random.default_rng(
        np.random.SeedSequence(entropy=design.seed, spawn_key=(replication,)))


def generate(design: SimDesign, replication: int = 0) -> SimulatedData:
    """Draw one replication; deterministic in (design.seed, replication)."""
    rng = _replication_rng(design, replication)
    n = design.n
    lo, hi = design.ni_range
    n_obs = rng.integers(lo, hi + 1, size=n)
    a = rng.normal(0.0, 2.0, size=n)
    b = rng.uniform(2.0, 3.0, size=n)
    x2_subject = None if design.x2_per_observation else rng.integers(0, 2, size=n)

    # Noise sd from the realized mean response curve (covariate means, second
    # covariate at 1) over a dense grid of the design interval.
    tg = np.linspace(0.0, 1.0, _SIGMA_GRID_POINTS)
    mean_curve = (a.mean() * np.cos(np.pi * tg) + b.mean()) * np.sin(np.pi * tg) + tg
    sigma = design.sigma_scale * float(mean_curve.max() - mean_curve.min())

    subjects = []
    truth = []
    for i in range(n):
        ni = int(n_obs[i])
        t = np.sort(rng.uniform(0.0, 1.0, size=ni))
        x1 = a[i] * np.cos(np.pi * t) + b[i]
        if design.x2_per_observation:
            x2 = rng.integers(0, 2, size=ni).astype(float)
        else:
            x2 = np.full(ni, float(x2_subject[i]))
        f = x1 * true_beta1(t) + x2 * true_beta2(t)
        y = f + rng.normal(0.0, sigma, size=ni)
        subjects.append(SubjectRecord(id=str(i + 1), times=t, responses=y,
                                      covariates=np.column_stack([x1, x2])))
        truth.append(f)
    dataset = LongitudinalDataset(subjects=tuple(subjects), p=2)
    return SimulatedData(dataset=dataset, truth=tuple(truth), sigma=sigma)


def amse(predictions, truths, n: int, ni_list, normalizer: str = "subject-scaled") -> float:
    """Averaged mean squared error between truth and predictions.

    The default "subject-scaled" normalizer divides by n * (total
    observations); "mean" divides by the total observation count only.
    """
    pred = np.asarray(predictions, dtype=float)
    tru = np.asarray(truths, dtype=float)
    if pred.size == 0:
        raise ValueError("empty input")
    if pred.shape != tru.shape:
        raise ValueError("predictions and truths disagree in shape")
    N = int(np.sum(ni_list))
    if pred.size != N:
        raise ValueError(f"expected {N} values, got {pred.size}")
    sse = float(np.sum((tru - pred) ** 2))
    if normalizer == "subject-scaled":
        return sse / (n * N)
    if normalizer == "mean":
        return sse / N
    raise ValueError(f"unknown normalizer {normalizer!r}")


@dataclass(frozen=True)
class ComparisonResult:
    """Mean AMSE and mean selected weights per criterion over replications."""

    design: SimDesign
    criteria: tuple[str, ...]
    lambda_labels: tuple[str, ...]
    mean_amse: dict = field(default_factory=dict)
    mean_lambdas: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    replications_used: int = 0

    def rows(self):
        """Table-style rows: metric name followed by one value per criterion."""
        out = [["amse"] + [self.mean_amse[c] for c in self.criteria]]
        for slot, label in enumerate(self.lambda_labels):
            out.append([label]
                       + [self.mean_lambdas[c][slot] for c in self.criteria])
        out.append(["failures"] + [self.failures[c] for c in self.criteria])
        return out


def _one_replication(design: SimDesign, replication: int, criteria, grid,
                     folds: int, order: int, num_basis, include_intercept: bool,
                     gbic_variant: str, amse_normalizer: str,
                     config: FitConfig | None):
    """Score all criteria on one replication; grid fits are shared."""
    if config is None:
        config = FitConfig(init="joint")  # warm start: grids are fit-heavy
    sim = generate(design, replication)
    data = sim.dataset
    spec = auto_model_spec(data, order=order, num_basis=num_basis,
                           t_range=(0.0, 1.0), has_intercept=include_intercept)
    stats = DesignStats(spec, data)
    points = lambda_grid(spec, grid)

    fits = []
    for lam in points:
        try:
            fits.append(fit(spec, data, lam, config, stats=stats))
        except RankDeficiencyError:
            fits.append(None)

    values = {}
    for crit in criteria:
        vals = np.full(len(points), np.inf)
        for i, (lam, m) in enumerate(zip(points, fits)):
            if crit == "cv":
                vals[i] = _cv_details(spec, data, lam, folds, config,
                                      design.seed + replication, stats)[0]
            elif m is not None:
                try:
                    vals[i] = gic(m, spec, data, stats=stats) if crit == "gic" \
                        else gbic(m, spec, data, variant=gbic_variant, stats=stats)
                except SingularCurvatureError:
                    pass
        values[crit] = vals

    truth = sim.truth_stacked
    ni_list = [s.n_obs for s in data.subjects]
    out = {}
    for crit in criteria:
        try:
            best = _argmin_with_ties(points, values[crit])
        except RuntimeError:
            out[crit] = None
            continue
        best_fit = fits[best]
        if best_fit is None:  # CV can select a point whose full fit failed
            try:
                best_fit = fit(spec, data, points[best], config, stats=stats)
            except RankDeficiencyError:
                out[crit] = None
                continue
        pred = stats.X @ np.concatenate(best_fit.gammas)
        err = amse(pred, truth, data.n, ni_list, normalizer=amse_normalizer)
        out[crit] = (err, points[best][list(spec.penalized_terms)])
    return out


def run_comparison(design: SimDesign, criteria=("gic", "gbic", "cv"),
                   grid: np.ndarray | None = None, folds: int = 5,
                   order: int = 1, num_basis: int | None = None,
                   include_intercept: bool = True, gbic_variant: str = "printed",
                   amse_normalizer: str = "subject-scaled", n_jobs: int = 1,
                   config: FitConfig | None = None) -> ComparisonResult:
    """Run the selector comparison across replications (parallel, seeded)."""
    criteria = tuple(c.lower() for c in criteria)
    for c in criteria:
        if c not in ("gic", "gbic", "cv"):
            raise ValueError(f"unknown criterion {c!r}")
    axis = lambda_axis() if grid is None else np.asarray(grid, dtype=float)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_one_replication)(design, rep, criteria, axis, folds, order,
                                  num_basis, include_intercept, gbic_variant,
                                  amse_normalizer, config)
        for rep in range(design.replications))

    probe_spec = auto_model_spec(generate(design, 0).dataset, order=order,
                                 num_basis=num_basis, t_range=(0.0, 1.0),
                                 has_intercept=include_intercept)
    start = 0 if include_intercept else 1
    labels = tuple(f"lambda_{start + j}" for j in probe_spec.penalized_terms)

    mean_amse, mean_lambdas, failures = {}, {}, {}
    for crit in criteria:
        ok = [r[crit] for r in results if r[crit] is not None]
        failures[crit] = len(results) - len(ok)
        if ok:
            mean_amse[crit] = float(np.mean([v[0] for v in ok]))
            mean_lambdas[crit] = np.mean(np.array([v[1] for v in ok]), axis=0)
        else:
            mean_amse[crit] = float("nan")
            mean_lambdas[crit] = np.full(len(labels), np.nan)
    return ComparisonResult(design=design, criteria=criteria, lambda_labels=labels,
                            mean_amse=mean_amse, mean_lambdas=mean_lambdas,
                            failures=failures, replications_used=design.replications)
