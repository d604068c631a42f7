"""Data containers and the Gaussian likelihood for time-varying-coefficient models.

The mean model for subject i at time t is

    y = sum_j x_j(t) * beta_j(t) + noise,      beta_j(t) = gamma_j' phi_j(t),

where term j = 0 is an optional intercept (x_0 = 1) and the remaining terms
correspond to covariate columns. Per-subject noise is N(0, sigma2 * S_i) with
known correlation matrices S_i (identity by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import BSplineBasis, basis_matrix

_PSD_EIG_TOL = -1e-10


def _locked(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class SubjectRecord:
    """One subject's repeated measurements: times, responses, covariates (n_i x p)."""

    id: str
    times: np.ndarray
    responses: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        times = _locked(np.atleast_1d(self.times))
        responses = _locked(np.atleast_1d(self.responses))
        covariates = np.asarray(self.covariates, dtype=float)
        if covariates.ndim == 1:
            covariates = covariates.reshape(len(times), -1)
        covariates = _locked(covariates)
        if times.ndim != 1 or times.size == 0:
            raise ValueError(f"subject {self.id}: needs at least one observation")
        if responses.shape != times.shape:
            raise ValueError(f"subject {self.id}: times and responses disagree")
        if covariates.shape[0] != times.size:
            raise ValueError(f"subject {self.id}: covariate rows != observations")
        for name, arr in (("times", times), ("responses", responses),
                          ("covariates", covariates)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"subject {self.id}: non-finite {name}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "covariates", covariates)

    @property
    def n_obs(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class LongitudinalDataset:
    """n subjects, each with repeated (time, response, covariates) observations."""

    subjects: tuple[SubjectRecord, ...]
    p: int

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise ValueError("dataset has no subjects")
        for s in subjects:
            if s.covariates.shape[1] != self.p:
                raise ValueError(
                    f"subject {s.id}: {s.covariates.shape[1]} covariates, expected {self.p}")
        object.__setattr__(self, "subjects", subjects)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def total_obs(self) -> int:
        return sum(s.n_obs for s in self.subjects)

    def time_range(self) -> tuple[float, float]:
        lo = min(s.times.min() for s in self.subjects)
        hi = max(s.times.max() for s in self.subjects)
        return float(lo), float(hi)


def second_difference_penalty(M: int) -> np.ndarray:
    """Roughness penalty D2'D2 built from second differences; rank M-2."""
    if M < 3:
        raise ValueError(f"second-difference penalty needs M >= 3, got {M}")
    d2 = np.diff(np.eye(M), n=2, axis=0)
    return d2.T @ d2


@dataclass(frozen=True)
class ModelSpec:
    """Model structure: one basis per term, quadratic penalties, noise correlation.

    Terms are indexed 0..num_terms-1; term 0 is the intercept when
    ``has_intercept`` (its design column is identically 1), and the remaining
    terms map onto covariate columns in order. Covariate terms are always
    eligible for a penalty; the intercept joins only if ``penalize_intercept``.
    """

    bases: tuple[BSplineBasis, ...]
    penalties: tuple[np.ndarray, ...] | None = None
    correlation: tuple[np.ndarray, ...] | None = None
    penalize_intercept: bool = False
    has_intercept: bool = True

    def __post_init__(self):
        bases = tuple(self.bases)
        if not bases:
            raise ValueError("model needs at least one term")
        object.__setattr__(self, "bases", bases)
        if self.penalties is not None:
            pens = []
            for j, om in enumerate(self.penalties):
                om = _locked(om)
                M = bases[j].M
                if om.shape != (M, M):
                    raise ValueError(f"penalty {j}: shape {om.shape}, expected {(M, M)}")
                if not np.allclose(om, om.T, atol=1e-12):
                    raise ValueError(f"penalty {j} is not symmetric")
                if scipy.linalg.eigvalsh(om).min() < _PSD_EIG_TOL:
                    raise ValueError(f"penalty {j} is not positive semi-definite")
                pens.append(om)
            object.__setattr__(self, "penalties", tuple(pens))
        if self.correlation is not None:
            mats = []
            for i, S in enumerate(self.correlation):
                S = _locked(S)
                if not np.allclose(S, S.T, atol=1e-12):
                    raise ValueError(f"correlation matrix {i} is not symmetric")
                try:
                    scipy.linalg.cholesky(S)
                except scipy.linalg.LinAlgError as exc:
                    raise ValueError(f"correlation matrix {i} is not positive definite") from exc
                mats.append(S)
            object.__setattr__(self, "correlation", tuple(mats))

    @property
    def num_terms(self) -> int:
        return len(self.bases)

    @property
    def p(self) -> int:
        return self.num_terms - 1 if self.has_intercept else self.num_terms

    def term_covariate(self, j: int) -> int | None:
        """Covariate column for term j; None for the intercept."""
        if self.has_intercept:
            return None if j == 0 else j - 1
        return j

    def is_penalized(self, j: int) -> bool:
        if self.has_intercept and j == 0:
            return self.penalize_intercept
        return True

    @property
    def penalized_terms(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.num_terms) if self.is_penalized(j))

    def penalty(self, j: int) -> np.ndarray:
        if self.penalties is None:
            return np.eye(self.bases[j].M)
        return self.penalties[j]

    def correlation_for(self, i: int, n_obs: int) -> np.ndarray | None:
        """S_i for subject index i, or None meaning identity."""
        if self.correlation is None:
            return None
        S = self.correlation[i]
        if S.shape != (n_obs, n_obs):
            raise ValueError(
                f"correlation matrix {i}: shape {S.shape} does not match {n_obs} observations")
        return S


@dataclass(frozen=True)
class FittedModel:
    """Estimated coefficient vectors, noise variance and fit diagnostics."""

    gammas: tuple[np.ndarray, ...]
    sigma2: float
    lambdas: np.ndarray
    iterations: int = 0
    converged: bool = True
    final_delta: float = 0.0
    sigma2_clamped: bool = False

    def __post_init__(self):
        gammas = tuple(_locked(g) for g in self.gammas)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "lambdas", _locked(self.lambdas))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if np.any(self.lambdas < 0):
            raise ValueError("regularization weights must be nonnegative")


def expand_lambdas(spec: ModelSpec, lambdas) -> np.ndarray:
    """Normalize user input to one weight per term.

    Accepts either one value per penalized term (unpenalized slots get 0) or
    one value per term. A positive weight on an unpenalized slot is rejected.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    pen = spec.penalized_terms
    if lam.size == len(pen):
        full = np.zeros(spec.num_terms)
        full[list(pen)] = lam
    elif lam.size == spec.num_terms:
        full = lam.copy()
    else:
        raise ValueError(
            f"expected {len(pen)} or {spec.num_terms} regularization weights, got {lam.size}")
    if np.any(full < 0):
        raise ValueError("regularization weights must be nonnegative")
    for j in range(spec.num_terms):
        if full[j] > 0 and not spec.is_penalized(j):
            raise ValueError(f"term {j} is unpenalized but has a positive weight")
    return full


def design_blocks(spec: ModelSpec, subject: SubjectRecord) -> list[np.ndarray]:
    """Per-term design matrices: basis matrix scaled rowwise by the covariate."""
    if subject.covariates.shape[1] != spec.p:
        raise ValueError(
            f"subject {subject.id}: {subject.covariates.shape[1]} covariates, "
            f"model expects {spec.p}")
    blocks = []
    for j in range(spec.num_terms):
        phi = basis_matrix(spec.bases[j], subject.times)
        col = spec.term_covariate(j)
        blocks.append(phi if col is None else subject.covariates[:, col, None] * phi)
    return blocks


def predict(model: FittedModel, spec: ModelSpec, subject: SubjectRecord) -> np.ndarray:
    """Fitted mean for one subject at its observation times."""
    _check_dims(model, spec)
    blocks = design_blocks(spec, subject)
    out = np.zeros(subject.n_obs)
    for B, g in zip(blocks, model.gammas):
        out += B @ g
    return out


def coefficient_curve(model: FittedModel, spec: ModelSpec, k: int, grid) -> np.ndarray:
    """Estimated coefficient function for term k evaluated on a time grid."""
    _check_dims(model, spec)
    if not 0 <= k < spec.num_terms:
        raise IndexError(f"term index {k} out of range for {spec.num_terms} terms")
    return basis_matrix(spec.bases[k], grid) @ model.gammas[k]


def _check_dims(model: FittedModel, spec: ModelSpec) -> None:
    if len(model.gammas) != spec.num_terms:
        raise ValueError(
            f"model has {len(model.gammas)} coefficient blocks, spec has {spec.num_terms}")
    for j, (g, b) in enumerate(zip(model.gammas, spec.bases)):
        if g.shape != (b.M,):
            raise ValueError(f"term {j}: coefficient length {g.shape} != basis size {b.M}")


def log_likelihood(model: FittedModel, spec: ModelSpec, data: LongitudinalDataset) -> float:
    """Gaussian log-likelihood with per-subject covariance sigma2 * S_i."""
    _check_dims(model, spec)
    sigma2 = model.sigma2
    total = -0.5 * data.total_obs * np.log(2.0 * np.pi)
    for i, subj in enumerate(data.subjects):
        r = subj.responses - predict(model, spec, subj)
        S = spec.correlation_for(i, subj.n_obs)
        if S is None:
            quad = float(r @ r)
            logdet = 0.0
        else:
            try:
                c, low = scipy.linalg.cho_factor(S)
            except scipy.linalg.LinAlgError as exc:
                raise ValueError(f"singular correlation matrix for subject {subj.id}") from exc
            quad = float(r @ scipy.linalg.cho_solve((c, low), r))
            logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
        total -= 0.5 * (subj.n_obs * np.log(sigma2) + logdet)
        total -= 0.5 * quad / sigma2
    return float(total)


def penalty_quadratic(model: FittedModel, spec: ModelSpec) -> float:
    """sum_j lambda_j * gamma_j' Omega_j gamma_j over penalized terms."""
    total = 0.0
    for j in spec.penalized_terms:
        g = model.gammas[j]
        total += model.lambdas[j] * float(g @ spec.penalty(j) @ g)
    return total


def penalized_log_likelihood(model: FittedModel, spec: ModelSpec,
                             data: LongitudinalDataset) -> float:
    """Log-likelihood minus (n/2) * sum_j lambda_j gamma_j' Omega_j gamma_j."""
    return log_likelihood(model, spec, data) - 0.5 * data.n * penalty_quadratic(model, spec)


def auto_model_spec(data: LongitudinalDataset, order: int = 1,
                    num_basis: int | None = None,
                    t_range: tuple[float, float] | None = None,
                    has_intercept: bool = True,
                    penalize_intercept: bool = False,
                    penalty_kind: str = "identity") -> ModelSpec:
    """Uniform-knot spec over the observed (or given) time range.

    ``num_basis=None`` applies the max-observations-per-subject rule to every
    term.
    """
    from .basis import make_uniform_basis

    t_min, t_max = data.time_range() if t_range is None else t_range
    if t_min == t_max:
        t_min, t_max = t_min - 0.5, t_max + 0.5
    M = num_basis if num_basis is not None else max(s.n_obs for s in data.subjects)
    n_terms = data.p + 1 if has_intercept else data.p
    if n_terms == 0:
        raise ValueError("model without intercept needs at least one covariate")
    bases = tuple(make_uniform_basis(t_min, t_max, M, order) for _ in range(n_terms))
    if penalty_kind == "identity":
        penalties = None
    elif penalty_kind == "second-diff":
        penalties = tuple(second_difference_penalty(b.M) for b in bases)
    else:
        raise ValueError(f"unknown penalty kind {penalty_kind!r}")
    return ModelSpec(bases=bases, penalties=penalties,
                     penalize_intercept=penalize_intercept, has_intercept=has_intercept)
