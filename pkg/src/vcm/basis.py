"""B-spline basis systems for representing time-varying coefficient functions.

Convention used throughout: ``order`` is the polynomial degree of the pieces
(order 0 = piecewise constant, order 1 = linear "hat" functions), the knot
vector is clamped (boundary knots repeated order+1 times), and the number of
basis functions is M = len(interior_knots) + order + 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis on [t_min, t_max].

    Immutable after construction; evaluation is pure and thread-safe.
    """

    order: int
    interior_knots: tuple[float, ...]
    t_min: float
    t_max: float
    M: int = field(init=False)

    def __post_init__(self):
        if self.order < 0:
            raise ValueError(f"order must be >= 0, got {self.order}")
        if not (np.isfinite(self.t_min) and np.isfinite(self.t_max)):
            raise ValueError("basis interval must be finite")
        if self.t_min >= self.t_max:
            raise ValueError(f"degenerate interval [{self.t_min}, {self.t_max}]")
        ik = tuple(float(t) for t in self.interior_knots)
        if any(not self.t_min < t < self.t_max for t in ik):
            raise ValueError("interior knots must lie strictly inside the interval")
        if any(b <= a for a, b in zip(ik, ik[1:])):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", ik)
        object.__setattr__(self, "M", len(ik) + self.order + 1)

    def knot_vector(self) -> np.ndarray:
        """Full clamped knot vector of length M + order + 1."""
        return np.concatenate([
            np.full(self.order + 1, self.t_min),
            np.asarray(self.interior_knots, dtype=float),
            np.full(self.order + 1, self.t_max),
        ])


def make_uniform_basis(t_min: float, t_max: float, M: int, order: int) -> BSplineBasis:
    """Basis with equally spaced knots and exactly M basis functions."""
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if M < order + 1:
        raise ValueError(f"M={M} too small for order {order}; need M >= order + 1")
    if not (np.isfinite(t_min) and np.isfinite(t_max)) or t_min >= t_max:
        raise ValueError(f"degenerate interval [{t_min}, {t_max}]")
    n_interior = M - order - 1
    interior = np.linspace(t_min, t_max, n_interior + 2)[1:-1]
    return BSplineBasis(order=order, interior_knots=tuple(interior),
                        t_min=float(t_min), t_max=float(t_max))


def basis_matrix(basis: BSplineBasis, times) -> np.ndarray:
    """Evaluate all M basis functions at each time; rows are time points.

    Times outside [t_min, t_max] are clamped to the boundary, so the right
    endpoint belongs to the last basis function (closed final knot span).
    """
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1:
        raise ValueError("times must be one-dimensional")
    t = np.clip(t, basis.t_min, basis.t_max)
    knots = basis.knot_vector()
    order, M = basis.order, basis.M

    # Degree-0 layer: indicator of the knot span containing t, with spans
    # clipped to the nonempty range [order, M-1] so t == t_max is included.
    span = np.searchsorted(knots, t, side="right") - 1
    span = np.clip(span, order, M - 1)
    B = np.zeros((t.size, M + order))
    B[np.arange(t.size), span] = 1.0

    # Cox-de Boor recurrence, one degree at a time; 0/0 ratios are taken as 0.
    for d in range(1, order + 1):
        m = M + order - d
        left_den = knots[d:d + m] - knots[:m]
        right_den = knots[d + 1:d + 1 + m] - knots[1:1 + m]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0.0,
                            (t[:, None] - knots[None, :m]) / left_den, 0.0)
            right = np.where(right_den > 0.0,
                             (knots[None, d + 1:d + 1 + m] - t[:, None]) / right_den, 0.0)
        B = left * B[:, :m] + right * B[:, 1:1 + m]

    return B[:, :M]


def evaluate_basis(basis: BSplineBasis, t: float) -> np.ndarray:
    """Vector of the M basis functions at a single time point."""
    return basis_matrix(basis, [t])[0]
