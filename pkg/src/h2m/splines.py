"""Low-rank thin-plate smooths for confounder adjustment.

A smooth of a covariate ``z`` is ``alpha * z_c + sum_k b_k |z - kappa_k|^3``
where ``z_c`` is the mean-centered covariate and the cubic columns are also
mean-centered so every column is orthogonal to the intercept. Knots sit at
equally spaced interior sample quantiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, TooFewDistinctValues


@dataclass(frozen=True)
class SplineBasis:
    """Centered design for one smooth: linear column plus cubic columns."""

    values: np.ndarray  # covariate values the basis was built on
    knots: np.ndarray  # strictly increasing interior knots
    linear: np.ndarray  # centered covariate, shape (T,)
    cubic: np.ndarray  # centered |z - kappa|^3 columns, shape (T, K)

    @property
    def n_knots(self) -> int:
        return self.knots.size

    @property
    def design(self) -> np.ndarray:
        """Full (T, K+1) design: linear column first, cubic columns after."""
        return np.column_stack([self.linear, self.cubic])


def make_knots(z: np.ndarray, n_knots: int) -> np.ndarray:
    """Interior quantile knots at probabilities (k+1)/(K+1), k = 0..K-1.

    Raises
    ------
    TooFewDistinctValues
        If ``z`` has fewer than K+2 distinct values, or ties collapse the
        quantiles so the knots are not strictly increasing.
    """
    z = np.asarray(z, dtype=float)
    if n_knots < 1:
        raise TooFewDistinctValues("need at least one knot")
    distinct = np.unique(z)
    if distinct.size < n_knots + 2:
        raise TooFewDistinctValues(
            f"{distinct.size} distinct values cannot support {n_knots} interior knots"
        )
    probs = np.arange(1, n_knots + 1) / (n_knots + 1.0)
    knots = np.percentile(z, 100.0 * probs, method="linear")
    if np.any(np.diff(knots) <= 0):
        raise TooFewDistinctValues("ties collapse the requested quantile knots")
    return knots


def basis(z: np.ndarray, knots: np.ndarray) -> SplineBasis:
    """Build the centered thin-plate design for covariate ``z``.

    Columns are ``|z - kappa_k|^3`` and the identity column, each centered to
    zero mean over ``z`` so the smooth carries no intercept.
    """
    z = np.asarray(z, dtype=float)
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 1:
        raise DimensionMismatch("knots must be a non-empty vector")
    raw = np.abs(z[:, None] - knots[None, :]) ** 3
    cubic = raw - raw.mean(axis=0)
    linear = z - z.mean()
    return SplineBasis(values=z, knots=knots, linear=linear, cubic=cubic)


def smooth_eval(sbasis: SplineBasis, alpha: float, coefficients: np.ndarray) -> np.ndarray:
    """Evaluate ``alpha * linear + cubic @ coefficients`` on the basis rows.

    Raises
    ------
    DimensionMismatch
        If the coefficient vector length differs from the knot count.
    """
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (sbasis.n_knots,):
        raise DimensionMismatch(
            f"expected {sbasis.n_knots} cubic coefficients, got {coefficients.shape}"
        )
    return float(alpha) * sbasis.linear + sbasis.cubic @ coefficients


def time_covariate(n_days: int) -> np.ndarray:
    """Day index 1..T rescaled onto [0, 1] (the default time smooth input)."""
    if n_days < 2:
        return np.zeros(max(n_days, 0))
    return np.arange(n_days, dtype=float) / (n_days - 1.0)
