"""Exception taxonomy for the h2m package.

Every named failure mode raised by the library derives from :class:`H2MError`
so callers (and the CLI) can catch one base class. Grouped by the layer that
raises them.
"""

from __future__ import annotations


class H2MError(Exception):
    """Base class for all h2m errors."""


# ==== configuration ====


class ConfigError(H2MError):
    """Invalid or inconsistent configuration value."""


# ==== dataset loading / preprocessing ====


class MissingColumn(H2MError):
    """A required column is absent from the input file."""


class NonContiguousDates(H2MError):
    """Dates are not strictly increasing consecutive calendar days."""


class MissingOutcome(H2MError):
    """Outcome, meteorology or holiday entries are missing or malformed."""


class EmptyPollutantColumn(H2MError):
    """A pollutant column has fewer than two observed values."""


class ZeroVariance(H2MError):
    """A column has zero variance over its observed entries."""


class InsufficientOverlap(H2MError):
    """A pollutant pair has fewer than two jointly observed days."""


# ==== spline construction ====


class TooFewDistinctValues(H2MError):
    """Not enough distinct covariate values to place the requested knots."""


class DimensionMismatch(H2MError):
    """Coefficient vector does not match the basis dimensions."""


# ==== model components ====


class NonPositiveScale(H2MError):
    """A scale (standard deviation) parameter is not strictly positive."""


class SingularCovariance(H2MError):
    """A covariance matrix is singular or not positive definite."""


class LagUnavailable(H2MError):
    """No day has a lagged exposure available (lag >= series length)."""


class NonPositiveRate(H2MError):
    """A Poisson rate is zero or negative where counts were observed."""


# ==== sampler ====


class SingularScale(H2MError):
    """An inverse-Wishart scale matrix is not positive definite."""


class RankDeficient(H2MError):
    """Design matrix is rank deficient under a flat prior."""


class NonFiniteCurrentTarget(H2MError):
    """MH step started from a state with non-finite log target."""


class NonFiniteLogPosterior(H2MError):
    """Joint log posterior became non-finite during sampling."""


# ==== diagnostics ====


class TooFewChains(H2MError):
    """Fewer than two chains supplied to a between-chain diagnostic."""


class TooFewDraws(H2MError):
    """Too few draws for the requested diagnostic."""


class NonFiniteDeviance(H2MError):
    """Deviance evaluations contain non-finite values."""


# ==== simulation ====


class OverflowRate(H2MError):
    """A simulated Poisson mean exceeded the configured cap."""


# ==== random streams ====


class NotPositiveDefinite(H2MError):
    """Matrix passed to a sampler is not positive definite."""


class InvalidDof(H2MError):
    """Degrees of freedom too small for the requested dimension."""


class InvalidParameter(H2MError):
    """Sampler parameter outside its valid domain."""
