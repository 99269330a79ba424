"""Deterministic splittable random streams and the core samplers.

All randomness in the package flows through a :class:`SeedTree`: a master seed
plus a derivation path (chain index, replicate index, block label, ...). Two
trees with the same master seed and path yield bitwise-identical streams; any
difference in the path yields an independent stream. The backend is numpy's
counter-based Philox generator keyed through ``SeedSequence`` spawn keys, so
streams can be created in any order (and across processes) without
coordination.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import multigammaln

from .errors import InvalidDof, InvalidParameter, NotPositiveDefinite

# Poisson rates above this cap are refused; the simulation layer maps the
# refusal to its own overflow error.
POISSON_RATE_CAP = 1.0e9

_PART_INT = 0
_PART_STR = 1


def _encode_part(part: int | str) -> tuple[int, int]:
    """Encode one path component as a (type tag, uint32) pair."""
    if isinstance(part, (int, np.integer)) and not isinstance(part, bool):
        value = int(part)
        if value < 0 or value >= 2**32:
            raise InvalidParameter(f"integer path component out of range: {part!r}")
        return (_PART_INT, value)
    if isinstance(part, str):
        return (_PART_STR, zlib.crc32(part.encode("utf-8")) & 0xFFFFFFFF)
    raise InvalidParameter(f"path components must be int or str, got {type(part).__name__}")


class SeedTree:
    """Master seed plus derivation path; hands out independent generators.

    Parameters
    ----------
    master_seed : int
        Non-negative master seed for the whole run.
    path : tuple, optional
        Derivation path; normally built through :meth:`child`.
    """

    __slots__ = ("master_seed", "path")

    def __init__(self, master_seed: int, path: tuple[int | str, ...] = ()):
        if master_seed < 0:
            raise InvalidParameter("master seed must be non-negative")
        self.master_seed = int(master_seed)
        self.path = tuple(path)

    def child(self, *parts: int | str) -> "SeedTree":
        """Return the subtree at ``path + parts``."""
        return SeedTree(self.master_seed, self.path + parts)

    def seed_sequence(self) -> np.random.SeedSequence:
        spawn_key: list[int] = []
        for part in self.path:
            spawn_key.extend(_encode_part(part))
        return np.random.SeedSequence(self.master_seed, spawn_key=tuple(spawn_key))

    def generator(self) -> np.random.Generator:
        """A fresh Philox generator for this node; same node, same stream."""
        return np.random.Generator(np.random.Philox(self.seed_sequence()))

    def __repr__(self) -> str:  # pragma: no cover
        return f"SeedTree(master_seed={self.master_seed}, path={self.path!r})"


# ==== samplers ====


def _cholesky(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc


def sample_mvn(mean: np.ndarray, cov: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one multivariate normal vector via Cholesky factorization.

    Raises
    ------
    NotPositiveDefinite
        If ``cov`` has no Cholesky factor.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (mean.size, mean.size):
        raise InvalidParameter("covariance shape does not match mean length")
    lower = _cholesky(cov, "covariance")
    return mean + lower @ rng.standard_normal(mean.size)


def sample_inverse_wishart(scale: np.ndarray, dof: float, rng: np.random.Generator) -> np.ndarray:
    """Draw one inverse-Wishart matrix (scale parameterization).

    Convention: ``X ~ IW(scale, dof)`` has mean ``scale / (dof - P - 1)`` for
    ``dof > P + 1``. Sampling uses the Bartlett decomposition of the
    corresponding Wishart.

    Raises
    ------
    InvalidDof
        If ``dof <= P - 1``.
    NotPositiveDefinite
        If ``scale`` has no Cholesky factor.
    """
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if scale.shape != (p, p):
        raise InvalidParameter("scale must be square")
    if dof <= p - 1:
        raise InvalidDof(f"dof must exceed P - 1 = {p - 1}, got {dof}")
    lower = _cholesky(scale, "inverse-Wishart scale")
    # Bartlett factor A of Wishart(I, dof): lower triangular, chi on the
    # diagonal, standard normals below.
    a = np.zeros((p, p))
    df = dof - np.arange(p)
    a[np.diag_indices(p)] = np.sqrt(rng.chisquare(df))
    if p > 1:
        idx = np.tril_indices(p, -1)
        a[idx] = rng.standard_normal(idx[0].size)
    # X = (L A^-T)(L A^-T)^T with L = chol(scale): X^-1 ~ Wishart(scale^-1, dof).
    c = solve_triangular(a, lower.T, lower=True, check_finite=False)
    return c.T @ c


def inverse_wishart_logpdf(x: np.ndarray, scale: np.ndarray, dof: float) -> float:
    """Log density of the inverse-Wishart under the scale parameterization."""
    x = np.asarray(x, dtype=float)
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if dof <= p - 1:
        raise InvalidDof(f"dof must exceed P - 1 = {p - 1}, got {dof}")
    sign_s, logdet_s = np.linalg.slogdet(scale)
    sign_x, logdet_x = np.linalg.slogdet(x)
    if sign_s <= 0:
        raise NotPositiveDefinite("scale is not positive definite")
    if sign_x <= 0:
        raise NotPositiveDefinite("argument is not positive definite")
    trace_term = np.trace(np.linalg.solve(x, scale))
    return float(
        0.5 * dof * logdet_s
        - 0.5 * dof * p * np.log(2.0)
        - multigammaln(0.5 * dof, p)
        - 0.5 * (dof + p + 1.0) * logdet_x
        - 0.5 * trace_term
    )


def sample_poisson(rate, rng: np.random.Generator):
    """Poisson draws; refuses negative, non-finite or > cap rates."""
    rate = np.asarray(rate, dtype=float)
    if not np.all(np.isfinite(rate)):
        raise InvalidParameter("Poisson rate must be finite")
    if np.any(rate < 0):
        raise InvalidParameter("Poisson rate must be non-negative")
    if np.any(rate > POISSON_RATE_CAP):
        raise InvalidParameter(f"Poisson rate exceeds cap {POISSON_RATE_CAP:g}")
    return rng.poisson(rate)


def sample_gamma(shape, rate, rng: np.random.Generator):
    """Gamma draws in the shape/rate parameterization (mean = shape/rate)."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise InvalidParameter("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate)


def sample_uniform(low, high, rng: np.random.Generator):
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if np.any(high <= low):
        raise InvalidParameter("uniform requires high > low")
    return rng.uniform(low, high)


def sample_normal(mean, sd, rng: np.random.Generator):
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise InvalidParameter("normal sd must be positive and finite")
    return rng.normal(np.asarray(mean, dtype=float), sd)
