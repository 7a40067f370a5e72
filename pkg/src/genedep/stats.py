"""Shared numerical primitives: log-domain sums, densities and BIC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class InverseGammaParams:
    """Shape/scale pair of an inverse-Gamma density."""

    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError(
                f"inverse-Gamma parameters must be positive, got "
                f"shape={self.shape!r}, scale={self.scale!r}"
            )

    def logpdf(self, x):
        """Log-density at ``x`` (array-like, positive)."""
        x = np.asarray(x, dtype=float)
        a, b = self.shape, self.scale
        return a * math.log(b) - math.lgamma(a) - (a + 1.0) * np.log(x) - b / x


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError("mean and variance must be 1-d of equal length")
        if np.any(~(var > 0)):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def log_sum_exp(values) -> float:
    """Return ``log(sum(exp(values)))`` computed with a max shift.

    Raises
    ------
    ValueError
        If ``values`` is empty.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp of a 2-d array."""
    m = np.max(a, axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def bic(log_likelihood: float, param_count: int, sample_count: int) -> float:
    """Bayesian information criterion ``-2 L + q ln N``."""
    if sample_count < 1:
        raise ValueError(f"sample_count must be >= 1, got {sample_count}")
    if param_count < 0:
        raise ValueError(f"param_count must be >= 0, got {param_count}")
    return -2.0 * float(log_likelihood) + param_count * math.log(sample_count)


def inverse_gamma_mode(p: InverseGammaParams) -> float:
    """Mode ``scale / (shape + 1)`` of an inverse-Gamma density."""
    return p.scale / (p.shape + 1.0)


def diag_gaussian_logpdf(x, g: DiagGaussian) -> float:
    """Log-density of a diagonal Gaussian at a single point ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(
            f"dimension mismatch: x has {x.shape[0]}, gaussian has {g.dim}"
        )
    r = x - g.mean
    return float(np.sum(-0.5 * (LOG_2PI + np.log(g.variance)) - r * r / (2.0 * g.variance)))


def diag_gaussian_logpdf_rows(x: np.ndarray, mean: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Vectorised log-density of each row of ``x`` (N x d) under every
    component of a diagonal mixture (``mean``, ``variance``: R x d).

    Returns an N x R array.
    """
    x = np.asarray(x, dtype=float)
    inv = 1.0 / variance
    const = -0.5 * np.sum(LOG_2PI + np.log(variance), axis=1)
    r = x[:, None, :] - mean[None, :, :]
    return const - 0.5 * np.einsum("nrd,rd->nr", r * r, inv)
