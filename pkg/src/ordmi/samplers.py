"""Shared sampling utilities for the Gibbs imputers."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

# Beyond this many standard deviations the normal cdf underflows; bounds are
# clamped there, which is far outside anything the chains produce.
_TAIL_CLAMP = 36.0


def trunc_norm(
    rng: np.random.Generator,
    mean: np.ndarray,
    sd,
    lo: np.ndarray,
    hi: np.ndarray,
) -> np.ndarray:
    """Vectorized truncated normal draws on [lo, hi] (entries may be +-inf).

    Inverse-CDF sampling, with the transform applied on whichever side of
    zero keeps the cdf values away from 1 so deep one-sided truncations stay
    accurate: intervals lying in the right tail are sampled through the
    complementary cdf by symmetry.
    """
    mean = np.asarray(mean, dtype=float)
    a = np.clip((lo - mean) / sd, -_TAIL_CLAMP, _TAIL_CLAMP)
    b = np.clip((hi - mean) / sd, -_TAIL_CLAMP, _TAIL_CLAMP)
    u = rng.random(mean.shape)
    right = a > 0.0  # interval in the right tail: reflect
    au = np.where(right, -b, a)
    bu = np.where(right, -a, b)
    fa = ndtr(au)
    fb = ndtr(bu)
    span = np.maximum(fb - fa, 1e-300)
    zu = ndtri(np.clip(fa + u * span, 1e-300, 1.0 - 1e-16))
    z = np.where(right, -zu, zu)
    z = np.clip(z, a, b)
    return mean + sd * z


def inv_gamma(rng: np.random.Generator, shape: float, scale: float) -> float:
    """One inverse-gamma draw; scale is the IG scale (rate of the gamma)."""
    return float(scale / rng.gamma(shape))


def chol_mvn(
    rng: np.random.Generator, mean: np.ndarray, precision: np.ndarray
) -> np.ndarray:
    """Draw from N(mean, precision^{-1}) via Cholesky of the precision."""
    from scipy.linalg import cho_factor, cho_solve, solve_triangular

    c, low = cho_factor(precision, lower=True)
    z = rng.standard_normal(mean.shape[0])
    # x = mean + L^{-T} z with precision = L L^T
    return mean + solve_triangular(c, z, lower=low, trans="T")


def mvn_from_normal_eq(
    rng: np.random.Generator, a: np.ndarray, b: np.ndarray
) -> np.ndarray:
    """Draw from N(A^{-1} b, A^{-1}) given normal equations (A, b)."""
    from scipy.linalg import cho_factor, cho_solve, solve_triangular

    c, low = cho_factor(a, lower=True)
    mean = cho_solve((c, low), b)
    z = rng.standard_normal(b.shape[0])
    return mean + solve_triangular(c, z, lower=low, trans="T")
