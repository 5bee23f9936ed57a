"""Simulation of clustered ordinal data with informative cluster size.

Random intercepts follow the bridge distribution for the logit link, whose
defining property is that the cluster-conditional cumulative model

    P(Y <= c | b, x, z) = expit(b + (eta_c + b1*x + b2*z) / phi)

marginalizes exactly back to expit(eta_c + b1*x + b2*z). Within-cluster
dependence is induced by a Gaussian copula with exchangeable correlation tau;
informativeness of cluster size comes from linking the size distribution to
the cluster's mean latent effect via a scale parameter nu.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .data import (
    DEFAULT_TRUE_PARAMS,
    Cluster,
    ClusteredDataset,
    Member,
    ParamVector,
)

# Offsets applied to the outcome cutpoints to produce the three auxiliary
# variables' cutpoints (shared slopes, same latent effect).
AUX_SHIFTS = (-0.3, 0.0, 0.3)


def _default_aux_cutpoints() -> tuple[tuple[float, ...], ...]:
    base = DEFAULT_TRUE_PARAMS.cutpoints
    return tuple(tuple(c + s for c in base) for s in AUX_SHIFTS)


@dataclass(frozen=True)
class GenConfig:
    """Configuration of the data generating process.

    tau is the latent exchangeable correlation (within-cluster association),
    nu scales the informativeness of cluster size (nu=0 gives sizes
    independent of outcomes), phi in (0,1) is the bridge attenuation
    parameter.
    """

    n_clusters: int
    tau: float
    nu: float
    phi: float = 0.6
    max_size: int = 28
    true_params: ParamVector = DEFAULT_TRUE_PARAMS
    aux_cutpoints: tuple[tuple[float, ...], ...] = field(
        default_factory=_default_aux_cutpoints
    )
    x_sd: float = 2.0
    z_prob: float = 0.5

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if not 0.0 < self.phi < 1.0:
            raise ValueError("phi must lie in (0, 1)")
        if self.max_size < 1:
            raise ValueError("max_size must be >= 1")
        if len(self.aux_cutpoints) != 3:
            raise ValueError("need cutpoints for exactly three auxiliaries")
        for cuts in self.aux_cutpoints:
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ValueError("auxiliary cutpoints must be strictly increasing")

    def n_categories_aux(self) -> tuple[int, int, int]:
        return tuple(len(c) + 1 for c in self.aux_cutpoints)  # type: ignore[return-value]


def bridge_density(b, phi: float):
    """Density of the bridge distribution with parameter phi in (0, 1).

    f(b) = (1 / 2*pi) * sin(phi*pi) / (cosh(phi*b) + cos(phi*pi))
    """
    if not 0.0 < phi < 1.0:
        raise ValueError("phi must lie in (0, 1)")
    b = np.asarray(b, dtype=float)
    # cosh overflows to inf far in the tails; the ratio then underflows to
    # the correct 0.0, so the overflow warning is suppressed.
    with np.errstate(over="ignore"):
        return (1.0 / (2.0 * np.pi)) * np.sin(phi * np.pi) / (
            np.cosh(phi * b) + np.cos(phi * np.pi)
        )


def bridge_quantile(u, phi: float):
    """Inverse CDF of the bridge distribution, u in (0, 1)."""
    if not 0.0 < phi < 1.0:
        raise ValueError("phi must lie in (0, 1)")
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1)")
    return (1.0 / phi) * np.log(np.sin(phi * np.pi * u) / np.sin(phi * np.pi * (1.0 - u)))


def sample_bridge_matrix(
    n_clusters: int, m: int, tau: float, phi: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw an (n_clusters, m) matrix of bridge random effects.

    Rows are independent clusters; within a row the variates have bridge
    marginals coupled through a Gaussian copula with exchangeable
    correlation tau, realized by the one-factor construction
    w_j = sqrt(tau) * g + sqrt(1 - tau) * e_j.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    g = rng.standard_normal((n_clusters, 1))
    e = rng.standard_normal((n_clusters, m))
    w = np.sqrt(tau) * g + np.sqrt(1.0 - tau) * e
    u = ndtr(w)
    return bridge_quantile(u, phi)


def sample_bridge_cluster(
    m: int, tau: float, phi: float, rng: np.random.Generator
) -> np.ndarray:
    """Draw one cluster's vector of m correlated bridge random effects."""
    return sample_bridge_matrix(1, m, tau, phi, rng)[0]


def gen_cluster_size(
    b_bar: float, nu: float, max_size: int, rng: np.random.Generator
) -> int:
    """Draw a cluster size from Binomial(max_size, expit(nu*b_bar)) truncated to >= 1.

    Zero draws are rejected and redrawn; when the success probability is
    small (< 0.05) the rejection loop is replaced by exact inverse-CDF
    sampling of the truncated distribution.
    """
    return int(_gen_cluster_sizes(np.asarray([b_bar]), nu, max_size, rng)[0])


def _gen_cluster_sizes(
    b_bar: np.ndarray, nu: float, max_size: int, rng: np.random.Generator
) -> np.ndarray:
    lam = expit(nu * b_bar)
    n = rng.binomial(max_size, lam)
    small = lam < 0.05
    if np.any(small):
        n[small] = _trunc_binom_icdf(lam[small], max_size, rng)
    bad = (n == 0) & ~small
    while np.any(bad):
        n[bad] = rng.binomial(max_size, lam[bad])
        bad = (n == 0) & ~small
    return n


def _trunc_binom_icdf(
    lam: np.ndarray, max_size: int, rng: np.random.Generator
) -> np.ndarray:
    # Inverse-CDF draw of Binomial(max_size, lam) conditioned on >= 1:
    # u uniform on (P(X=0), 1), then count pmf terms until the cdf passes u.
    from scipy.stats import binom

    p0 = binom.pmf(0, max_size, lam)
    u = p0 + rng.random(lam.shape) * (1.0 - p0)
    ks = np.arange(max_size + 1)
    cdf = binom.cdf(ks[None, :], max_size, lam[:, None])
    return np.argmax(cdf >= u[:, None], axis=1)


def conditional_cumulative(b, lin, cutpoints, phi: float) -> np.ndarray:
    """Cluster-conditional cumulative probabilities theta_c.

    theta_c = expit(b + (eta_c + lin) / phi) for each cutpoint eta_c, where
    lin is the covariate part b1*x + b2*z. Broadcasts b and lin.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    lin = np.asarray(lin, dtype=float)
    cuts = np.asarray(cutpoints, dtype=float)
    return expit(b[..., None] + (cuts + lin[..., None]) / phi)


def gen_ordinal_outcomes(
    b: np.ndarray,
    lin: np.ndarray,
    cutpoints,
    phi: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized draw of ordinal categories for members with effects b.

    Category probabilities are first differences of the conditional
    cumulative vector; a single uniform per member is inverted through the
    cumulative probabilities.
    """
    theta = conditional_cumulative(b, lin, cutpoints, phi)
    probs = np.diff(
        np.concatenate(
            [np.zeros_like(theta[..., :1]), theta, np.ones_like(theta[..., :1])],
            axis=-1,
        ),
        axis=-1,
    )
    if np.any(probs < -1e-12):
        raise ValueError("negative category probability: cutpoints not increasing")
    u = rng.random(theta.shape[:-1])
    return 1 + np.sum(u[..., None] > theta, axis=-1).astype(np.int64)


def gen_ordinal_outcome(
    b: float,
    x: float,
    z: float,
    params: ParamVector,
    phi: float,
    rng: np.random.Generator,
) -> int:
    """Draw one member's outcome category given its latent effect."""
    lin = params.slopes[0] * x + params.slopes[1] * z
    return int(
        gen_ordinal_outcomes(
            np.asarray([b]), np.asarray([lin]), params.cutpoints, phi, rng
        )[0]
    )


def simulate_dataset(
    cfg: GenConfig, rng: np.random.Generator | int
) -> ClusteredDataset:
    """Generate a complete dataset under the configured process.

    Per cluster: draw max_size correlated bridge effects, average them to get
    the size-linking score, draw the truncated-binomial size, keep the first
    size effects, draw covariates, then draw the outcome and the three
    auxiliaries sharing each member's latent effect.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    n, m = cfg.n_clusters, cfg.max_size

    b_mat = sample_bridge_matrix(n, m, cfg.tau, cfg.phi, rng)
    b_bar = b_mat.mean(axis=1)
    sizes = _gen_cluster_sizes(b_bar, cfg.nu, m, rng)
    x = cfg.x_sd * rng.standard_normal(n)
    z = (rng.random(n) < cfg.z_prob).astype(np.int64)

    ci = np.repeat(np.arange(n), sizes)
    keep = np.concatenate([b_mat[i, : sizes[i]] for i in range(n)])
    b1, b2 = cfg.true_params.slopes
    lin = b1 * x[ci] + b2 * z[ci]

    y = gen_ordinal_outcomes(keep, lin, cfg.true_params.cutpoints, cfg.phi, rng)
    aux = [
        gen_ordinal_outcomes(keep, lin, cuts, cfg.phi, rng)
        for cuts in cfg.aux_cutpoints
    ]

    clusters = []
    r = 0
    for i in range(n):
        k = int(sizes[i])
        members = tuple(
            Member(int(y[r + j]), int(aux[0][r + j]), int(aux[1][r + j]), int(aux[2][r + j]))
            for j in range(k)
        )
        clusters.append(
            Cluster(id=i, x=float(x[i]), z=float(z[i]), size=k, members=members)
        )
        r += k
    return ClusteredDataset(
        tuple(clusters),
        n_categories_y=cfg.true_params.n_categories,
        n_categories_aux=cfg.n_categories_aux(),
    )
