"""Cluster-weighted GEE for marginal proportional-odds models.

The ordinal outcome is expanded into cumulative indicators U_c = 1{Y <= c},
modeled marginally as expit(eta_c + b1*x + b2*z). Estimating equations use
working independence across members, the exact multinomial covariance of the
indicator vector within a member, and per-cluster weights (inverse cluster
size by default) so that clusters contribute equally regardless of size.
Variance is the robust sandwich.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import ClusteredDataset, ParamVector, member_table
from .errors import (
    IdentifiabilityError,
    NumericalError,
    SeparationError,
    TooFewClustersError,
)

WEIGHTINGS = ("inverse-cluster-size", "unweighted")

_MU_EPS = 1e-12
_COND_LIMIT = 1e12
_MAX_HALVINGS = 10


def binary_expand(y: int, n_categories: int) -> np.ndarray:
    """Cumulative indicator vector (1{y<=1}, ..., 1{y<=C-1})."""
    if not 1 <= y <= n_categories:
        raise ValueError(f"category {y} outside 1..{n_categories}")
    c = np.arange(1, n_categories)
    return (y <= c).astype(np.int64)


def marginal_means(params: ParamVector, x: float, z: float) -> np.ndarray:
    """Marginal cumulative probabilities mu_c at covariates (x, z)."""
    lin = params.slopes[0] * x + params.slopes[1] * z
    return expit(np.asarray(params.cutpoints) + lin)


def multinomial_cov(mu: np.ndarray) -> np.ndarray:
    """Exact covariance of the cumulative indicator vector.

    V[c, c'] = mu_min(c,c') * (1 - mu_max(c,c')). Requires strictly
    increasing mu; probabilities at the boundary (outside (eps, 1-eps))
    raise NumericalError since V degenerates.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or mu.size < 1:
        raise ValueError("mu must be a nonempty vector")
    if np.any(np.diff(mu) <= 0.0):
        raise ValueError("mu must be strictly increasing")
    if np.any(mu <= _MU_EPS) or np.any(mu >= 1.0 - _MU_EPS):
        raise NumericalError("cumulative probability at boundary: singular covariance")
    lo = np.minimum.outer(mu, mu)
    hi = np.maximum.outer(mu, mu)
    return lo * (1.0 - hi)


@dataclass(frozen=True)
class CwgeeFit:
    params: ParamVector
    robust_cov: np.ndarray
    n_iterations: int
    converged: bool
    weighting: str
    max_score: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.robust_cov))

    def to_json(self) -> str:
        return json.dumps(
            {
                "names": list(self.params.names()),
                "estimates": self.params.as_array().tolist(),
                "robust_se": self.se.tolist(),
                "robust_cov": self.robust_cov.tolist(),
                "n_iterations": self.n_iterations,
                "converged": self.converged,
                "weighting": self.weighting,
                "max_score": self.max_score,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CwgeeFit":
        obj = json.loads(text)
        n_cut = sum(1 for n in obj["names"] if n.startswith("eta"))
        return cls(
            params=ParamVector.from_array(np.asarray(obj["estimates"]), n_cut),
            robust_cov=np.asarray(obj["robust_cov"], dtype=float),
            n_iterations=int(obj["n_iterations"]),
            converged=bool(obj["converged"]),
            weighting=obj["weighting"],
            max_score=float(obj["max_score"]),
        )


@dataclass(frozen=True)
class _Prepared:
    x: np.ndarray  # (N,)
    z: np.ndarray  # (N,)
    w: np.ndarray  # (N,) cluster weights
    k: np.ndarray  # (N,) observed member counts
    s: np.ndarray  # (N, C-1) summed indicator vectors
    n_categories: int


def _prepare(d: ClusteredDataset, weighting: str) -> _Prepared:
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    table = member_table(d)
    C = d.n_categories_y
    y = table.codes[:, 0]
    obs = y > 0
    if np.any(obs & ((y < 1) | (y > C))):
        raise ValueError("observed y outside category range")
    k = np.bincount(table.cluster_index[obs], minlength=table.n_clusters)
    usable = k > 0
    if int(usable.sum()) < 2:
        raise TooFewClustersError("need >= 2 clusters with observed y")
    present = np.bincount(y[obs], minlength=C + 1)[1:]
    if np.any(present == 0):
        missing = [str(c + 1) for c in range(C) if present[c] == 0]
        raise IdentifiabilityError(
            "categories never observed: " + ", ".join(missing)
        )
    # S[i, c] = #observed members of cluster i with y <= c+1
    onehot = np.zeros((table.n_members, C), dtype=np.int64)
    onehot[obs, y[obs] - 1] = 1
    per_cat = np.zeros((table.n_clusters, C), dtype=np.int64)
    np.add.at(per_cat, table.cluster_index, onehot)
    s = np.cumsum(per_cat, axis=1)[:, : C - 1].astype(float)
    if weighting == "inverse-cluster-size":
        w = 1.0 / table.size.astype(float)
    else:
        w = np.ones(table.n_clusters)
    return _Prepared(
        x=table.x[usable],
        z=table.z[usable],
        w=w[usable],
        k=k[usable].astype(float),
        s=s[usable],
        n_categories=C,
    )


def _design(p: _Prepared) -> np.ndarray:
    # Xd[i] = [I_{C-1} | x_i * 1 | z_i * 1], shape (N, C-1, C+1)
    n, q = p.x.shape[0], p.n_categories - 1
    xd = np.zeros((n, q, q + 2))
    xd[:, np.arange(q), np.arange(q)] = 1.0
    xd[:, :, q] = p.x[:, None]
    xd[:, :, q + 1] = p.z[:, None]
    return xd


def _score_pieces(xi: np.ndarray, p: _Prepared, xd: np.ndarray):
    """Per-cluster weighted scores, total score, and scoring matrix."""
    q = p.n_categories - 1
    eta, beta = xi[:q], xi[q:]
    lin = p.x * beta[0] + p.z * beta[1]
    mu = expit(eta[None, :] + lin[:, None])
    if np.any(mu <= _MU_EPS) or np.any(mu >= 1.0 - _MU_EPS):
        raise NumericalError("fitted cumulative probability at boundary")
    lo = np.minimum(mu[:, :, None], mu[:, None, :])
    hi = np.maximum(mu[:, :, None], mu[:, None, :])
    vinv = np.linalg.inv(lo * (1.0 - hi))
    deriv = (mu * (1.0 - mu))[:, :, None] * xd
    resid = p.s - p.k[:, None] * mu
    t = np.einsum("ncd,nd->nc", vinv, resid)
    scores = p.w[:, None] * np.einsum("ncp,nc->np", deriv, t)
    dvd = np.einsum("ncp,ncd,ndq->npq", deriv, vinv, deriv)
    h = np.einsum("n,npq->pq", p.w * p.k, dvd)
    return scores, scores.sum(axis=0), h


def sandwich_variance(h: np.ndarray, cluster_scores: np.ndarray) -> np.ndarray:
    """Robust covariance H^{-1} M H^{-1} with M the outer-product sum.

    Doubling every cluster doubles both H and M, halving the result;
    covariance scales as 1/N for growing numbers of similar clusters.
    """
    m = cluster_scores.T @ cluster_scores
    hinv = np.linalg.inv(h)
    cov = hinv @ m @ hinv
    return 0.5 * (cov + cov.T)


def _init_params(p: _Prepared) -> np.ndarray:
    tot = p.s.sum(axis=0)
    n_obs = p.k.sum()
    f = np.clip(tot / n_obs, 1e-6, 1.0 - 1e-6)
    return np.concatenate([logit(f), np.zeros(2)])


def cwgee_solve(
    d: ClusteredDataset,
    init: ParamVector | None = None,
    *,
    weighting: str = "inverse-cluster-size",
    tol: float = 1e-10,
    max_iter: int = 100,
) -> CwgeeFit:
    """Fit the marginal proportional-odds model by weighted GEE.

    Fisher scoring with step halving: a step is halved (up to 10 times) when
    it produces non-increasing cutpoints or grows the estimating-function
    norm. Members with missing y contribute nothing to the sums, but the
    recorded cluster size still sets the 1/n_i weight. Raises
    SeparationError when the scoring matrix's condition number exceeds 1e12.
    """
    p = _prepare(d, weighting)
    xd = _design(p)
    q = p.n_categories - 1
    xi = init.as_array().copy() if init is not None else _init_params(p)
    if init is not None and len(init.cutpoints) != q:
        raise ValueError("init has wrong number of cutpoints")

    scores, g, h = _score_pieces(xi, p, xd)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.cond(h) > _COND_LIMIT:
            raise SeparationError(
                f"scoring matrix condition number exceeds {_COND_LIMIT:g}"
            )
        delta = np.linalg.solve(h, g)
        g_norm = float(np.linalg.norm(g))
        applied = None
        for half in range(_MAX_HALVINGS + 1):
            cand = xi + delta * (0.5**half)
            if np.any(np.diff(cand[:q]) <= 0.0):
                continue
            try:
                pieces = _score_pieces(cand, p, xd)
            except NumericalError:
                continue
            if float(np.linalg.norm(pieces[1])) <= g_norm * (1.0 + 1e-2) or (
                half == _MAX_HALVINGS
            ):
                applied = delta * (0.5**half)
                xi = cand
                scores, g, h = pieces
                break
        if applied is None:
            break
        if float(np.max(np.abs(applied))) < tol:
            converged = True
            break

    cov = sandwich_variance(h, scores)
    return CwgeeFit(
        params=ParamVector.from_array(xi, q),
        robust_cov=cov,
        n_iterations=it,
        converged=converged,
        weighting=weighting,
        max_score=float(np.max(np.abs(g))),
    )
