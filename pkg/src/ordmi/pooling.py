"""Rubin's rules for multiply imputed fits and Monte Carlo summary metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

METRICS_COLUMNS = (
    "parameter",
    "method",
    "mean_est",
    "mean_se",
    "empirical_se",
    "rel_bias_pct",
    "cov_prob_pct",
    "mse",
    "n_reps_used",
)


@dataclass(frozen=True)
class PooledFit:
    """Combined point and variance estimates across M imputed-data fits.

    t_total = u_bar + (1 + 1/M) * b_between, the total covariance whose
    diagonal gives squared pooled standard errors.
    """

    q_bar: np.ndarray
    u_bar: np.ndarray
    b_between: np.ndarray
    t_total: np.ndarray
    m: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.t_total))

    def barnard_rubin_df(self) -> np.ndarray:
        """Small-sample degrees of freedom, per parameter (inf when B=0)."""
        b = np.diag(self.b_between)
        u = np.diag(self.u_bar)
        with np.errstate(divide="ignore"):
            r = (1.0 + 1.0 / self.m) * b / u
            return np.where(b > 0.0, (self.m - 1) * (1.0 + 1.0 / r) ** 2, np.inf)


def rubin_pool(estimates, covariances) -> PooledFit:
    """Pool M completed-data estimates and covariance matrices.

    Between-imputation covariance uses the M-1 divisor. Identical inputs
    give B = 0 and T = U-bar exactly.
    """
    q = np.asarray(estimates, dtype=float)
    if q.ndim != 2 or q.shape[0] < 2:
        raise ValueError("need at least M=2 estimate vectors")
    covs = np.asarray(covariances, dtype=float)
    if covs.shape != (q.shape[0], q.shape[1], q.shape[1]):
        raise ValueError("covariance stack shape mismatch")
    m = q.shape[0]
    q_bar = q.mean(axis=0)
    u_bar = covs.mean(axis=0)
    dev = q - q_bar
    b = (dev.T @ dev) / (m - 1)
    t = u_bar + (1.0 + 1.0 / m) * b
    return PooledFit(q_bar=q_bar, u_bar=u_bar, b_between=b, t_total=t, m=m)


@dataclass(frozen=True)
class MetricsRow:
    parameter: str
    method: str
    mean_est: float
    mean_se: float
    empirical_se: float
    rel_bias_pct: float
    cov_prob_pct: float
    mse: float
    n_reps_used: int

    def as_record(self) -> dict:
        return {c: getattr(self, c) for c in METRICS_COLUMNS}


def compute_metrics(
    estimates,
    ses,
    true_params,
    names,
    *,
    method: str = "",
    df=None,
) -> list[MetricsRow]:
    """Monte Carlo summaries over replications, one row per parameter.

    estimates and ses are (R, p) arrays over R replications. Relative bias
    is 100 * (mean_est - true) / |true|, so underestimation of a negative
    parameter is positive. Coverage uses mean +/- 1.96 * se by default;
    passing per-replication degrees of freedom ``df`` (R, p) switches to
    Student-t quantiles. A single replication yields empirical_se = 0.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    se = np.atleast_2d(np.asarray(ses, dtype=float))
    truth = np.asarray(true_params, dtype=float)
    if est.shape != se.shape or est.shape[1] != truth.shape[0]:
        raise ValueError("estimates, ses, and true_params shapes disagree")
    if np.any(truth == 0.0):
        raise ValueError("relative bias undefined for zero true parameter")
    r = est.shape[0]
    if r < 1:
        raise ValueError("need at least one replication")
    if df is None:
        crit = np.full_like(est, 1.959963984540054)
    else:
        from scipy.stats import t as t_dist

        dfa = np.atleast_2d(np.asarray(df, dtype=float))
        crit = np.where(np.isinf(dfa), 1.959963984540054, t_dist.ppf(0.975, dfa))
    mean_est = est.mean(axis=0)
    mean_se = se.mean(axis=0)
    emp = est.std(axis=0, ddof=1) if r > 1 else np.zeros(est.shape[1])
    rel = 100.0 * (mean_est - truth) / np.abs(truth)
    covered = np.abs(est - truth[None, :]) <= crit * se
    cov = 100.0 * covered.mean(axis=0)
    mse = np.mean((est - truth[None, :]) ** 2, axis=0)
    return [
        MetricsRow(
            parameter=names[j],
            method=method,
            mean_est=float(mean_est[j]),
            mean_se=float(mean_se[j]),
            empirical_se=float(emp[j]),
            rel_bias_pct=float(rel[j]),
            cov_prob_pct=float(cov[j]),
            mse=float(mse[j]),
            n_reps_used=r,
        )
        for j in range(est.shape[1])
    ]


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]
    scenario: dict = field(default_factory=dict)

    def write_csv(self, path: str, *, scenario_columns: tuple[str, ...] = ()) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(scenario_columns) + list(METRICS_COLUMNS))
            for row in self.rows:
                rec = row.as_record()
                writer.writerow(
                    [_fmt(self.scenario.get(c)) for c in scenario_columns]
                    + [_fmt(rec[c]) for c in METRICS_COLUMNS]
                )

    def to_json(self) -> str:
        return json.dumps(
            {"scenario": self.scenario, "rows": [r.as_record() for r in self.rows]},
            indent=2,
        )

    def select(self, *, parameter: str | None = None, method: str | None = None):
        rows = [
            r
            for r in self.rows
            if (parameter is None or r.parameter == parameter)
            and (method is None or r.method == method)
        ]
        return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)
