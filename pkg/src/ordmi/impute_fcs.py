"""Fully conditional multiple imputation via cumulative-probit Gibbs sampling.

Each incomplete variable is visited in turn and refilled from a
random-intercept cumulative probit model whose predictors are the current
completed values of the other three variables (entered as integer category
codes), the cluster covariates x and z, and optionally the standardized
cluster size. Latent responses and thresholds follow the classic
data-augmentation scheme: observed cells constrain their latent to the
interval between the bracketing thresholds, missing cells' latents are
unconstrained, and free thresholds are drawn from their uniform full
conditionals. Identification fixes the first threshold at 0 and the latent
residual variance at 1; the regression keeps an intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data import ClusteredDataset, MemberTable, member_table, with_codes
from .errors import ChainError, ConfigError, IdentifiabilityError
from .samplers import inv_gamma, mvn_from_normal_eq, trunc_norm

VAR_NAMES = ("y", "m1", "m2", "m3")

_RIDGE = 1e-8
_IG_SHAPE = 0.5
_IG_SCALE = 0.5
_MIN_GAP = 1e-10


@dataclass(frozen=True)
class FcsSpec:
    m_imputations: int = 10
    burn_in: int = 500
    between: int = 100
    include_cluster_size: bool = False
    visit_order: tuple[str, ...] = VAR_NAMES

    def __post_init__(self) -> None:
        if self.m_imputations < 2:
            raise ConfigError("m_imputations must be >= 2")
        if self.burn_in < 1 or self.between < 1:
            raise ConfigError("burn_in and between must be >= 1")
        if sorted(self.visit_order) != sorted(VAR_NAMES):
            raise ConfigError(f"visit_order must permute {VAR_NAMES}")


def fcs_latent_to_category(values, thresholds) -> np.ndarray:
    """Map latent values to categories given thresholds (first one is 0).

    Category c corresponds to the interval (tau_{c-1}, tau_c]; values at a
    boundary resolve to the lower category.
    """
    tau = np.asarray(thresholds, dtype=float)
    if tau.size < 1 or tau[0] != 0.0 or np.any(np.diff(tau) <= 0.0):
        raise ValueError("thresholds must start at 0 and increase strictly")
    vals = np.asarray(values, dtype=float)
    return (np.searchsorted(tau, vals, side="left") + 1).astype(np.int64)


@dataclass
class FcsState:
    codes: np.ndarray  # (n_members, 4) current completed categories
    coefs: list[np.ndarray]  # per variable
    thresholds: list[np.ndarray]  # per variable, [0] == 0
    u: list[np.ndarray]  # per variable, (n_clusters,)
    var_u: list[float]
    sweep: int = 0


@dataclass(frozen=True)
class _FcsData:
    table: MemberTable
    nstd: np.ndarray | None  # standardized sizes per cluster, None if unused
    missing: tuple[np.ndarray, ...]  # per variable, bool over members


def _standardized_sizes(table: MemberTable) -> np.ndarray | None:
    s = table.size.astype(float)
    sd = s.std()
    if sd == 0.0:
        return None
    return (s - s.mean()) / sd


def _check_identified(table: MemberTable) -> None:
    for vi, name in enumerate(VAR_NAMES):
        col = table.codes[:, vi]
        obs = col[col > 0]
        need = set(range(1, table.n_cat[vi] + 1))
        have = set(int(v) for v in np.unique(obs))
        gap = sorted(need - have)
        if gap:
            raise IdentifiabilityError(
                f"variable {name}: categories {gap} never observed"
            )


def _prepare(d: ClusteredDataset, spec: FcsSpec) -> _FcsData:
    table = member_table(d)
    _check_identified(table)
    nstd = _standardized_sizes(table) if spec.include_cluster_size else None
    missing = tuple(table.codes[:, vi] < 0 for vi in range(4))
    return _FcsData(table=table, nstd=nstd, missing=missing)


def _init_state(data: _FcsData, rng: np.random.Generator) -> FcsState:
    table = data.table
    codes = table.codes.copy()
    thresholds: list[np.ndarray] = []
    for vi in range(4):
        col = table.codes[:, vi]
        obs = col[col > 0]
        c = table.n_cat[vi]
        counts = np.bincount(obs, minlength=c + 1)[1:].astype(float)
        probs = counts / counts.sum()
        miss = data.missing[vi]
        if np.any(miss):
            draws = rng.choice(np.arange(1, c + 1), size=int(miss.sum()), p=probs)
            codes[miss, vi] = draws
        cum = np.clip(np.cumsum(probs)[:-1], 1e-6, 1.0 - 1e-6)
        tau = ndtri(cum)
        thresholds.append(tau - tau[0])
    n_pred = 7 if data.nstd is not None else 6
    return FcsState(
        codes=codes,
        coefs=[np.zeros(n_pred) for _ in range(4)],
        thresholds=thresholds,
        u=[np.zeros(table.n_clusters) for _ in range(4)],
        var_u=[1.0] * 4,
    )


def _design(data: _FcsData, state: FcsState, vi: int) -> np.ndarray:
    table = data.table
    ci = table.cluster_index
    others = [j for j in range(4) if j != vi]
    cols = [np.ones(table.n_members)]
    cols += [state.codes[:, j].astype(float) for j in others]
    cols += [table.x[ci], table.z[ci]]
    if data.nstd is not None:
        cols.append(data.nstd[ci])
    return np.column_stack(cols)


def fcs_update_variable(
    state: FcsState,
    data: _FcsData,
    vi: int,
    rng: np.random.Generator,
) -> None:
    """One Gibbs update of variable vi's model and its missing cells."""
    table = data.table
    ci = table.cluster_index
    c = table.n_cat[vi]
    obs_cat = table.codes[:, vi]
    miss = data.missing[vi]
    tau = state.thresholds[vi]
    # Edge vector indexed by category: (-inf, 0, tau_2, ..., +inf)
    full_edges = np.concatenate([[-np.inf], tau, [np.inf]])

    x = _design(data, state, vi)
    lin = x @ state.coefs[vi] + state.u[vi][ci]
    safe = np.where(obs_cat > 0, obs_cat, 1)
    lo = np.where(miss, -np.inf, full_edges[safe - 1])
    hi = np.where(miss, np.inf, full_edges[safe])
    ystar = trunc_norm(rng, lin, 1.0, lo, hi)

    a = x.T @ x + _RIDGE * np.eye(x.shape[1])
    b = x.T @ (ystar - state.u[vi][ci])
    state.coefs[vi] = mvn_from_normal_eq(rng, a, b)

    resid = ystar - x @ state.coefs[vi]
    sums = np.bincount(ci, weights=resid, minlength=table.n_clusters)
    prec = table.count.astype(float) + 1.0 / state.var_u[vi]
    state.u[vi] = sums / prec + rng.standard_normal(table.n_clusters) / np.sqrt(prec)

    n_cl = table.n_clusters
    ssq = float(state.u[vi] @ state.u[vi])
    state.var_u[vi] = inv_gamma(rng, _IG_SHAPE + 0.5 * n_cl, _IG_SCALE + 0.5 * ssq)

    if c > 2:
        tau = tau.copy()
        for j in range(1, c - 1):  # free thresholds tau_2 .. tau_{C-1}
            cat = j + 1
            below = ystar[(obs_cat == cat)]
            above = ystar[(obs_cat == cat + 1)]
            lo_t = max(float(below.max()), float(tau[j - 1]))
            hi_t = float(above.min())
            if j + 1 < c - 1:
                hi_t = min(hi_t, float(tau[j + 1]))
            tau[j] = lo_t + rng.random() * (hi_t - lo_t)
        if np.any(np.diff(tau) < _MIN_GAP):
            raise ChainError(
                f"threshold collapse for {VAR_NAMES[vi]} at sweep {state.sweep}: {tau}"
            )
        state.thresholds[vi] = tau

    if np.any(miss):
        state.codes[miss, vi] = fcs_latent_to_category(
            ystar[miss], state.thresholds[vi]
        )


def fcs_impute(
    d: ClusteredDataset,
    spec: FcsSpec,
    rng: np.random.Generator | int,
    *,
    trace_path: str | None = None,
) -> list[ClusteredDataset]:
    """Produce M completed datasets by chained cumulative-probit imputation.

    Missing cells are initialized from the observed marginal frequencies;
    after burn_in sweeps a completed dataset is retained every ``between``
    sweeps. Fully observed variables are skipped as targets (their codes
    still serve as predictors). A complete input short-circuits to M copies.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    data = _prepare(d, spec)
    if not any(np.any(m) for m in data.missing):
        return [d] * spec.m_imputations

    state = _init_state(data, rng)
    order = [VAR_NAMES.index(name) for name in spec.visit_order]
    order = [vi for vi in order if bool(np.any(data.missing[vi]))]

    trace_rows: list[tuple] = []
    out: list[ClusteredDataset] = []
    total = spec.burn_in + (spec.m_imputations - 1) * spec.between + 1
    for sweep in range(1, total + 1):
        state.sweep = sweep
        for vi in order:
            fcs_update_variable(state, data, vi, rng)
            if trace_path is not None:
                trace_rows.append(
                    (
                        sweep,
                        VAR_NAMES[vi],
                        state.coefs[vi].copy(),
                        state.thresholds[vi].copy(),
                        state.var_u[vi],
                    )
                )
        retained = sweep > spec.burn_in and (
            (sweep - spec.burn_in - 1) % spec.between == 0
        )
        if retained:
            out.append(with_codes(d, state.codes.copy()))

    if trace_path is not None:
        _write_trace(trace_path, trace_rows)
    assert len(out) == spec.m_imputations
    return out


def _write_trace(path: str, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep", "variable", "name", "value"])
        for sweep, var, coefs, tau, var_u in rows:
            for i, v in enumerate(coefs):
                writer.writerow([sweep, var, f"coef_{i}", format(v, ".10g")])
            for i, v in enumerate(tau):
                writer.writerow([sweep, var, f"tau_{i + 1}", format(v, ".10g")])
            writer.writerow([sweep, var, "var_u", format(var_u, ".10g")])
