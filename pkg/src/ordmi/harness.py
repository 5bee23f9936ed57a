"""Scenario orchestration: replications, scenario grids, dataset analysis.

Randomness is organized as counter-based streams derived from one master
seed: every (stage, replication, method) triple gets its own independent
generator, so adding methods or replications never perturbs existing
streams and results are identical for any worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cwgee import CwgeeFit, cwgee_solve
from .data import ClusteredDataset, complete_cases
from .datagen import GenConfig, simulate_dataset
from .errors import ConfigError, DataError, NumericalError, OrdmiError
from .impute_fcs import FcsSpec, fcs_impute
from .impute_jm import JmSpec, jm_impute
from .missingness import MissingnessSpec, VariableRule, apply_missingness, build_rules
from .pooling import MetricsTable, compute_metrics, rubin_pool

METHODS = ("full", "cca", "fcs", "fcs_cs", "jm", "jm_cs")

_STAGES = {"pilot": 0, "simulate": 1, "ampute": 2, "impute": 3, "analyze": 4}
_METHOD_IDS = {m: i for i, m in enumerate(METHODS)}


def stream(
    master_seed: int, stage: str, rep: int = 0, method: str = ""
) -> np.random.Generator:
    """Independent generator for one (stage, replication, method) slot."""
    key = (_STAGES[stage], rep, _METHOD_IDS.get(method, 0))
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass(frozen=True)
class ScenarioConfig:
    gen: GenConfig
    missingness: MissingnessSpec
    methods: tuple[str, ...] = METHODS
    jm: JmSpec = field(default_factory=JmSpec)
    fcs: FcsSpec = field(default_factory=FcsSpec)
    n_replications: int = 200
    master_seed: int = 0
    pilot_clusters: int = 2000
    cca_original_sizes: bool = False

    def __post_init__(self) -> None:
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate method names")
        if self.n_replications < 1:
            raise ConfigError("n_replications must be >= 1")
        if self.pilot_clusters < 1:
            raise ConfigError("pilot_clusters must be >= 1")

    def scenario_fields(self) -> dict:
        return {
            "n_clusters": self.gen.n_clusters,
            "tau": self.gen.tau,
            "nu": self.gen.nu,
            "phi": self.gen.phi,
            "mechanism": self.missingness.mechanism,
            "target_rate": self.missingness.target_rate,
            "n_replications": self.n_replications,
            "master_seed": self.master_seed,
        }


@dataclass(frozen=True)
class MethodResult:
    method: str
    ok: bool
    converged: bool
    estimates: np.ndarray | None = None
    ses: np.ndarray | None = None
    error: str = ""


def calibrate_scenario(cfg: ScenarioConfig) -> dict[str, VariableRule]:
    """Calibrate per-variable deletion rules on the scenario's pilot data."""
    spec = cfg.missingness
    if spec.target_rate == 0.0 and all(r == 0.0 for r in spec.aux_rates):
        return {}
    pilot = simulate_dataset(
        replace(cfg.gen, n_clusters=cfg.pilot_clusters),
        stream(cfg.master_seed, "pilot"),
    )
    return build_rules(spec, pilot)


def _fit_result(method: str, fit: CwgeeFit) -> MethodResult:
    return MethodResult(
        method=method,
        ok=True,
        converged=fit.converged,
        estimates=fit.params.as_array(),
        ses=fit.se,
    )


def _pooled_result(method: str, fits: list[CwgeeFit]) -> MethodResult:
    pooled = rubin_pool(
        [f.params.as_array() for f in fits], [f.robust_cov for f in fits]
    )
    return MethodResult(
        method=method,
        ok=True,
        converged=all(f.converged for f in fits),
        estimates=pooled.q_bar,
        ses=pooled.se,
    )


def run_replication(
    cfg: ScenarioConfig,
    rep: int,
    rules: dict[str, VariableRule],
) -> dict[str, MethodResult]:
    """Simulate, delete, and run every configured method for one replication."""
    complete = simulate_dataset(cfg.gen, stream(cfg.master_seed, "simulate", rep))
    if rules:
        amputed = apply_missingness(
            complete, rules, stream(cfg.master_seed, "ampute", rep)
        )
    else:
        amputed = complete

    results: dict[str, MethodResult] = {}
    for method in cfg.methods:
        try:
            results[method] = _run_method(cfg, method, rep, complete, amputed)
        except (OrdmiError, ValueError, np.linalg.LinAlgError) as exc:
            results[method] = MethodResult(
                method=method, ok=False, converged=False, error=str(exc)
            )
    return results


def _run_method(
    cfg: ScenarioConfig,
    method: str,
    rep: int,
    complete: ClusteredDataset,
    amputed: ClusteredDataset,
) -> MethodResult:
    if method == "full":
        return _fit_result(method, cwgee_solve(complete))
    if method == "cca":
        reduced = complete_cases(
            amputed, keep_original_sizes=cfg.cca_original_sizes
        )
        return _fit_result(method, cwgee_solve(reduced))
    rng = stream(cfg.master_seed, "impute", rep, method)
    if method in ("fcs", "fcs_cs"):
        spec = replace(cfg.fcs, include_cluster_size=method.endswith("_cs"))
        imputed = fcs_impute(amputed, spec, rng)
    elif method in ("jm", "jm_cs"):
        spec = replace(cfg.jm, include_cluster_size=method.endswith("_cs"))
        imputed = jm_impute(amputed, spec, rng)
    else:
        raise ConfigError(f"unknown method {method!r}")
    fits = [cwgee_solve(d) for d in imputed]
    return _pooled_result(method, fits)


def _replication_worker(args) -> tuple[int, dict[str, MethodResult]]:
    cfg, rep, rules = args
    return rep, run_replication(cfg, rep, rules)


def run_scenario(
    cfg: ScenarioConfig,
    *,
    jobs: int = 1,
    rules: dict[str, VariableRule] | None = None,
    progress=None,
) -> MetricsTable:
    """Run all replications and summarize each method's estimates.

    Replications whose fit did not converge (for pooled methods: any
    component fit) are excluded from the metrics; the n_reps_used column
    reports the survivors. A method failing in more than half of the
    replications aborts the scenario.
    """
    if rules is None:
        rules = calibrate_scenario(cfg)
    tasks = [(cfg, rep, rules) for rep in range(cfg.n_replications)]
    by_rep: dict[int, dict[str, MethodResult]] = {}
    if jobs <= 1:
        for t in tasks:
            rep, res = _replication_worker(t)
            by_rep[rep] = res
            if progress is not None:
                progress(rep)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rep, res in pool.map(_replication_worker, tasks, chunksize=1):
                by_rep[rep] = res
                if progress is not None:
                    progress(rep)

    names = cfg.gen.true_params.names()
    truth = cfg.gen.true_params.as_array()
    rows = []
    for method in cfg.methods:
        kept_est, kept_se = [], []
        n_failed = 0
        for rep in range(cfg.n_replications):
            r = by_rep[rep][method]
            if r.ok and r.converged:
                kept_est.append(r.estimates)
                kept_se.append(r.ses)
            else:
                n_failed += 1
        if n_failed > 0.5 * cfg.n_replications:
            raise NumericalError(
                f"method {method!r} failed in {n_failed}/{cfg.n_replications} "
                "replications"
            )
        rows.extend(
            compute_metrics(
                np.asarray(kept_est),
                np.asarray(kept_se),
                truth,
                names,
                method=method,
            )
        )
    return MetricsTable(tuple(rows), scenario=cfg.scenario_fields())


GRID_FIELDS = ("n_clusters", "tau", "nu", "phi", "target_rate", "mechanism")


def grid_cells(base: ScenarioConfig, grid: dict[str, list]) -> list[ScenarioConfig]:
    """Expand a grid mapping into scenario configs (cartesian product)."""
    for key in grid:
        if key not in GRID_FIELDS:
            raise ConfigError(f"grid field {key!r} not one of {GRID_FIELDS}")
    keys = list(grid.keys())
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        gen_over = {k: v for k, v in overrides.items() if k in ("n_clusters", "tau", "nu", "phi")}
        mis_over = {k: v for k, v in overrides.items() if k in ("target_rate", "mechanism")}
        gen = replace(base.gen, **gen_over) if gen_over else base.gen
        if mis_over:
            mis = MissingnessSpec(
                mechanism=mis_over.get("mechanism", base.missingness.mechanism),
                target_rate=mis_over.get("target_rate", base.missingness.target_rate),
                aux_rates=base.missingness.aux_rates,
                alpha=None,
            )
        else:
            mis = base.missingness
        cells.append(replace(base, gen=gen, missingness=mis))
    return cells


def run_grid(
    base: ScenarioConfig, grid: dict[str, list], *, jobs: int = 1, progress=None
) -> list[MetricsTable]:
    """Run every grid cell; the same master seed drives each cell's streams
    (common random numbers across cells)."""
    tables = []
    for cell in grid_cells(base, grid):
        tables.append(run_scenario(cell, jobs=jobs, progress=progress))
    return tables


def write_grid_csv(tables: list[MetricsTable], path: str) -> None:
    """Combined long-format CSV over all cells."""
    import csv

    from .pooling import METRICS_COLUMNS, _fmt

    scen_cols = ("n_clusters", "tau", "nu", "phi", "mechanism", "target_rate")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(scen_cols) + list(METRICS_COLUMNS))
        for table in tables:
            for row in table.rows:
                rec = row.as_record()
                writer.writerow(
                    [_fmt(table.scenario.get(c)) for c in scen_cols]
                    + [_fmt(rec[c]) for c in METRICS_COLUMNS]
                )


@dataclass(frozen=True)
class AnalyzeRow:
    method: str
    parameter: str
    estimate: float
    se: float


def analyze_dataset(
    d: ClusteredDataset,
    methods: tuple[str, ...],
    *,
    jm: JmSpec | None = None,
    fcs: FcsSpec | None = None,
    master_seed: int = 0,
    cca_original_sizes: bool = False,
) -> list[AnalyzeRow]:
    """Apply each method to one observed dataset; per-coefficient est and SE.

    'full' fits the data as given and is only valid when y is complete;
    'cca' reduces to complete cases; imputation methods pool M fits by
    Rubin's rules.
    """
    jm = jm or JmSpec()
    fcs = fcs or FcsSpec()
    has_missing_y = any(m.y is None for c in d.clusters for m in c.members)
    rows: list[AnalyzeRow] = []
    from .cwgee import cwgee_solve as solve

    names = None
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
        if method == "full":
            if has_missing_y:
                raise DataError("method 'full' requires a complete outcome")
            fit = solve(d)
            est, se = fit.params.as_array(), fit.se
            names = fit.params.names()
        elif method == "cca":
            fit = solve(complete_cases(d, keep_original_sizes=cca_original_sizes))
            est, se = fit.params.as_array(), fit.se
            names = fit.params.names()
        else:
            rng = stream(master_seed, "impute", 0, method)
            if method.startswith("fcs"):
                spec = replace(fcs, include_cluster_size=method.endswith("_cs"))
                imputed = fcs_impute(d, spec, rng)
            else:
                spec = replace(jm, include_cluster_size=method.endswith("_cs"))
                imputed = jm_impute(d, spec, rng)
            fits = [solve(di) for di in imputed]
            pooled = rubin_pool(
                [f.params.as_array() for f in fits],
                [f.robust_cov for f in fits],
            )
            est, se = pooled.q_bar, pooled.se
            names = fits[0].params.names()
        rows.extend(
            AnalyzeRow(method, names[j], float(est[j]), float(se[j]))
            for j in range(len(names))
        )
    return rows
