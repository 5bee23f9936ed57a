"""Clustered ordinal outcomes: simulation with informative cluster size,
missingness, multiple imputation, and cluster-weighted GEE estimation."""

from .cwgee import (
    CwgeeFit,
    binary_expand,
    cwgee_solve,
    marginal_means,
    multinomial_cov,
    sandwich_variance,
)
from .data import (
    DEFAULT_TRUE_PARAMS,
    Cluster,
    ClusteredDataset,
    Member,
    ParamVector,
    complete_cases,
    ics_diagnostic,
    read_csv,
    validate_dataset,
    write_csv,
)
from .datagen import (
    GenConfig,
    bridge_density,
    bridge_quantile,
    gen_cluster_size,
    gen_ordinal_outcome,
    sample_bridge_cluster,
    simulate_dataset,
)
from .harness import (
    METHODS,
    ScenarioConfig,
    analyze_dataset,
    calibrate_scenario,
    run_grid,
    run_replication,
    run_scenario,
    stream,
)
from .impute_fcs import FcsSpec, fcs_impute, fcs_latent_to_category
from .impute_jm import (
    JmSpec,
    jm_category_to_latent_constraint,
    jm_impute,
    jm_latent_to_category,
)
from .missingness import (
    MissingnessSpec,
    apply_missingness,
    build_rules,
    calibrate_alpha0,
    classify_mechanism,
    missing_prob,
)
from .pooling import MetricsRow, MetricsTable, PooledFit, compute_metrics, rubin_pool

__version__ = "0.1.0"

__all__ = [
    "CwgeeFit",
    "binary_expand",
    "cwgee_solve",
    "marginal_means",
    "multinomial_cov",
    "sandwich_variance",
    "DEFAULT_TRUE_PARAMS",
    "Cluster",
    "ClusteredDataset",
    "Member",
    "ParamVector",
    "complete_cases",
    "ics_diagnostic",
    "read_csv",
    "validate_dataset",
    "write_csv",
    "GenConfig",
    "bridge_density",
    "bridge_quantile",
    "gen_cluster_size",
    "gen_ordinal_outcome",
    "sample_bridge_cluster",
    "simulate_dataset",
    "METHODS",
    "ScenarioConfig",
    "analyze_dataset",
    "calibrate_scenario",
    "run_grid",
    "run_replication",
    "run_scenario",
    "stream",
    "FcsSpec",
    "fcs_impute",
    "fcs_latent_to_category",
    "JmSpec",
    "jm_category_to_latent_constraint",
    "jm_impute",
    "jm_latent_to_category",
    "MissingnessSpec",
    "apply_missingness",
    "build_rules",
    "calibrate_alpha0",
    "classify_mechanism",
    "missing_prob",
    "MetricsRow",
    "MetricsTable",
    "PooledFit",
    "compute_metrics",
    "rubin_pool",
]
