"""YAML configuration loading for the command-line tools.

The file is a nested mapping mirroring the config dataclasses:

    gen:
      n_clusters: 50
      tau: 0.3
      nu: 0.1
      phi: 0.6
      max_size: 28
      true_params: {cutpoints: [-0.4, 0.8, 1.6], slopes: [-0.2, -0.5]}
    missingness:
      mechanism: mar
      target_rate: 0.2
      aux_rates: [0.3, 0.3, 0.1]
    methods: [full, cca, fcs, fcs_cs, jm, jm_cs]
    jm:  {m_imputations: 10, burn_in: 500, between: 100}
    fcs: {m_imputations: 10, burn_in: 500, between: 100}
    n_replications: 200
    master_seed: 20260819
    grid: {nu: [0.0, 0.1, 0.4]}        # only read by the grid command
"""

from __future__ import annotations

from dataclasses import asdict

import yaml

from .data import ParamVector
from .datagen import GenConfig
from .errors import ConfigError
from .harness import ScenarioConfig
from .impute_fcs import FcsSpec
from .impute_jm import JmSpec
from .missingness import MissingnessSpec, VariableRule

_TOP_KEYS = {
    "gen",
    "missingness",
    "methods",
    "jm",
    "fcs",
    "n_replications",
    "master_seed",
    "pilot_clusters",
    "cca_original_sizes",
    "grid",
}


def _require_mapping(obj, name: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{name} must be a mapping, got {type(obj).__name__}")
    return obj


def _build(cls, section: dict, name: str):
    try:
        return cls(**section)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}")
    except ValueError as exc:
        raise ConfigError(f"bad {name} section: {exc}")


def load_config(path: str) -> tuple[ScenarioConfig, dict | None]:
    """Parse a scenario config file; returns (config, grid-or-None)."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    raw = _require_mapping(raw, "config file")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "gen" not in raw:
        raise ConfigError("config is missing the 'gen' section")

    gen_raw = dict(_require_mapping(raw["gen"], "gen"))
    if "true_params" in gen_raw:
        tp = _require_mapping(gen_raw["true_params"], "gen.true_params")
        gen_raw["true_params"] = _build(
            ParamVector,
            {
                "cutpoints": tuple(tp.get("cutpoints", ())),
                "slopes": tuple(tp.get("slopes", ())),
            },
            "gen.true_params",
        )
    if "aux_cutpoints" in gen_raw:
        gen_raw["aux_cutpoints"] = tuple(
            tuple(c) for c in gen_raw["aux_cutpoints"]
        )
    gen = _build(GenConfig, gen_raw, "gen")

    mis_raw = dict(_require_mapping(raw.get("missingness", {}), "missingness"))
    if not mis_raw:
        mis_raw = {"mechanism": "mcar", "target_rate": 0.0, "aux_rates": (0.0,) * 3}
    if "aux_rates" in mis_raw:
        mis_raw["aux_rates"] = tuple(mis_raw["aux_rates"])
    if "alpha" in mis_raw and mis_raw["alpha"] is not None:
        mis_raw["alpha"] = tuple(mis_raw["alpha"])
    missingness = _build(MissingnessSpec, mis_raw, "missingness")

    jm = _build(JmSpec, dict(raw.get("jm") or {}), "jm")
    fcs_raw = dict(raw.get("fcs") or {})
    if "visit_order" in fcs_raw:
        fcs_raw["visit_order"] = tuple(fcs_raw["visit_order"])
    fcs = _build(FcsSpec, fcs_raw, "fcs")

    cfg = _build(
        ScenarioConfig,
        {
            "gen": gen,
            "missingness": missingness,
            "methods": tuple(raw.get("methods") or ("full", "cca", "fcs", "fcs_cs", "jm", "jm_cs")),
            "jm": jm,
            "fcs": fcs,
            "n_replications": int(raw.get("n_replications", 200)),
            "master_seed": int(raw.get("master_seed", 0)),
            "pilot_clusters": int(raw.get("pilot_clusters", 2000)),
            "cca_original_sizes": bool(raw.get("cca_original_sizes", False)),
        },
        "scenario",
    )
    grid = raw.get("grid")
    if grid is not None:
        grid = {k: list(v) for k, v in _require_mapping(grid, "grid").items()}
    return cfg, grid


def dump_config(
    cfg: ScenarioConfig, rules: dict[str, VariableRule] | None = None
) -> str:
    """Resolved config as YAML, including calibrated intercepts when given."""
    out = {
        "gen": {
            "n_clusters": cfg.gen.n_clusters,
            "tau": cfg.gen.tau,
            "nu": cfg.gen.nu,
            "phi": cfg.gen.phi,
            "max_size": cfg.gen.max_size,
            "x_sd": cfg.gen.x_sd,
            "z_prob": cfg.gen.z_prob,
            "true_params": {
                "cutpoints": list(cfg.gen.true_params.cutpoints),
                "slopes": list(cfg.gen.true_params.slopes),
            },
            "aux_cutpoints": [list(c) for c in cfg.gen.aux_cutpoints],
        },
        "missingness": {
            "mechanism": cfg.missingness.mechanism,
            "target_rate": cfg.missingness.target_rate,
            "aux_rates": list(cfg.missingness.aux_rates),
            "alpha": list(cfg.missingness.alpha),
        },
        "methods": list(cfg.methods),
        "jm": asdict(cfg.jm),
        "fcs": {**asdict(cfg.fcs), "visit_order": list(cfg.fcs.visit_order)},
        "n_replications": cfg.n_replications,
        "master_seed": cfg.master_seed,
        "pilot_clusters": cfg.pilot_clusters,
        "cca_original_sizes": cfg.cca_original_sizes,
    }
    if rules is not None:
        out["calibrated"] = {
            name: {"alpha0": rule.alpha0, "alpha": list(rule.alpha)}
            for name, rule in sorted(rules.items())
        }
    return yaml.safe_dump(out, sort_keys=False)
