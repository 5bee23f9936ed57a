"""Deletion of values under MCAR / MAR / MNAR logistic response models.

Each variable's probability of being set missing follows

    P(missing) = expit(alpha0 + a1*x + a2*z + a3*y + a4*m1 + a5*m2 + a6*m3)

evaluated on the complete (pre-deletion) values. The intercept alpha0 is
calibrated on a pilot dataset so the average probability matches a target
rate; the mechanism label constrains which coefficients may be active
(MCAR: none; MAR: anything but the coefficient on y; MNAR: the coefficient
on y is active).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import ClusteredDataset, MemberTable, member_table, with_codes
from .errors import CalibrationError, ConfigError, DataError

MECHANISMS = ("mcar", "mar", "mnar")

# Default magnitude of active non-intercept coefficients.
DEFAULT_ALPHA_MAGNITUDE = 0.2

# Coefficient order: (x, z, y, m1, m2, m3); index of the y coefficient.
_Y_INDEX = 2


def default_alpha(mechanism: str, magnitude: float = DEFAULT_ALPHA_MAGNITUDE):
    """Default coefficient vector for a mechanism label."""
    if mechanism == "mcar":
        return (0.0,) * 6
    if mechanism == "mar":
        return (magnitude, magnitude, 0.0, magnitude, magnitude, magnitude)
    if mechanism == "mnar":
        return (magnitude,) * 6
    raise ConfigError(f"unknown mechanism {mechanism!r}")


def classify_mechanism(alpha) -> str:
    """Mechanism label implied by a coefficient vector."""
    alpha = tuple(float(a) for a in alpha)
    if alpha[_Y_INDEX] != 0.0:
        return "mnar"
    if any(a != 0.0 for a in alpha):
        return "mar"
    return "mcar"


@dataclass(frozen=True)
class MissingnessSpec:
    """Scenario-level description of the deletion process.

    ``alpha`` holds the six outcome-model coefficients (x, z, y, m1, m2, m3);
    None selects the mechanism's default pattern. ``alpha0`` is filled in by
    calibration. Auxiliary variables are deleted completely at random at
    ``aux_rates``.
    """

    mechanism: str
    target_rate: float
    aux_rates: tuple[float, float, float] = (0.3, 0.3, 0.1)
    alpha: tuple[float, ...] | None = None
    alpha0: float | None = None

    def __post_init__(self) -> None:
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"mechanism must be one of {MECHANISMS}")
        if not 0.0 <= self.target_rate < 1.0:
            raise ConfigError("target_rate must lie in [0, 1)")
        for r in self.aux_rates:
            if not 0.0 <= r < 1.0:
                raise ConfigError("aux rates must lie in [0, 1)")
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.mechanism))
        else:
            object.__setattr__(
                self, "alpha", tuple(float(a) for a in self.alpha)
            )
            if len(self.alpha) != 6:
                raise ConfigError("alpha must have six coefficients")
            implied = classify_mechanism(self.alpha)
            if implied != self.mechanism:
                raise ConfigError(
                    f"alpha pattern implies {implied!r}, declared {self.mechanism!r}"
                )


@dataclass(frozen=True)
class VariableRule:
    """Calibrated deletion model for a single variable."""

    alpha0: float
    alpha: tuple[float, ...]


def _member_scores(table: MemberTable, alpha) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    ci = table.cluster_index
    vals = np.column_stack(
        [
            table.x[ci],
            table.z[ci],
            table.codes[:, 0],
            table.codes[:, 1],
            table.codes[:, 2],
            table.codes[:, 3],
        ]
    ).astype(float)
    return vals @ a


def missing_prob(x, z, y, m1, m2, m3, spec) -> float:
    """Deletion probability for one member under a calibrated spec.

    ``spec`` is anything with ``alpha0`` and ``alpha`` attributes
    (MissingnessSpec after calibration, or a VariableRule).
    """
    if spec.alpha0 is None:
        raise ConfigError("spec has no calibrated alpha0")
    s = float(np.dot(spec.alpha, (x, z, y, m1, m2, m3)))
    return float(expit(spec.alpha0 + s))


def calibrate_alpha0(
    pilot: ClusteredDataset | MemberTable,
    alpha,
    target_rate: float,
    *,
    lo: float = -20.0,
    hi: float = 20.0,
    tol: float = 1e-10,
) -> float:
    """Find alpha0 so the pilot-average deletion probability hits target_rate.

    The mean of expit(alpha0 + s) is strictly increasing in alpha0, so plain
    bisection on [lo, hi] converges; a CalibrationError is raised when the
    target is not bracketed. When the member scores are constant the closed
    form logit(target) - s is returned exactly.
    """
    if not 0.0 < target_rate < 1.0:
        raise ValueError("target_rate must lie strictly inside (0, 1)")
    table = pilot if isinstance(pilot, MemberTable) else member_table(pilot)
    if np.any(table.codes < 0):
        raise DataError("pilot dataset must be complete")
    s = _member_scores(table, alpha)
    if np.ptp(s) == 0.0:
        return float(logit(target_rate) - s[0])

    def mean_rate(a0: float) -> float:
        return float(np.mean(expit(a0 + s)))

    f_lo, f_hi = mean_rate(lo) - target_rate, mean_rate(hi) - target_rate
    if f_lo > 0.0 or f_hi < 0.0:
        raise CalibrationError(
            f"target rate {target_rate} not attainable for alpha0 in [{lo}, {hi}]"
        )
    a, b = lo, hi
    while b - a > tol:
        mid = 0.5 * (a + b)
        if mean_rate(mid) - target_rate <= 0.0:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def build_rules(
    spec: MissingnessSpec, pilot: ClusteredDataset | MemberTable
) -> dict[str, VariableRule]:
    """Calibrate per-variable deletion rules from a MissingnessSpec.

    The outcome rule uses ``spec.alpha``; auxiliaries are MCAR at their
    target rates (closed-form intercepts). Variables with rate 0 get no
    rule.
    """
    table = pilot if isinstance(pilot, MemberTable) else member_table(pilot)
    rules: dict[str, VariableRule] = {}
    if spec.target_rate > 0.0:
        a0 = spec.alpha0
        if a0 is None:
            a0 = calibrate_alpha0(table, spec.alpha, spec.target_rate)
        rules["y"] = VariableRule(float(a0), tuple(spec.alpha))
    for name, rate in zip(("m1", "m2", "m3"), spec.aux_rates):
        if rate > 0.0:
            rules[name] = VariableRule(float(logit(rate)), (0.0,) * 6)
    return rules


def apply_missingness(
    d: ClusteredDataset,
    rules: dict[str, VariableRule],
    rng: np.random.Generator,
) -> ClusteredDataset:
    """Delete values according to calibrated per-variable rules.

    All probabilities are computed from the complete input before any
    deletion; cluster sizes and covariates are untouched. The input must be
    complete.
    """
    table = member_table(d)
    if np.any(table.codes < 0):
        raise DataError("apply_missingness requires a complete dataset")
    order = ("y", "m1", "m2", "m3")
    codes = table.codes.copy()
    for col, name in enumerate(order):
        rule = rules.get(name)
        if rule is None:
            continue
        p = expit(rule.alpha0 + _member_scores(table, rule.alpha))
        drop = rng.random(table.n_members) < p
        codes[drop, col] = -1
    return with_codes(d, codes)
