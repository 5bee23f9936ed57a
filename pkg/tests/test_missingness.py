import numpy as np
import pytest
from scipy.special import expit, logit

from ordmi.data import member_table
from ordmi.datagen import GenConfig, simulate_dataset
from ordmi.errors import CalibrationError, ConfigError, DataError
from ordmi.missingness import (
    DEFAULT_ALPHA_MAGNITUDE,
    MECHANISMS,
    MissingnessSpec,
    VariableRule,
    apply_missingness,
    build_rules,
    calibrate_alpha0,
    classify_mechanism,
    default_alpha,
    missing_prob,
)

from conftest import mk_cluster, mk_dataset


def pilot_dataset(seed=0, n=400):
    return simulate_dataset(GenConfig(n_clusters=n, tau=0.3, nu=0.1), seed)


class TestMechanismPatterns:
    def test_defaults(self):
        m = DEFAULT_ALPHA_MAGNITUDE
        assert default_alpha("mcar") == (0.0,) * 6
        assert default_alpha("mar") == (m, m, 0.0, m, m, m)
        assert default_alpha("mnar") == (m,) * 6
        with pytest.raises(ConfigError):
            default_alpha("nmar")

    def test_classify(self):
        assert classify_mechanism((0, 0, 0, 0, 0, 0)) == "mcar"
        assert classify_mechanism((0.2, 0, 0, 0, 0, 0)) == "mar"
        assert classify_mechanism((0, 0, 0, 0.5, 0.5, 0.5)) == "mar"
        assert classify_mechanism((0, 0, 0.1, 0, 0, 0)) == "mnar"

    def test_spec_consistency_enforced(self):
        with pytest.raises(ConfigError, match="implies"):
            MissingnessSpec("mar", 0.2, alpha=(0, 0, 0.3, 0, 0, 0))
        with pytest.raises(ConfigError, match="implies"):
            MissingnessSpec("mcar", 0.2, alpha=(0.2, 0, 0, 0, 0, 0))
        with pytest.raises(ConfigError):
            MissingnessSpec("mar", 0.2, alpha=(0.2, 0.2))
        with pytest.raises(ConfigError):
            MissingnessSpec("other", 0.2)
        with pytest.raises(ConfigError):
            MissingnessSpec("mar", 1.0)

    def test_spec_fills_default_alpha(self):
        s = MissingnessSpec("mar", 0.2)
        assert s.alpha == default_alpha("mar")
        assert MECHANISMS == ("mcar", "mar", "mnar")


class TestCalibration:
    def test_mcar_closed_form(self):
        d = pilot_dataset()
        a0 = calibrate_alpha0(d, (0.0,) * 6, 0.3)
        assert a0 == pytest.approx(logit(0.3), abs=1e-12)

    @pytest.mark.parametrize("target", [0.1, 0.2, 0.4])
    def test_pilot_mean_hits_target(self, target):
        d = pilot_dataset()
        alpha = default_alpha("mar")
        a0 = calibrate_alpha0(d, alpha, target)
        t = member_table(d)
        ci = t.cluster_index
        s = np.column_stack(
            [t.x[ci], t.z[ci], t.codes[:, 0], t.codes[:, 1], t.codes[:, 2], t.codes[:, 3]]
        ).astype(float) @ np.asarray(alpha)
        assert np.mean(expit(a0 + s)) == pytest.approx(target, abs=1e-9)

    def test_monotone_in_target(self):
        d = pilot_dataset()
        alpha = default_alpha("mnar")
        a = [calibrate_alpha0(d, alpha, t) for t in (0.1, 0.2, 0.3, 0.4)]
        assert np.all(np.diff(a) > 0)

    def test_unattainable_target_raises(self):
        # Huge coefficients push every member's score far outside what an
        # intercept in [-20, 20] can undo.
        d = pilot_dataset(n=60)
        with pytest.raises(CalibrationError, match="not attainable"):
            calibrate_alpha0(d, (0, 0, 30.0, 0, 0, 0), 0.2)

    def test_incomplete_pilot_rejected(self):
        d = mk_dataset([mk_cluster(0, 0, 1, [(None, 1, 1, 1), (2, 2, 2, 2)])])
        with pytest.raises(DataError, match="complete"):
            calibrate_alpha0(d, (0.0,) * 6, 0.2)

    def test_invalid_target(self):
        d = pilot_dataset(n=20)
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                calibrate_alpha0(d, (0.0,) * 6, bad)


class TestMissingProb:
    def test_hand_value(self):
        rule = VariableRule(-1.0, (0.1, 0.2, 0.3, 0.0, 0.0, 0.0))
        got = missing_prob(2.0, 1.0, 3, 1, 1, 1, rule)
        assert got == pytest.approx(expit(-1.0 + 0.2 + 0.2 + 0.9))

    def test_uncalibrated_spec_rejected(self):
        s = MissingnessSpec("mar", 0.2)
        with pytest.raises(ConfigError, match="alpha0"):
            missing_prob(0, 0, 1, 1, 1, 1, s)


class TestBuildRules:
    def test_rule_set_contents(self):
        d = pilot_dataset()
        rules = build_rules(MissingnessSpec("mar", 0.2), d)
        assert set(rules) == {"y", "m1", "m2", "m3"}
        assert rules["m1"].alpha0 == pytest.approx(logit(0.3))
        assert rules["m2"].alpha0 == pytest.approx(logit(0.3))
        assert rules["m3"].alpha0 == pytest.approx(logit(0.1))
        assert rules["m1"].alpha == (0.0,) * 6

    def test_zero_rates_produce_no_rules(self):
        d = pilot_dataset(n=50)
        rules = build_rules(
            MissingnessSpec("mcar", 0.0, aux_rates=(0.0, 0.0, 0.0)), d
        )
        assert rules == {}

    def test_precalibrated_alpha0_is_reused(self):
        d = pilot_dataset(n=50)
        s = MissingnessSpec("mcar", 0.25, alpha0=-0.7, aux_rates=(0.0, 0.0, 0.0))
        rules = build_rules(s, d)
        assert rules["y"].alpha0 == -0.7


class TestApplyMissingness:
    def test_requires_complete_input(self, rng):
        d = mk_dataset([mk_cluster(0, 0, 1, [(None, 1, 1, 1)])])
        with pytest.raises(DataError):
            apply_missingness(d, {}, rng)

    def test_structure_preserved(self, rng):
        d = pilot_dataset(n=200)
        rules = build_rules(MissingnessSpec("mar", 0.3), d)
        out = apply_missingness(d, rules, rng)
        assert [c.id for c in out.clusters] == [c.id for c in d.clusters]
        assert [c.size for c in out.clusters] == [c.size for c in d.clusters]
        assert [c.x for c in out.clusters] == [c.x for c in d.clusters]
        t_in, t_out = member_table(d), member_table(out)
        kept = t_out.codes >= 0
        assert np.array_equal(t_out.codes[kept], t_in.codes[kept])

    def test_empty_rules_identity(self, rng):
        d = pilot_dataset(n=30)
        assert apply_missingness(d, {}, rng) == d

    def test_realized_rates_near_targets(self):
        d = pilot_dataset(seed=3, n=2000)
        rules = build_rules(MissingnessSpec("mar", 0.2), d)
        out = apply_missingness(d, rules, np.random.default_rng(11))
        t = member_table(out)
        n = t.n_members
        for col, want in ((0, 0.2), (1, 0.3), (2, 0.3), (3, 0.1)):
            rate = np.mean(t.codes[:, col] < 0)
            se = np.sqrt(want * (1 - want) / n)
            assert abs(rate - want) < 4.0 * se

    def test_mnar_rates_depend_on_outcome(self):
        # Positive coefficient on y: high categories are deleted more often.
        d = pilot_dataset(seed=5, n=2000)
        spec = MissingnessSpec("mnar", 0.3, alpha=(0, 0, 2.0, 0, 0, 0))
        rules = build_rules(spec, d)
        out = apply_missingness(d, rules, np.random.default_rng(2))
        t_in, t_out = member_table(d), member_table(out)
        y = t_in.codes[:, 0]
        gone = t_out.codes[:, 0] < 0
        assert np.mean(gone[y == 4]) > np.mean(gone[y == 1]) + 0.2

    def test_mcar_rates_flat_across_outcome(self):
        d = pilot_dataset(seed=6, n=2000)
        rules = build_rules(
            MissingnessSpec("mcar", 0.3, aux_rates=(0.0, 0.0, 0.0)), d
        )
        out = apply_missingness(d, rules, np.random.default_rng(4))
        t_in, t_out = member_table(d), member_table(out)
        y = t_in.codes[:, 0]
        gone = t_out.codes[:, 0] < 0
        assert abs(np.mean(gone[y == 4]) - np.mean(gone[y == 1])) < 0.05

    def test_probabilities_precomputed_before_deletion(self, rng):
        # The auxiliary deletions must not feed back into the outcome rule:
        # identical seeds give identical outcome deletion whether or not
        # auxiliary rules run.
        d = pilot_dataset(seed=7, n=300)
        spec_a = MissingnessSpec("mar", 0.3, aux_rates=(0.0, 0.0, 0.0))
        spec_b = MissingnessSpec("mar", 0.3)
        ra = build_rules(spec_a, d)
        rb = build_rules(spec_b, d)
        out_a = apply_missingness(d, ra, np.random.default_rng(9))
        out_b = apply_missingness(d, rb, np.random.default_rng(9))
        ya = np.array([m.y is None for c in out_a.clusters for m in c.members])
        yb = np.array([m.y is None for c in out_b.clusters for m in c.members])
        assert np.array_equal(ya, yb)
