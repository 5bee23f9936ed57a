import json

import numpy as np
import pytest
from scipy.special import expit

from ordmi.cwgee import (
    CwgeeFit,
    WEIGHTINGS,
    binary_expand,
    cwgee_solve,
    marginal_means,
    multinomial_cov,
    sandwich_variance,
)
from ordmi.data import (
    DEFAULT_TRUE_PARAMS,
    Cluster,
    ClusteredDataset,
    Member,
    ParamVector,
    complete_cases,
)
from ordmi.datagen import GenConfig, simulate_dataset
from ordmi.errors import (
    IdentifiabilityError,
    SeparationError,
    TooFewClustersError,
)
from ordmi.missingness import MissingnessSpec, apply_missingness, build_rules

from conftest import mk_cluster, mk_dataset
from oracles import fit_prop_odds_mle, multinomial_cov_enum


def independent_dataset(seed, n, params=DEFAULT_TRUE_PARAMS):
    """Single-member clusters drawn straight from the marginal model."""
    rng = np.random.default_rng(seed)
    x = 2.0 * rng.standard_normal(n)
    z = (rng.random(n) < 0.5).astype(float)
    cuts = np.asarray(params.cutpoints)
    lin = params.slopes[0] * x + params.slopes[1] * z
    theta = expit(cuts[None, :] + lin[:, None])
    y = 1 + np.sum(rng.random(n)[:, None] > theta, axis=1)
    clusters = tuple(
        Cluster(
            id=i,
            x=float(x[i]),
            z=float(z[i]),
            size=1,
            members=(Member(int(y[i]), 1, 1, 1),),
        )
        for i in range(n)
    )
    return ClusteredDataset(clusters), y, x, z


class TestKernels:
    def test_binary_expand(self):
        assert np.array_equal(binary_expand(1, 4), [1, 1, 1])
        assert np.array_equal(binary_expand(3, 4), [0, 0, 1])
        assert np.array_equal(binary_expand(4, 4), [0, 0, 0])
        with pytest.raises(ValueError):
            binary_expand(5, 4)
        with pytest.raises(ValueError):
            binary_expand(0, 4)

    def test_marginal_means_hand_value(self):
        p = ParamVector((-0.4, 0.8, 1.6), (-0.2, -0.5))
        got = marginal_means(p, 1.5, 1.0)
        lin = -0.2 * 1.5 - 0.5
        assert np.allclose(got, expit(np.array([-0.4, 0.8, 1.6]) + lin))

    def test_multinomial_cov_hand_value(self):
        mu = np.array([0.2, 0.7])
        v = multinomial_cov(mu)
        want = np.array([[0.2 * 0.8, 0.2 * 0.3], [0.2 * 0.3, 0.7 * 0.3]])
        assert np.allclose(v, want, atol=1e-15)

    def test_multinomial_cov_matches_enumeration(self, rng):
        for _ in range(100):
            q = int(rng.integers(1, 5))
            mu = np.sort(rng.uniform(0.05, 0.95, q))
            while np.any(np.diff(mu) < 1e-3):
                mu = np.sort(rng.uniform(0.05, 0.95, q))
            assert np.allclose(
                multinomial_cov(mu), multinomial_cov_enum(mu), atol=1e-13
            )

    def test_multinomial_cov_rejects_bad_input(self):
        with pytest.raises(ValueError):
            multinomial_cov(np.array([0.7, 0.2]))
        with pytest.raises(ValueError):
            multinomial_cov(np.array([[0.2, 0.7]]))
        from ordmi.errors import NumericalError

        with pytest.raises(NumericalError):
            multinomial_cov(np.array([1e-16, 0.5]))

    def test_sandwich_doubles_correctly(self, rng):
        h = np.array([[2.0, 0.3], [0.3, 1.0]])
        s = rng.standard_normal((30, 2))
        v1 = sandwich_variance(h, s)
        v2 = sandwich_variance(2.0 * h, np.vstack([s, s]))
        assert np.allclose(v2, 0.5 * v1)


class TestAgainstLikelihood:
    def test_matches_mle_on_independent_data(self):
        # With one member per cluster the weighted estimating equations
        # coincide with the proportional-odds score equations.
        for seed in range(5):
            d, y, x, z = independent_dataset(seed, 250)
            fit = cwgee_solve(d)
            est, _ = fit_prop_odds_mle(y, x, z, 4)
            assert fit.converged
            assert np.max(np.abs(fit.params.as_array() - est)) < 1e-5

    def test_weighting_immaterial_for_equal_sizes(self):
        d = simulate_dataset(
            GenConfig(n_clusters=120, tau=0.3, nu=0.0, max_size=6), 21
        )
        # force every cluster to the same size by trimming to the minimum
        m = min(c.size for c in d.clusters)
        trimmed = ClusteredDataset(
            tuple(
                Cluster(c.id, c.x, c.z, m, c.members[:m]) for c in d.clusters
            )
        )
        f1 = cwgee_solve(trimmed, weighting="inverse-cluster-size")
        f2 = cwgee_solve(trimmed, weighting="unweighted")
        assert np.max(np.abs(f1.params.as_array() - f2.params.as_array())) < 1e-8

    @pytest.mark.slow
    def test_recovers_truth_on_large_sample(self):
        d = simulate_dataset(GenConfig(n_clusters=3000, tau=0.3, nu=0.0), 8)
        fit = cwgee_solve(d)
        err = fit.params.as_array() - DEFAULT_TRUE_PARAMS.as_array()
        assert np.all(np.abs(err) < 4.0 * fit.se)
        assert np.all(np.abs(err) < 0.1)

    @pytest.mark.slow
    def test_robust_se_tracks_sampling_variation(self):
        reps = 150
        cfg = GenConfig(n_clusters=100, tau=0.3, nu=0.1)
        ests, ses = [], []
        for r in range(reps):
            fit = cwgee_solve(simulate_dataset(cfg, 1000 + r))
            ests.append(fit.params.as_array())
            ses.append(fit.se)
        ests, ses = np.array(ests), np.array(ses)
        emp = ests.std(axis=0, ddof=1)
        assert np.all(np.abs(ses.mean(axis=0) / emp - 1.0) < 0.25)
        bias = ests.mean(axis=0) - DEFAULT_TRUE_PARAMS.as_array()
        assert np.all(np.abs(bias) < 4.0 * emp / np.sqrt(reps))


class TestMissingHandling:
    def test_skips_missing_y_keeps_recorded_weight(self):
        d = simulate_dataset(GenConfig(n_clusters=150, tau=0.3, nu=0.1), 31)
        rules = build_rules(
            MissingnessSpec("mcar", 0.3, aux_rates=(0.0, 0.0, 0.0)), d
        )
        amputed = apply_missingness(d, rules, np.random.default_rng(5))
        direct = cwgee_solve(amputed)
        # complete_cases keeping recorded sizes reproduces the same sums
        kept = complete_cases(amputed, keep_original_sizes=True)
        via_filter = cwgee_solve(kept)
        assert np.array_equal(
            direct.params.as_array(), via_filter.params.as_array()
        )

    def test_recomputed_sizes_change_the_fit(self):
        d = simulate_dataset(GenConfig(n_clusters=150, tau=0.3, nu=0.1), 32)
        rules = build_rules(
            MissingnessSpec("mcar", 0.4, aux_rates=(0.0, 0.0, 0.0)), d
        )
        amputed = apply_missingness(d, rules, np.random.default_rng(6))
        f_recorded = cwgee_solve(complete_cases(amputed, keep_original_sizes=True))
        f_observed = cwgee_solve(complete_cases(amputed))
        diff = np.abs(f_recorded.params.as_array() - f_observed.params.as_array())
        assert np.max(diff) > 1e-6


class TestFailureModes:
    def test_too_few_clusters(self):
        d = mk_dataset([mk_cluster(0, 0.5, 1, [(1, 1, 1, 1), (2, 1, 1, 1)])])
        with pytest.raises(TooFewClustersError):
            cwgee_solve(d)

    def test_unobserved_category(self):
        d = mk_dataset(
            [
                mk_cluster(0, 0.5, 1, [(1, 1, 1, 1), (2, 1, 1, 1)]),
                mk_cluster(1, -0.5, 0, [(3, 1, 1, 1), (1, 1, 1, 1)]),
            ]
        )
        with pytest.raises(IdentifiabilityError, match="4"):
            cwgee_solve(d)

    def test_constant_covariate_raises_separation(self):
        rng = np.random.default_rng(4)
        clusters = tuple(
            Cluster(
                id=i,
                x=float(rng.standard_normal()),
                z=0.0,
                size=1,
                members=(Member(int(rng.integers(1, 5)), 1, 1, 1),),
            )
            for i in range(40)
        )
        with pytest.raises(SeparationError):
            cwgee_solve(ClusteredDataset(clusters))

    def test_perfectly_separated_data_does_not_converge(self):
        rng = np.random.default_rng(3)
        x = np.sort(rng.standard_normal(80))
        qs = np.quantile(x, [0.25, 0.5, 0.75])
        y = 1 + np.searchsorted(qs, x)
        clusters = tuple(
            Cluster(
                id=i,
                x=float(x[i]),
                z=float(i % 2),
                size=1,
                members=(Member(int(y[i]), 1, 1, 1),),
            )
            for i in range(80)
        )
        fit = cwgee_solve(ClusteredDataset(clusters))
        assert not fit.converged

    def test_bad_weighting_rejected(self, small_dataset):
        with pytest.raises(ValueError, match="weighting"):
            cwgee_solve(small_dataset, weighting="cluster")

    def test_bad_init_rejected(self, small_dataset):
        bad = ParamVector((-1.0, 1.0), (0.0, 0.0))
        with pytest.raises(ValueError):
            cwgee_solve(small_dataset, init=bad)


class TestFitObject:
    def test_json_roundtrip(self):
        d, *_ = independent_dataset(1, 200)
        fit = cwgee_solve(d)
        back = CwgeeFit.from_json(fit.to_json())
        assert back.params == fit.params
        assert np.allclose(back.robust_cov, fit.robust_cov)
        assert back.converged == fit.converged
        assert back.weighting == fit.weighting
        assert back.max_score == pytest.approx(fit.max_score)

    def test_json_field_names(self):
        d, *_ = independent_dataset(2, 200)
        obj = json.loads(cwgee_solve(d).to_json())
        assert obj["names"] == ["eta1", "eta2", "eta3", "beta1", "beta2"]
        assert len(obj["robust_se"]) == 5

    def test_converged_fit_has_small_score(self):
        d, *_ = independent_dataset(3, 300)
        fit = cwgee_solve(d)
        assert fit.converged and fit.max_score < 1e-6
        assert np.all(fit.se > 0)
        assert fit.weighting == "inverse-cluster-size"
        assert WEIGHTINGS == ("inverse-cluster-size", "unweighted")

    def test_warm_start_agrees(self):
        d, *_ = independent_dataset(4, 250)
        cold = cwgee_solve(d)
        warm = cwgee_solve(d, init=DEFAULT_TRUE_PARAMS)
        assert np.max(np.abs(cold.params.as_array() - warm.params.as_array())) < 1e-7
