import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordmi.data import member_table
from ordmi.datagen import GenConfig, simulate_dataset
from ordmi.errors import ConfigError, IdentifiabilityError
from ordmi.impute_jm import (
    JmSpec,
    LatentRegion,
    jm_category_to_latent_constraint,
    jm_impute,
    jm_latent_to_category,
)
from ordmi.missingness import MissingnessSpec, apply_missingness, build_rules

from conftest import mk_cluster, mk_dataset


def amputed_pair(seed=42, n=200, rate=0.3, aux_rates=(0.2, 0.2, 0.1)):
    d = simulate_dataset(GenConfig(n_clusters=n, tau=0.3, nu=0.1), seed)
    rules = build_rules(MissingnessSpec("mcar", rate, aux_rates=aux_rates), d)
    amp = apply_missingness(d, rules, np.random.default_rng(seed + 1))
    return d, amp


QUICK = JmSpec(m_imputations=3, burn_in=5, between=2)


class TestJmSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            JmSpec(m_imputations=1)
        with pytest.raises(ConfigError):
            JmSpec(burn_in=0)
        with pytest.raises(ConfigError):
            JmSpec(between=0)
        with pytest.raises(ConfigError):
            JmSpec(prior_scale=0.0)
        with pytest.raises(ConfigError):
            JmSpec(mh_step=-0.1)

    def test_defaults(self):
        s = JmSpec()
        assert s.m_imputations == 10 and s.burn_in == 500 and s.between == 100
        assert not s.include_cluster_size
        assert s.prior_scale == 1.0 and s.prior_df_extra == 2


class TestLatentCoding:
    def test_constraint_regions(self):
        r1 = jm_category_to_latent_constraint(1, 4)
        assert r1 == LatentRegion(3, 0)
        r4 = jm_category_to_latent_constraint(4, 4)
        assert r4 == LatentRegion(3, None)
        with pytest.raises(ValueError):
            jm_category_to_latent_constraint(5, 4)
        with pytest.raises(ValueError):
            jm_category_to_latent_constraint(0, 4)
        with pytest.raises(ValueError):
            jm_category_to_latent_constraint(1, 1)

    def test_contains_hand_cases(self):
        r2 = jm_category_to_latent_constraint(2, 4)
        assert r2.contains([0.2, 0.5, -1.0])
        assert not r2.contains([0.6, 0.5, -1.0])
        assert not r2.contains([-0.2, -0.5, -1.0])
        top = jm_category_to_latent_constraint(4, 4)
        assert top.contains([-0.1, -0.5, -2.0])
        assert not top.contains([0.1, -0.5, -2.0])
        with pytest.raises(ValueError):
            r2.contains([0.1, 0.2])

    def test_latent_to_category_hand_cases(self):
        assert jm_latent_to_category([0.5, 0.2, -1.0]) == 1
        assert jm_latent_to_category([0.2, 0.5, -1.0]) == 2
        assert jm_latent_to_category([-0.5, -0.2, 1.0]) == 3
        assert jm_latent_to_category([-0.5, -0.2, -1.0]) == 4

    @given(
        st.lists(
            st.floats(min_value=-5, max_value=5, allow_nan=False),
            min_size=1,
            max_size=5,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_partition(self, w):
        # every latent vector lands in exactly the region of its category
        w = np.asarray(w)
        cat = jm_latent_to_category(w)
        n_cat = w.shape[0] + 1
        for c in range(1, n_cat + 1):
            region = jm_category_to_latent_constraint(c, n_cat)
            if np.max(w) == 0.0 or (
                w.max() > 0 and np.sum(w == w.max()) > 1
            ):
                return  # measure-zero ties: partition not defined there
            assert region.contains(w) == (c == cat)


class TestJmImpute:
    def test_complete_input_short_circuits(self, small_dataset):
        out = jm_impute(small_dataset, QUICK, 1)
        assert len(out) == 3
        assert all(imp == small_dataset for imp in out)

    def test_output_shape_and_completeness(self):
        _, amp = amputed_pair()
        out = jm_impute(amp, QUICK, 5)
        assert len(out) == QUICK.m_imputations
        for imp in out:
            t = member_table(imp)
            assert np.all(t.codes > 0)
            assert np.all(t.codes <= 4)

    def test_observed_cells_untouched(self):
        _, amp = amputed_pair()
        t_in = member_table(amp)
        obs = t_in.codes >= 0
        for imp in jm_impute(amp, QUICK, 5):
            t = member_table(imp)
            assert np.array_equal(t.codes[obs], t_in.codes[obs])
            assert [c.size for c in imp.clusters] == [c.size for c in amp.clusters]

    def test_reproducible_and_seed_sensitive(self):
        _, amp = amputed_pair(n=60)
        assert jm_impute(amp, QUICK, 11) == jm_impute(amp, QUICK, 11)
        assert jm_impute(amp, QUICK, 11) != jm_impute(amp, QUICK, 12)

    def test_imputations_vary_between_copies(self):
        _, amp = amputed_pair(n=150)
        out = jm_impute(amp, QUICK, 3)
        t0 = member_table(out[0]).codes
        assert any(not np.array_equal(t0, member_table(o).codes) for o in out[1:])

    def test_unobserved_category_rejected(self):
        rows = [(1, 1, 1, 1), (2, 2, 2, 2), (3, 3, 3, 3), (None, 4, 4, 4)]
        d = mk_dataset([mk_cluster(0, 0.1, 1, rows), mk_cluster(1, -0.3, 0, rows)])
        with pytest.raises(IdentifiabilityError, match="y"):
            jm_impute(d, QUICK, 1)

    def test_cluster_size_predictor_runs(self):
        _, amp = amputed_pair(n=100)
        spec = JmSpec(
            m_imputations=3, burn_in=5, between=2, include_cluster_size=True
        )
        out = jm_impute(amp, spec, 5)
        assert all(np.all(member_table(o).codes > 0) for o in out)

    def test_mixed_category_counts_supported(self):
        rng = np.random.default_rng(1)
        clusters = []
        for i in range(50):
            rows = []
            for _ in range(3):
                y = int(rng.integers(1, 4))
                m = tuple(int(rng.integers(1, 3)) for _ in range(3))
                rows.append((y if rng.random() > 0.3 else None, *m))
            clusters.append(
                mk_cluster(i, float(rng.standard_normal()), int(i % 2), rows)
            )
        d = mk_dataset(clusters, n_categories_y=3, n_categories_aux=(2, 2, 2))
        for imp in jm_impute(d, QUICK, 3):
            t = member_table(imp)
            assert np.all((t.codes[:, 0] >= 1) & (t.codes[:, 0] <= 3))
            assert np.all((t.codes[:, 1:] >= 1) & (t.codes[:, 1:] <= 2))


class TestTrace:
    def test_trace_schema(self, tmp_path):
        _, amp = amputed_pair(n=50)
        path = tmp_path / "trace.csv"
        jm_impute(amp, QUICK, 3, trace_path=str(path))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        # K = 12 latent coordinates; slopes are one (x, z) pair per coordinate
        header = rows[0]
        assert header[0] == "sweep"
        assert "intercept_0" in header and "intercept_11" in header
        assert "logdet_sigma_u" == header[-1]
        total = QUICK.burn_in + (QUICK.m_imputations - 1) * QUICK.between + 1
        assert len(rows) == 1 + total
        for r in rows[1:]:
            assert len(r) == len(header)
            float(r[-1])


class TestStatisticalBehavior:
    @pytest.mark.slow
    def test_mcar_marginals_preserved_association_attenuated(self):
        # The joint latent-normal model nails the per-category margins of
        # the deleted cells; the within-member cross-variable association is
        # only partially recovered at practical chain lengths (the random
        # walk on the cross-variable residual blocks mixes slowly), so it
        # stays positive but attenuated.
        from oracles import spearman_bruteforce

        d = simulate_dataset(GenConfig(n_clusters=800, tau=0.3, nu=0.1), 42)
        t = member_table(d)
        rules = build_rules(
            MissingnessSpec("mcar", 0.3, aux_rates=(0.0, 0.0, 0.0)), d
        )
        amp = apply_missingness(d, rules, np.random.default_rng(9))
        miss = member_table(amp).codes[:, 0] < 0
        truth = t.codes[miss, 0]
        freq_true = np.bincount(truth, minlength=5)[1:] / miss.sum()
        r_true = spearman_bruteforce(truth, t.codes[miss, 2])
        spec = JmSpec(m_imputations=4, burn_in=100, between=20)
        for imp in jm_impute(amp, spec, 7):
            got = member_table(imp).codes[miss, 0]
            freq = np.bincount(got, minlength=5)[1:] / miss.sum()
            assert np.max(np.abs(freq - freq_true)) < 0.05
            assert abs(np.mean(got) - np.mean(truth)) < 0.08
            r_imp = spearman_bruteforce(got, t.codes[miss, 2])
            assert 0.08 < r_imp < r_true
