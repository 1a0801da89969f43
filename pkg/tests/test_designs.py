"""Sampling designs: distributional oracles, weights, splitting, determinism."""

import numpy as np
import pytest

from svyconform import DesignKind, DesignSpec, FinitePopulation, design_split, draw
from svyconform import test_weights as unit_test_weights
from svyconform.designs import SmallStratumWarning


def _plain_pop(n, size=None):
    return FinitePopulation(
        ids=np.arange(1, n + 1),
        x=np.zeros((n, 0)),
        y=np.arange(n, dtype=float),
        size_measure=size,
    )


class TestDraw:
    def test_census_srswor(self):
        pop = _plain_pop(8)
        sample = draw(pop, DesignSpec(kind=DesignKind.SRSWOR, n=8, seed=1))
        assert sorted(sample.unit_ids.tolist()) == list(range(1, 9))
        assert np.all(sample.base_weight == 1.0)

    def test_srswor_weights_sum_to_population_size(self):
        pop = _plain_pop(600)
        sample = draw(pop, DesignSpec(kind=DesignKind.SRSWOR, n=30, seed=2))
        assert float(sample.base_weight.sum()) == 600.0

    def test_wor_kinds_never_repeat(self):
        pop = _plain_pop(50, size=np.linspace(1, 3, 50))
        for kind in (DesignKind.SRSWOR, DesignKind.PPSWOR):
            sample = draw(pop, DesignSpec(kind=kind, n=40, seed=3))
            assert len(set(sample.unit_ids.tolist())) == 40

    def test_determinism(self):
        pop = _plain_pop(100, size=np.random.default_rng(0).uniform(1, 5, 100))
        for kind in (DesignKind.SRSWR, DesignKind.SRSWOR, DesignKind.PPSWR, DesignKind.PPSWOR):
            spec = DesignSpec(kind=kind, n=20, seed=11)
            a, b = draw(pop, spec), draw(pop, spec)
            assert np.array_equal(a.unit_ids, b.unit_ids)
            assert np.array_equal(a.base_weight, b.base_weight)

    def test_ppswr_equal_sizes_uniform_frequencies(self):
        # Monte Carlo frequency check: 1e5 draws, each id lands ~1/4 of the
        # time, tolerance three binomial standard errors.
        pop = _plain_pop(4, size=np.ones(4))
        sample = draw(pop, DesignSpec(kind=DesignKind.PPSWR, n=100_000, seed=4))
        freq = np.bincount(sample.unit_ids, minlength=5)[1:] / 100_000
        se = np.sqrt(0.25 * 0.75 / 100_000)
        assert np.all(np.abs(freq - 0.25) < 3 * se)

    def test_ppswr_three_to_one_odds(self):
        # Exact binomial oracle: p(id 1) = 3/4 per draw.
        pop = _plain_pop(2, size=np.array([3.0, 1.0]))
        sample = draw(pop, DesignSpec(kind=DesignKind.PPSWR, n=100_000, seed=5))
        freq1 = float(np.mean(sample.unit_ids == 1))
        se = np.sqrt(0.75 * 0.25 / 100_000)
        assert abs(freq1 - 0.75) < 3 * se

    def test_ppswor_first_draw_matches_size_odds(self):
        # The first selection of a without-replacement draw is a plain
        # size-proportional categorical draw.
        pop = _plain_pop(2, size=np.array([3.0, 1.0]))
        rng = np.random.default_rng(6)
        firsts = np.array(
            [draw(pop, DesignSpec(kind=DesignKind.PPSWOR, n=1, seed=0), rng).unit_ids[0] for _ in range(20_000)]
        )
        se = np.sqrt(0.75 * 0.25 / 20_000)
        assert abs(float(np.mean(firsts == 1)) - 0.75) < 3 * se

    def test_ppswor_weights_are_wr_style(self):
        pop = _plain_pop(4, size=np.array([1.0, 2.0, 3.0, 4.0]))
        sample = draw(pop, DesignSpec(kind=DesignKind.PPSWOR, n=2, seed=7))
        p = pop.size_measure / pop.size_measure.sum()
        expected = 1.0 / (2 * p[sample.unit_ids - 1])
        assert np.allclose(sample.base_weight, expected)

    def test_stratified_counts_match_allocation(self, small_pop):
        spec = DesignSpec(kind=DesignKind.STRATIFIED, n={"a": 5, "b": 7}, seed=8)
        sample = draw(small_pop, spec)
        assert int(np.sum(sample.stratum_of == "a")) == 5
        assert int(np.sum(sample.stratum_of == "b")) == 7
        # Within-stratum SRSWOR weights are N_h / n_h.
        assert np.allclose(sample.base_weight[sample.stratum_of == "a"], 24 / 5)
        assert np.allclose(sample.base_weight[sample.stratum_of == "b"], 16 / 7)

    def test_cluster_takes_whole_clusters(self, small_pop):
        spec = DesignSpec(kind=DesignKind.CLUSTER, n=2, seed=9)
        sample = draw(small_pop, spec)
        for lab in set(sample.cluster_of):
            n_in_pop = int(np.sum(np.asarray(small_pop.cluster) == lab))
            assert int(np.sum(sample.cluster_of == lab)) == n_in_pop
        assert np.all(sample.base_weight == 2.0)  # 4 clusters / 2 sampled

    def test_two_stage_cluster_subsamples_units(self, small_pop):
        spec = DesignSpec(kind=DesignKind.CLUSTER, n=2, units_per_cluster=3, seed=10)
        sample = draw(small_pop, spec)
        assert sample.n == 6
        assert np.allclose(sample.base_weight, 2.0 * 10 / 3)

    def test_errors(self, small_pop):
        with pytest.raises(ValueError, match="without replacement"):
            draw(small_pop, DesignSpec(kind=DesignKind.SRSWOR, n=41, seed=0))
        no_size = _plain_pop(5)
        with pytest.raises(ValueError, match="size measure"):
            draw(no_size, DesignSpec(kind=DesignKind.PPSWR, n=2, seed=0))
        with pytest.raises(ValueError, match="allocation"):
            DesignSpec(kind=DesignKind.STRATIFIED, n={}, seed=0)
        with pytest.raises(ValueError, match="unknown stratum"):
            draw(small_pop, DesignSpec(kind=DesignKind.STRATIFIED, n={"zz": 1}, seed=0))


class TestReplicateRng:
    def test_matches_spawned_stream(self):
        from svyconform.designs import replicate_rng

        direct = np.random.Generator(np.random.PCG64(np.random.SeedSequence(5).spawn(4)[3]))
        helper = replicate_rng(5, 3)
        assert np.array_equal(helper.random(8), direct.random(8))

    def test_streams_independent_across_replicates(self):
        from svyconform.designs import replicate_rng

        a = replicate_rng(5, 0).random(8)
        b = replicate_rng(5, 1).random(8)
        assert not np.array_equal(a, b)


class TestTestWeights:
    def test_srs_weights_constant(self):
        pop = _plain_pop(100)
        w = unit_test_weights(pop, DesignSpec(kind=DesignKind.SRSWOR, n=20, seed=0))
        assert np.all(w == 5.0)

    def test_pps_weights_inverse_to_size(self):
        pop = _plain_pop(4, size=np.array([1.0, 2.0, 3.0, 4.0]))
        w = unit_test_weights(pop, DesignSpec(kind=DesignKind.PPSWOR, n=2, seed=0))
        p = pop.size_measure / 10.0
        assert np.allclose(w, 1 / (2 * p))


class TestDesignSplit:
    def test_uniform_split_partitions(self):
        pop = _plain_pop(10)
        sample = draw(pop, DesignSpec(kind=DesignKind.SRSWOR, n=10, seed=1))
        train, calib = design_split(sample, 0.5, np.random.default_rng(0))
        assert train.n == 5 and calib.n == 5
        assert set(train.unit_ids) | set(calib.unit_ids) == set(sample.unit_ids)
        assert set(train.unit_ids) & set(calib.unit_ids) == set()

    def test_stratified_split_balances_within_strata(self, small_pop):
        spec = DesignSpec(kind=DesignKind.STRATIFIED, n={"a": 4, "b": 6}, seed=2)
        sample = draw(small_pop, spec)
        train, calib = design_split(sample, 0.5, np.random.default_rng(1))
        assert int(np.sum(train.stratum_of == "a")) == 2
        assert int(np.sum(calib.stratum_of == "a")) == 2
        assert int(np.sum(train.stratum_of == "b")) == 3
        assert int(np.sum(calib.stratum_of == "b")) == 3

    def test_cluster_split_keeps_clusters_whole(self, small_pop):
        spec = DesignSpec(kind=DesignKind.CLUSTER, n=4, seed=3)
        sample = draw(small_pop, spec)
        train, calib = design_split(sample, 0.5, np.random.default_rng(2))
        assert len(set(train.cluster_of)) == 2 and len(set(calib.cluster_of)) == 2
        assert set(train.cluster_of) & set(calib.cluster_of) == set()

    def test_tiny_stratum_goes_to_training_with_warning(self, small_pop):
        spec = DesignSpec(kind=DesignKind.STRATIFIED, n={"a": 1, "b": 6}, seed=4)
        sample = draw(small_pop, spec)
        with pytest.warns(SmallStratumWarning):
            train, calib = design_split(sample, 0.5, np.random.default_rng(3))
        assert int(np.sum(train.stratum_of == "a")) == 1
        assert int(np.sum(calib.stratum_of == "a")) == 0

    def test_split_preserves_weights(self, small_pop):
        sample = draw(small_pop, DesignSpec(kind=DesignKind.PPSWOR, n=12, seed=5))
        train, calib = design_split(sample, 0.4, np.random.default_rng(4))
        merged = np.sort(np.concatenate([train.base_weight, calib.base_weight]))
        assert np.array_equal(merged, np.sort(sample.base_weight))
