"""Prediction-region engines: worked examples, reductions, and properties."""

import numpy as np
import pytest

from svyconform import (
    INFINITY,
    NEG_INFINITY,
    CalibrationContext,
    DesignKind,
    DesignSpec,
    DrawnSample,
    FinitePopulation,
    GridSpec,
    NonExchangeableDesignError,
    PredictionRegion,
    VacuousRegionWarning,
    classification_set,
    cluster_double_conformal,
    cluster_pooled_cdf,
    cluster_repeated_subsample,
    cluster_subsample_once,
    constant_model,
    design_split,
    fit_ols,
    full_conformal_interval,
    normalize_shift_weights,
    observed_cluster_interval,
    poststrat_weights,
    response_interval,
    response_upper_bound,
    split_interval_exchangeable,
    split_interval_weighted,
    stratified_interval,
    weight_sensitivity,
    ScoreModel,
    WeightedScores,
)

NO_X = np.empty(0)


def _pop_from_y(y, cluster=None, stratum=None):
    y = np.asarray(y, dtype=float)
    return FinitePopulation(
        ids=np.arange(1, y.shape[0] + 1),
        x=np.zeros((y.shape[0], 0)),
        y=y,
        cluster=cluster,
        stratum=stratum,
    )


def _census(pop, kind=DesignKind.SRSWOR, weights=None):
    return DrawnSample(
        unit_ids=pop.ids.copy(),
        base_weight=np.ones(pop.n_units) if weights is None else np.asarray(weights, float),
        design=DesignSpec(kind=kind, n=pop.n_units, seed=0),
        stratum_of=None if pop.stratum is None else pop.stratum.copy(),
        cluster_of=None if pop.cluster is None else pop.cluster.copy(),
    )


def _ctx(residuals, alpha, center=0.0, weights=None, kind=DesignKind.SRSWOR, cluster=None):
    """Context whose calibration scores are exactly `residuals` around `center`."""
    residuals = np.asarray(residuals, dtype=float)
    pop = _pop_from_y(center + residuals, cluster=cluster)
    sample = _census(pop, kind=kind, weights=weights)
    return CalibrationContext(pop, sample, constant_model(center, covariate_dim=0), alpha)


class TestSplitExchangeable:
    def test_figure_quantile_interval(self):
        ctx = _ctx([1, 2, 3, 4], alpha=0.25, center=10.0)
        region = split_interval_exchangeable(ctx, NO_X)
        assert (region.lower, region.upper) == (6.0, 14.0)

    def test_small_n_saturates_to_vacuous(self):
        ctx = _ctx([2.5], alpha=0.4)
        with pytest.warns(VacuousRegionWarning):
            region = split_interval_exchangeable(ctx, NO_X)
        assert region.vacuous
        assert region.lower is NEG_INFINITY and region.upper is INFINITY

    def test_perfect_model_degenerate_interval(self):
        ctx = _ctx([0.0] * 9, alpha=0.25, center=3.0)
        region = split_interval_exchangeable(ctx, NO_X)
        assert (region.lower, region.upper) == (3.0, 3.0)
        assert region.contains(3.0) and not region.contains(3.0001)

    def test_rejects_weighted_designs(self):
        ctx = _ctx([1, 2, 3, 4], alpha=0.25, kind=DesignKind.PPSWR)
        with pytest.raises(NonExchangeableDesignError, match="split_interval_weighted"):
            split_interval_exchangeable(ctx, NO_X)
        region = split_interval_exchangeable(ctx, NO_X, check_design=False)
        assert region.upper == 4.0


class TestSplitWeighted:
    def test_figure_weighted_interval(self):
        ctx = _ctx([1, 2, 3, 4], alpha=0.25, weights=[4, 3, 2, 1])
        region = split_interval_weighted(ctx, NO_X, test_weight=3.0)
        assert (region.lower, region.upper) == (-4.0, 4.0)

    def test_uniform_weights_reduce_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(1, 30)
            residuals = rng.exponential(size=n)
            alpha = rng.uniform(0.05, 0.5)
            w = rng.uniform(0.2, 8.0)
            ctx_w = _ctx(residuals, alpha, weights=np.full(n, w))
            ctx_u = _ctx(residuals, alpha)
            a = split_interval_weighted(ctx_w, NO_X, test_weight=w)
            b = split_interval_exchangeable(ctx_u, NO_X)
            assert (a.lower, a.upper) == (b.lower, b.upper)

    def test_huge_test_weight_forces_vacuous(self):
        ctx = _ctx([1, 2, 3, 4], alpha=0.25, weights=[1, 1, 1, 1])
        with pytest.warns(VacuousRegionWarning):
            region = split_interval_weighted(ctx, NO_X, test_weight=1e9)
        assert region.vacuous

    def test_width_nondecreasing_in_test_weight(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = rng.integers(2, 25)
            ctx = _ctx(rng.exponential(size=n), 0.2, weights=rng.uniform(0.5, 3.0, n))
            grid = np.linspace(0.1, 20.0, 20)
            widths = [split_interval_weighted(ctx, NO_X, w).width() for w in grid]
            assert all(a <= b for a, b in zip(widths, widths[1:]))

    def test_nesting_across_levels(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = rng.integers(2, 20)
            residuals = rng.exponential(size=n)
            weights = rng.uniform(0.5, 3.0, n)
            a1, a2 = sorted(rng.uniform(0.05, 0.6, size=2))
            ctx_hi = _ctx(residuals, a1, weights=weights)  # higher level 1 - a1
            ctx_lo = _ctx(residuals, a2, weights=weights)
            wide = split_interval_weighted(ctx_hi, NO_X, 2.0)
            narrow = split_interval_weighted(ctx_lo, NO_X, 2.0)
            assert wide.lower <= narrow.lower and narrow.upper <= wide.upper

    def test_rejects_nonpositive_weight(self):
        ctx = _ctx([1, 2, 3], 0.2)
        with pytest.raises(ValueError):
            split_interval_weighted(ctx, NO_X, test_weight=0.0)

    def test_sensitivity_grid(self):
        ctx = _ctx([1, 2, 3, 4, 5, 6, 7], 0.25)
        regions = weight_sensitivity(ctx, NO_X, [0.5, 1.0, 2.0])
        assert len(regions) == 3
        assert regions[0].width() <= regions[1].width() <= regions[2].width()


class TestFullConformal:
    def test_exact_fit_includes_true_response(self):
        # Exactly collinear data only conform at the true response, so the
        # grid must contain it.
        x = np.linspace(0, 1, 9).reshape(-1, 1)
        y = 2.0 * x[:, 0]
        grid = GridSpec(n_points=41, lo=-1.0, hi=3.0)  # step 0.1 hits 1.0
        region = full_conformal_interval(x, y, np.array([0.5]), alpha=0.3, grid=grid)
        assert region.contains(1.0)

    def test_tiny_alpha_returns_grid_hull(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 1))
        y = rng.normal(size=6)
        grid = GridSpec(n_points=40)
        region = full_conformal_interval(x, y, np.array([0.0]), alpha=0.05, grid=grid)
        expected = grid.resolve(y)
        assert region.lower == expected[0] and region.upper == expected[-1]

    def test_split_and_full_intervals_agree_closely(self):
        rng = np.random.default_rng(4)
        n = 160
        x = rng.normal(size=(n, 1))
        y = 1.0 + 2.0 * x[:, 0] + rng.normal(size=n)
        x_test = np.array([0.3])
        full = full_conformal_interval(x, y, x_test, alpha=0.2, grid=GridSpec(n_points=400))

        pop = FinitePopulation(ids=np.arange(1, n + 1), x=x, y=y)
        sample = _census(pop)
        train, calib = design_split(sample, 0.5, np.random.default_rng(5))
        model = fit_ols(pop.x_of(train.unit_ids), pop.y_of(train.unit_ids))
        ctx = CalibrationContext(pop, calib, model, 0.2)
        split = split_interval_exchangeable(ctx, x_test)

        length = max(split.width(), full.width())
        assert abs(float(full.lower) - float(split.lower)) < 0.10 * length
        assert abs(float(full.upper) - float(split.upper)) < 0.10 * length

    def test_empty_keep_set_returns_flagged_empty_region(self):
        # Collinear data conform only at the exact response; a grid that
        # misses it leaves nothing to keep.
        x = np.linspace(0, 1, 9).reshape(-1, 1)
        y = 2.0 * x[:, 0]
        grid = GridSpec(n_points=7, lo=10.0, hi=11.0)
        region = full_conformal_interval(x, y, np.array([0.5]), alpha=0.3, grid=grid)
        assert region.empty and region.notes

    def test_weighted_variant_reduces_to_unweighted(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(12, 1))
        y = x[:, 0] + rng.normal(size=12)
        unweighted = full_conformal_interval(x, y, np.array([0.1]), alpha=0.25)
        weighted = full_conformal_interval(
            x, y, np.array([0.1]), alpha=0.25, weights=np.full(12, 2.0), test_weight=2.0
        )
        assert (weighted.lower, weighted.upper) == (unweighted.lower, unweighted.upper)


def _prob_model():
    def predictor(xs):
        out = np.empty((xs.shape[0], 3))
        for i, row in enumerate(xs):
            out[i] = (0.8, 0.15, 0.05) if row[0] > 0 else (0.7, 0.2, 0.1)
        return out

    return ScoreModel(predictor=predictor, score_kind="one_minus_prob", covariate_dim=1, n_classes=3)


def _class_ctx(alpha, n=7):
    # Calibration units all have label 0 and covariate -1, so every
    # calibration score is 1 - 0.7 = 0.3.
    pop = FinitePopulation(
        ids=np.arange(1, n + 1),
        x=-np.ones((n, 1)),
        y=np.zeros(n, dtype=int),
        response_kind="categorical",
    )
    return CalibrationContext(pop, _census(pop), _prob_model(), alpha)


class TestClassificationSet:
    def test_only_confident_class_kept(self):
        # q = 0.3 from the calibration scores; at x_test the scores are
        # (0.2, 0.85, 0.95) so only class 0 clears the bar.
        region = classification_set(_class_ctx(alpha=0.25), np.array([1.0]))
        assert region.labels == frozenset({0})

    def test_quantile_of_one_keeps_every_class(self):
        pop = FinitePopulation(
            ids=np.arange(1, 8), x=-np.ones((7, 1)), y=np.zeros(7, dtype=int), response_kind="categorical"
        )

        def sloppy(xs):
            return np.tile([0.0, 0.0, 1.0], (xs.shape[0], 1))

        model = ScoreModel(predictor=sloppy, score_kind="one_minus_prob", covariate_dim=1, n_classes=3)
        ctx = CalibrationContext(pop, _census(pop), model, 0.25)
        assert np.all(ctx.scores == 1.0)
        region = classification_set(ctx, np.array([1.0]))
        assert region.labels == frozenset({0, 1, 2})
        assert region.vacuous

    def test_tied_probabilities_keep_both(self):
        def coin(xs):
            return np.tile([0.5, 0.5], (xs.shape[0], 1))

        model = ScoreModel(predictor=coin, score_kind="one_minus_prob", covariate_dim=1, n_classes=2)
        pop = FinitePopulation(
            ids=np.arange(1, 10), x=np.zeros((9, 1)), y=np.zeros(9, dtype=int), response_kind="categorical"
        )
        ctx = CalibrationContext(pop, _census(pop), model, 0.3)
        # q = 0.5 (every calibration score is 0.5 and ceil(0.7 * 10) = 7 <= 9).
        region = classification_set(ctx, np.array([0.0]))
        assert region.labels == frozenset({0, 1})

    def test_monotone_in_quantile(self):
        loose = classification_set(_class_ctx(alpha=0.25), np.array([1.0]))
        vac = classification_set(_class_ctx(alpha=0.1, n=3), np.array([1.0]))
        assert loose.labels <= vac.labels

    def test_weighted_reduction(self):
        ctx_u = _class_ctx(alpha=0.25)
        ctx_w = _class_ctx(alpha=0.25)
        ctx_w.sample.base_weight[:] = 2.0
        a = classification_set(ctx_u, np.array([1.0]))
        b = classification_set(ctx_w, np.array([1.0]), test_weight=2.0)
        assert a.labels == b.labels


class TestStratified:
    def _contexts(self, alpha):
        return {
            "lo": _ctx([1, 2, 3, 4], alpha),
            "hi": _ctx([10, 20, 30, 40], alpha),
        }

    def test_widths_differ_by_stratum(self):
        ctxs = self._contexts(0.25)
        lo = stratified_interval(ctxs, NO_X, "lo")
        hi = stratified_interval(ctxs, NO_X, "hi")
        assert lo.width() == 8.0 and hi.width() == 80.0

    def test_single_stratum_matches_unstratified(self):
        ctx = _ctx([1, 5, 2, 8, 3], 0.25)
        via_strata = stratified_interval({"only": ctx}, NO_X, "only")
        direct = split_interval_exchangeable(ctx, NO_X)
        assert (via_strata.lower, via_strata.upper) == (direct.lower, direct.upper)

    def test_unknown_stratum(self):
        with pytest.raises(ValueError, match="unknown stratum"):
            stratified_interval(self._contexts(0.25), NO_X, "nope")


class TestClusterEngines:
    def test_subsample_once_single_unit_clusters_use_all_data(self):
        values = {f"c{i}": np.array([float(i)]) for i in range(1, 9)}
        rng = np.random.default_rng(0)
        region = cluster_subsample_once(values, 0.25, rng)
        direct = response_upper_bound(np.arange(1.0, 9.0), 0.25)
        assert region.upper == direct.upper

    def test_subsample_once_uses_one_score_per_cluster(self):
        values = {"a": np.arange(10.0), "b": np.arange(100.0), "c": np.array([5.0])}
        rng = np.random.default_rng(1)
        # 3 clusters at alpha=0.2: ceil(0.8 * 4) = 4 > 3, so the pad wins
        # no matter the cluster sizes; k scores are all that matter.
        region = cluster_subsample_once(values, 0.2, rng)
        assert region.vacuous

    def test_subsample_once_deterministic(self):
        values = {"a": np.arange(30.0), "b": np.arange(40.0, 90.0)}
        r1 = cluster_subsample_once(values, 0.4, np.random.default_rng(7))
        r2 = cluster_subsample_once(values, 0.4, np.random.default_rng(7))
        assert (r1.lower, r1.upper) == (r2.lower, r2.upper)

    def test_repeated_b1_contains_single_subsample(self):
        values = {f"c{i:02d}": np.random.default_rng(i).normal(size=6) for i in range(12)}
        single = cluster_subsample_once(values, 0.2, np.random.default_rng(3))
        repeated = cluster_repeated_subsample(values, 0.2, 1, np.random.default_rng(3))
        assert float(repeated.upper) >= float(single.upper)

    def test_repeated_constant_clusters_degenerate(self):
        values = {f"c{i}": np.full(4, 7.5) for i in range(9)}
        region = cluster_repeated_subsample(values, 0.2, 5, np.random.default_rng(4))
        assert region.upper == 7.5

    def test_double_conformal_small_k_hand_calculation(self):
        # Within-cluster level 0.75 bounds: [1, 9] and [11, 19]. Across two
        # clusters at level 0.75, ceil(0.75 * 3) = 3 > 2, so both combined
        # endpoints fall on the pad: the hand-computed region is the whole
        # real line.
        values = {"a": np.arange(1.0, 10.0), "b": np.arange(11.0, 20.0)}
        region = cluster_double_conformal(values, alpha=0.5)
        assert region.vacuous

    def test_double_conformal_hand_endpoints(self):
        # Ten identical clusters of 1..20 at alpha=0.2: within bounds at
        # level 0.95 are [1, 20]; across at level 0.9 needs the 10th of 10
        # identical endpoints, so the region is exactly [1, 20].
        values = {f"c{i:02d}": np.arange(1.0, 21.0) for i in range(10)}
        region = cluster_double_conformal(values, alpha=0.2)
        assert (region.lower, region.upper) == (1.0, 20.0)

    def test_double_conformal_contains_single_cluster_region(self):
        values = {f"c{i:02d}": np.arange(1.0, 21.0) for i in range(10)}
        double = cluster_double_conformal(values, alpha=0.2)
        single = response_interval(np.arange(1.0, 21.0), alpha=0.2)
        assert double.lower <= single.lower and single.upper <= double.upper

    def test_single_unit_cluster_contributes_unbounded_endpoints(self):
        values = {"a": np.array([5.0]), "b": np.arange(1.0, 30.0)}
        region = cluster_double_conformal(values, alpha=0.2)
        assert region.vacuous  # across-quantile of two endpoints saturates

    def test_pooled_equal_sizes_reduce_to_exchangeable(self):
        rng = np.random.default_rng(5)
        chunks = {f"c{i}": rng.normal(size=7) for i in range(6)}
        pooled = cluster_pooled_cdf(chunks, 0.25)
        direct = response_upper_bound(np.concatenate(list(chunks.values())), 0.25)
        assert pooled.upper == direct.upper

    def test_pooled_weights_clusters_equally_not_by_size(self):
        values = {"tiny": np.array([0.0]), "big": np.arange(1.0, 100.0)}
        region = cluster_pooled_cdf(values, alpha=0.25)
        # Hand-computed pooled CDF: finite mass (99 + j) / 248 at value j,
        # first reaching 0.75 at j = 87.
        assert region.upper == 87.0
        by_unit = response_upper_bound(np.concatenate(list(values.values())), 0.25)
        assert by_unit.upper == 75.0

    def test_pooled_single_cluster_matches_within_cluster_engine(self):
        values = {"only": np.array([1.0, 2.0, 3.0, 4.0])}
        region = cluster_pooled_cdf(values, alpha=0.25)
        assert region.upper == 4.0

    def test_observed_cluster_quantile(self):
        cluster = np.repeat(["a", "b"], 4)
        ctx = _ctx([1, 2, 3, 4, 9, 9, 9, 9], alpha=0.25, cluster=cluster)
        region = observed_cluster_interval(ctx, "a", NO_X)
        assert (region.lower, region.upper) == (-4.0, 4.0)

    def test_observed_cluster_size_one_saturates(self):
        # One calibration score saturates once ceil((1 - alpha) * 2) = 2,
        # i.e. for any alpha below one half.
        cluster = np.array(["a", "b", "b", "b"], dtype=object)
        ctx = _ctx([1, 2, 3, 4], alpha=0.4, cluster=cluster)
        with pytest.warns(VacuousRegionWarning):
            region = observed_cluster_interval(ctx, "a", NO_X)
        assert region.vacuous

    def test_observed_cluster_size_one_alpha_half_still_finite(self):
        # ceil(0.5 * 2) = 1, so the single score itself is the quantile.
        cluster = np.array(["a", "b", "b", "b"], dtype=object)
        ctx = _ctx([1, 2, 3, 4], alpha=0.5, cluster=cluster)
        region = observed_cluster_interval(ctx, "a", NO_X)
        assert (region.lower, region.upper) == (-1.0, 1.0)

    def test_observed_only_cluster_equals_full_sample(self):
        cluster = np.array(["z"] * 5, dtype=object)
        ctx = _ctx([1, 2, 3, 4, 5], alpha=0.25, cluster=cluster)
        restricted = observed_cluster_interval(ctx, "z", NO_X)
        full = split_interval_exchangeable(ctx, NO_X, check_design=False)
        assert (restricted.lower, restricted.upper) == (full.lower, full.upper)


class TestPostStratification:
    def _srs_sample(self, strata):
        n = len(strata)
        pop = _pop_from_y(np.arange(n, dtype=float), stratum=np.asarray(strata, dtype=object))
        return _census(pop)

    def test_proportional_sample_gives_equal_weights(self):
        sample = self._srs_sample(["a", "a", "b", "b"])
        w, tails = poststrat_weights(sample, {"a": 50, "b": 50})
        assert np.all(w == 25.0)
        assert tails == {"a": 25.0, "b": 25.0}

    def test_arithmetic_example(self):
        sample = self._srs_sample(["a"] * 5 + ["b"] * 5)
        w, tails = poststrat_weights(sample, {"a": 90, "b": 10})
        assert np.all(w[:5] == 18.0) and np.all(w[5:] == 2.0)
        assert tails == {"a": 18.0, "b": 2.0}

    def test_doubling_sizes_leaves_shift_weights_unchanged(self):
        sample = self._srs_sample(["a"] * 5 + ["b"] * 5)
        w1, t1 = poststrat_weights(sample, {"a": 90, "b": 10})
        w2, t2 = poststrat_weights(sample, {"a": 180, "b": 20})
        p1 = normalize_shift_weights(WeightedScores(np.zeros(10), w1, t1["a"]))
        p2 = normalize_shift_weights(WeightedScores(np.zeros(10), w2, t2["a"]))
        assert np.allclose(p1[0], p2[0], rtol=1e-12) and p1[1] == pytest.approx(p2[1], rel=1e-12)

    def test_unknown_stratum_size_rejected(self):
        sample = self._srs_sample(["a", "b"])
        with pytest.raises(ValueError, match="no known population size"):
            poststrat_weights(sample, {"a": 10})

    def test_unobserved_stratum_has_no_tail_weight(self):
        sample = self._srs_sample(["a", "a"])
        _, tails = poststrat_weights(sample, {"a": 10, "ghost": 5})
        assert "ghost" not in tails


class TestPredictionRegion:
    def test_interval_validation(self):
        with pytest.raises(ValueError):
            PredictionRegion.interval(2.0, 1.0, 0.8, "m")
        with pytest.raises(ValueError):
            PredictionRegion.interval(0.0, 1.0, 1.5, "m")

    def test_vacuous_flag_from_nonfinite_floats(self):
        region = PredictionRegion.interval(-np.inf, np.inf, 0.9, "m")
        assert region.vacuous
        assert region.lower is NEG_INFINITY and region.upper is INFINITY

    def test_contains_with_sentinels(self):
        region = PredictionRegion.interval(NEG_INFINITY, 3.0, 0.8, "m")
        assert region.contains(-1e308) and region.contains(3.0)
        assert not region.contains(3.5)
        assert region.width() == np.inf

    def test_empty_interval(self):
        region = PredictionRegion.empty_interval(0.8, "m", notes=("why",))
        assert region.empty and not region.contains(0.0) and region.width() == 0.0
