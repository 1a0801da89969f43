"""Prediction-region engines for each supported sampling design.

Every engine composes a score source with a padded quantile and returns a
PredictionRegion. Survey-weighted engines take the calibration units' base
weights plus the weight the test unit would have carried under the same
design; with all weights equal they reduce bit for bit to their
exchangeable counterparts.

When the padded quantile lands on the infinite point mass the region is the
whole real line (or the full label set). That outcome is legal and flagged,
never silently truncated: callers that want a bounded region must lower the
confidence level or bring more calibration data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .designs import DesignKind, DrawnSample
from .population import FinitePopulation
from .quantiles import (
    INFINITY,
    NEG_INFINITY,
    PaddedQuantileQuery,
    conformal_quantile_unweighted,
    conformal_quantile_weighted,
)
from .scores import ABS_RESIDUAL, ONE_MINUS_PROB, ScoreModel, WeightedScores, fit_ols, score_batch

INTERVAL = "interval"
SET = "set"

_EXCHANGEABLE_KINDS = {DesignKind.SRSWR, DesignKind.SRSWOR}


class VacuousRegionWarning(UserWarning):
    """The region is the whole real line or the full label set."""


class NonExchangeableDesignError(ValueError):
    """Raised when the exchangeable engine meets a weighted design."""


def _as_bound(value):
    if value is INFINITY or value is NEG_INFINITY:
        return value
    value = float(value)
    if math.isinf(value):
        return INFINITY if value > 0 else NEG_INFINITY
    return value


@dataclass(frozen=True)
class PredictionRegion:
    """An interval (possibly unbounded on either side) or a label set."""

    kind: str
    level: float
    method: str
    lower: object = None
    upper: object = None
    labels: frozenset | None = None
    n_classes: int | None = None
    vacuous: bool = False
    empty: bool = False
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie strictly inside (0, 1)")
        if self.kind == INTERVAL:
            if not self.empty and self.lower > self.upper:
                raise ValueError("interval lower bound exceeds upper bound")
        elif self.kind == SET:
            if self.labels is None or self.n_classes is None:
                raise ValueError("label-set regions need labels and n_classes")
        else:
            raise ValueError(f"unknown region kind: {self.kind!r}")

    @classmethod
    def interval(cls, lower, upper, level, method, notes=()):
        lower, upper = _as_bound(lower), _as_bound(upper)
        vacuous = lower is NEG_INFINITY and upper is INFINITY
        return cls(
            kind=INTERVAL,
            level=level,
            method=method,
            lower=lower,
            upper=upper,
            vacuous=vacuous,
            notes=tuple(notes),
        )

    @classmethod
    def vacuous_interval(cls, level, method, notes=()):
        return cls.interval(NEG_INFINITY, INFINITY, level, method, notes=notes)

    @classmethod
    def empty_interval(cls, level, method, notes=()):
        return cls(kind=INTERVAL, level=level, method=method, empty=True, notes=tuple(notes))

    @classmethod
    def label_set(cls, labels, n_classes, level, method, notes=()):
        labels = frozenset(int(c) for c in labels)
        return cls(
            kind=SET,
            level=level,
            method=method,
            labels=labels,
            n_classes=int(n_classes),
            vacuous=len(labels) == n_classes,
            empty=len(labels) == 0,
            notes=tuple(notes),
        )

    def contains(self, value) -> bool:
        if self.empty:
            return False
        if self.kind == SET:
            return int(value) in self.labels
        return self.lower <= value and value <= self.upper

    def width(self) -> float:
        if self.kind != INTERVAL:
            raise ValueError("width is only defined for intervals")
        if self.empty:
            return 0.0
        return float(self.upper) - float(self.lower)


@dataclass(eq=False)
class CalibrationContext:
    """Calibration half of a split sample plus the fitted model.

    The model must have been fitted on the disjoint proper-training half
    (design_split guarantees disjointness); scores are computed eagerly.
    ``model`` may be None for unsupervised use, in which case only the raw
    calibration responses are available.
    """

    population: FinitePopulation
    sample: DrawnSample
    model: ScoreModel | None
    alpha: float
    scores: np.ndarray | None = field(init=False, default=None)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly inside (0, 1)")
        if self.model is not None:
            x = self.population.x_of(self.sample.unit_ids)
            y = self.population.y_of(self.sample.unit_ids)
            self.scores = score_batch(self.model, x, y)

    @property
    def responses(self) -> np.ndarray:
        return self.population.y_of(self.sample.unit_ids)


def _finite_or_warn(quantile, level, method):
    if quantile is INFINITY:
        warnings.warn(
            f"{method}: calibration mass below the target level; returning the vacuous region",
            VacuousRegionWarning,
            stacklevel=3,
        )
        return None
    return float(quantile)


def _require_regression(ctx: CalibrationContext, engine: str) -> None:
    if ctx.model is None or ctx.model.score_kind != ABS_RESIDUAL:
        raise ValueError(f"{engine} needs a fitted absolute-residual model")


def _point_prediction(ctx: CalibrationContext, x_test) -> float:
    x = np.asarray(x_test, dtype=np.float64).reshape(1, -1)
    if ctx.model.covariate_dim == 0:
        x = x.reshape(1, 0)
    return float(ctx.model.predict(x)[0])


def split_interval_exchangeable(
    ctx: CalibrationContext, x_test, *, check_design: bool = True, method: str = "split"
) -> PredictionRegion:
    """f(x_test) +/- the padded quantile of the calibration residuals.

    Valid when the calibration design is exchangeable (simple random
    sampling with or without replacement). Pass check_design=False to run
    it anyway as a design-ignoring baseline.
    """
    _require_regression(ctx, "split_interval_exchangeable")
    if check_design and ctx.sample.design.kind not in _EXCHANGEABLE_KINDS:
        raise NonExchangeableDesignError(
            f"design {ctx.sample.design.kind.value!r} is not exchangeable; "
            "use split_interval_weighted with the unit base weights"
        )
    level = 1.0 - ctx.alpha
    q = conformal_quantile_unweighted(ctx.scores, level)
    q = _finite_or_warn(q, level, method)
    if q is None:
        return PredictionRegion.vacuous_interval(level, method)
    center = _point_prediction(ctx, x_test)
    return PredictionRegion.interval(center - q, center + q, level, method)


def split_interval_weighted(
    ctx: CalibrationContext, x_test, test_weight: float, *, method: str = "split+weighted"
) -> PredictionRegion:
    """Survey-weighted split interval.

    Calibration residuals carry the sample's base weights; ``test_weight``
    is the base weight the test unit would have had under the same design
    and becomes the padding mass. Uniform weights reduce this exactly to
    split_interval_exchangeable. Passing the largest weight in the
    population is a strictly conservative fallback when the test unit's
    true weight is unknown.
    """
    _require_regression(ctx, "split_interval_weighted")
    if not test_weight > 0:
        raise ValueError("test_weight must be strictly positive")
    level = 1.0 - ctx.alpha
    ws = WeightedScores(ctx.scores, ctx.sample.base_weight, float(test_weight))
    q = conformal_quantile_weighted(PaddedQuantileQuery(level, ws))
    q = _finite_or_warn(q, level, method)
    if q is None:
        return PredictionRegion.vacuous_interval(level, method)
    center = _point_prediction(ctx, x_test)
    return PredictionRegion.interval(center - q, center + q, level, method)


def weight_sensitivity(ctx: CalibrationContext, x_test, weight_grid) -> list[PredictionRegion]:
    """Regions across a grid of plausible test weights (sensitivity mode)."""
    return [
        split_interval_weighted(ctx, x_test, w, method=f"split+weighted[w={float(w):g}]")
        for w in weight_grid
    ]


@dataclass(frozen=True)
class GridSpec:
    """Candidate-response grid for full conformal.

    Defaults to 200 equally spaced points spanning the training responses
    extended by one full range on each side.
    """

    n_points: int = 200
    lo: float | None = None
    hi: float | None = None

    def resolve(self, y: np.ndarray) -> np.ndarray:
        lo, hi = self.lo, self.hi
        if lo is None or hi is None:
            span = float(y.max() - y.min()) or 1.0
            lo = float(y.min()) - span if lo is None else lo
            hi = float(y.max()) + span if hi is None else hi
        return np.linspace(lo, hi, self.n_points)


def full_conformal_interval(
    x,
    y,
    x_test,
    alpha: float,
    grid: GridSpec | None = None,
    weights=None,
    test_weight: float | None = None,
    fit: Callable = fit_ols,
    method: str = "full",
) -> PredictionRegion:
    """Full conformal by grid search over candidate responses.

    For each candidate g the model is refit on the n+1 augmented points and
    g is kept when its own score is at most the padded quantile of the
    augmented scores. The fitting algorithm must treat rows symmetrically
    (the default least-squares fitter does; asymmetric learners void the
    guarantee and are not detected). The returned interval is the hull of
    kept grid values; a non-contiguous keep set is hulled with a note.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    x_test = np.asarray(x_test, dtype=np.float64).reshape(1, -1)
    n = y.shape[0]
    level = 1.0 - alpha
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if test_weight is None or not test_weight > 0:
            raise ValueError("weighted full conformal needs a positive test_weight")
    grid_values = (grid or GridSpec()).resolve(y)
    x_aug = np.vstack([x, x_test])
    keep = np.zeros(grid_values.shape[0], dtype=bool)
    for i, g in enumerate(grid_values):
        y_aug = np.append(y, g)
        model = fit(x_aug, y_aug)
        scores = score_batch(model, x_aug, y_aug)
        own = scores[-1]
        if weights is None:
            rank = math.ceil(level * (n + 1))
            q = float(np.partition(scores, rank - 1)[rank - 1])
            keep[i] = own <= q
        else:
            ws = WeightedScores(scores[:-1], weights, float(test_weight))
            q = conformal_quantile_weighted(PaddedQuantileQuery(level, ws))
            keep[i] = True if q is INFINITY else own <= q
    if not keep.any():
        return PredictionRegion.empty_interval(
            level, method, notes=("no grid value conformed; widen the grid or lower the level",)
        )
    kept = np.nonzero(keep)[0]
    notes = []
    if np.any(np.diff(kept) > 1):
        notes.append("non-contiguous conformity set hulled")
        warnings.warn("full conformal keep set was non-contiguous; returning its hull", UserWarning)
    return PredictionRegion.interval(
        grid_values[kept[0]], grid_values[kept[-1]], level, method, notes=notes
    )


def classification_set(
    ctx: CalibrationContext, x_test, test_weight: float | None = None, *, method: str = "classification"
) -> PredictionRegion:
    """All labels whose score 1 - p_hat(label | x_test) clears the quantile."""
    if ctx.model is None or ctx.model.score_kind != ONE_MINUS_PROB:
        raise ValueError("classification_set needs a fitted class-probability model")
    level = 1.0 - ctx.alpha
    if test_weight is None:
        q = conformal_quantile_unweighted(ctx.scores, level)
    else:
        ws = WeightedScores(ctx.scores, ctx.sample.base_weight, float(test_weight))
        q = conformal_quantile_weighted(PaddedQuantileQuery(level, ws))
    k = ctx.model.n_classes
    if q is INFINITY:
        warnings.warn(
            f"{method}: calibration mass below the target level; returning all labels",
            VacuousRegionWarning,
            stacklevel=2,
        )
        return PredictionRegion.label_set(range(k), k, level, method)
    x = np.asarray(x_test, dtype=np.float64).reshape(1, -1)
    probs = ctx.model.predict(x)[0]
    labels = [c for c in range(k) if 1.0 - probs[c] <= q]
    return PredictionRegion.label_set(labels, k, level, method)


def stratified_interval(
    contexts: Mapping[str, CalibrationContext],
    x_test,
    test_stratum: str,
    test_weight: float | None = None,
) -> PredictionRegion:
    """Per-stratum conformal: only the test stratum's calibration scores.

    Each stratum is treated as its own population, so interval widths may
    differ across strata; running every stratum at the same level also
    yields marginal coverage at that level.
    """
    if test_stratum not in contexts:
        raise ValueError(f"unknown stratum {test_stratum!r}")
    ctx = contexts[test_stratum]
    if ctx.sample.n == 0:
        raise ValueError(f"stratum {test_stratum!r} has an empty calibration set")
    method = f"stratified[{test_stratum}]"
    if test_weight is None:
        return split_interval_exchangeable(ctx, x_test, check_design=False, method=method)
    return split_interval_weighted(ctx, x_test, test_weight, method=method + "+weighted")


# --- Unsupervised regions for a raw response (no covariates) ---------------


def response_upper_bound(values, alpha: float, *, method: str = "marginal") -> PredictionRegion:
    """One-sided region (-inf, q] from the padded quantile of the responses."""
    level = 1.0 - alpha
    q = conformal_quantile_unweighted(values, level)
    if q is INFINITY:
        return PredictionRegion.vacuous_interval(level, method)
    return PredictionRegion.interval(NEG_INFINITY, q, level, method)


def response_upper_bound_weighted(
    values, weights, tail_weight: float, alpha: float, *, method: str = "marginal+weighted"
) -> PredictionRegion:
    """Survey-weighted one-sided region for a raw response."""
    level = 1.0 - alpha
    ws = WeightedScores(values, weights, float(tail_weight))
    q = conformal_quantile_weighted(PaddedQuantileQuery(level, ws))
    if q is INFINITY:
        return PredictionRegion.vacuous_interval(level, method)
    return PredictionRegion.interval(NEG_INFINITY, q, level, method)


def _padded_bounds(values, weights, tail_weight, beta):
    """(lower, upper) one-sided padded bounds, each at level beta."""
    values = np.asarray(values, dtype=np.float64)
    if weights is None:
        upper = conformal_quantile_unweighted(values, beta)
        lower = conformal_quantile_unweighted(-values, beta)
    else:
        upper = conformal_quantile_weighted(
            PaddedQuantileQuery(beta, WeightedScores(values, weights, tail_weight))
        )
        lower = conformal_quantile_weighted(
            PaddedQuantileQuery(beta, WeightedScores(-values, weights, tail_weight))
        )
    lower = NEG_INFINITY if lower is INFINITY else -lower
    return lower, upper


def response_interval(
    values, alpha: float, weights=None, tail_weight: float | None = None, *, method: str = "marginal2"
) -> PredictionRegion:
    """Two-sided equal-tail region: each tail gets a padded bound at alpha/2."""
    level = 1.0 - alpha
    lower, upper = _padded_bounds(values, weights, tail_weight, 1.0 - alpha / 2.0)
    return PredictionRegion.interval(lower, upper, level, method)


# --- Cluster engines --------------------------------------------------------


def cluster_values(pop: FinitePopulation, sample: DrawnSample) -> dict[str, np.ndarray]:
    """Sampled responses grouped by the sample's cluster labels."""
    if sample.cluster_of is None:
        raise ValueError("sample carries no cluster labels")
    y = pop.y_of(sample.unit_ids)
    out: dict[str, np.ndarray] = {}
    for lab in sorted(set(sample.cluster_of)):
        out[lab] = y[sample.cluster_of == lab]
    return out


def _subsample_one_per_cluster(values_by_cluster, rng) -> np.ndarray:
    picks = []
    for lab in sorted(values_by_cluster):
        vals = np.asarray(values_by_cluster[lab], dtype=np.float64)
        picks.append(vals[rng.integers(0, vals.shape[0])])
    return np.asarray(picks)


def cluster_subsample_once(
    values_by_cluster: Mapping, alpha: float, rng, *, method: str = "cluster-sub1"
) -> PredictionRegion:
    """One unit drawn at random per cluster, then the exchangeable bound.

    The subsample is exchangeable with a unit drawn from a fresh cluster, so
    the exact marginal guarantee holds, at the price of using only one
    observation per cluster.
    """
    picks = _subsample_one_per_cluster(values_by_cluster, rng)
    return response_upper_bound(picks, alpha, method=method)


def cluster_repeated_subsample(
    values_by_cluster: Mapping, alpha: float, b: int, rng, *, method: str = "cluster-subB"
) -> PredictionRegion:
    """Average conformal p-values across b one-per-cluster subsamples.

    A candidate response is kept when its average p-value exceeds alpha.
    Because twice an average of valid p-values is again a valid p-value,
    the guaranteed coverage is 1 - 2*alpha; in practice it sits close to
    1 - alpha. The inclusion set is computed exactly: the average p-value
    is a step function constant between observed values, so no candidate
    grid is needed.
    """
    if b < 1:
        raise ValueError("need at least one subsample")
    level = 1.0 - alpha
    subsamples = [np.sort(_subsample_one_per_cluster(values_by_cluster, rng)) for _ in range(b)]
    k = subsamples[0].shape[0]
    pooled = np.unique(np.concatenate(subsamples))
    # p_b(v) = (1 + #{V_bi >= v}) / (k + 1), averaged over subsamples.
    counts = np.zeros(pooled.shape[0])
    for vals in subsamples:
        counts += k - np.searchsorted(vals, pooled, side="left")
    avg_p = (1.0 + counts / b) / (k + 1.0)
    if 1.0 / (k + 1.0) > alpha:
        # Even a value above every observation keeps an average p-value
        # above alpha, so the region is unbounded.
        return PredictionRegion.vacuous_interval(level, method)
    included = pooled[avg_p > alpha]
    if included.shape[0] == 0:
        return PredictionRegion.empty_interval(level, method, notes=("no candidate conformed",))
    return PredictionRegion.interval(NEG_INFINITY, float(included.max()), level, method)


def cluster_double_conformal(
    values_by_cluster: Mapping, alpha: float, *, method: str = "cluster-double"
) -> PredictionRegion:
    """Two-layer endpoints: within-cluster intervals, then across-cluster quantiles.

    Each cluster contributes a level 1 - alpha/2 equal-tail interval; the
    final upper bound is the padded quantile of the per-cluster uppers at
    level 1 - alpha/2, and the lower bound is the mirrored construction on
    the per-cluster lowers. Single-unit clusters contribute unbounded
    endpoints, which is legal. Empirically this overcovers, often badly.
    """
    labs = sorted(values_by_cluster)
    if len(labs) < 2:
        raise ValueError("double conformal needs at least two clusters")
    uppers, lowers = [], []
    for lab in labs:
        vals = np.asarray(values_by_cluster[lab], dtype=np.float64)
        lo, up = _padded_bounds(vals, None, None, 1.0 - alpha / 4.0)
        uppers.append(float(up) if up is not INFINITY else math.inf)
        lowers.append(float(lo) if lo is not NEG_INFINITY else -math.inf)
    level = 1.0 - alpha
    across = 1.0 - alpha / 2.0
    upper = conformal_quantile_unweighted(np.asarray(uppers), across)
    lower = conformal_quantile_unweighted(-np.asarray(lowers), across)
    lower = NEG_INFINITY if lower is INFINITY else -lower
    return PredictionRegion.interval(lower, upper, level, method)


def cluster_pooled_cdf(
    values_by_cluster: Mapping, alpha: float, *, side: str = "upper", method: str = "cluster-pool"
) -> PredictionRegion:
    """Average the per-cluster CDFs, pad with one phantom unit, invert.

    Every cluster receives equal total weight regardless of its size (unit
    weight 1/n_cluster), and the padding mass equals the average unit
    weight, so equal-size clusters reduce exactly to the exchangeable
    engine on the pooled data and a single cluster reduces to the
    within-cluster engine. Validity is asymptotic in the number of
    clusters, not finite-sample.
    """
    labs = sorted(values_by_cluster)
    values, weights = [], []
    for lab in labs:
        vals = np.asarray(values_by_cluster[lab], dtype=np.float64)
        values.append(vals)
        weights.append(np.full(vals.shape[0], 1.0 / vals.shape[0]))
    values = np.concatenate(values)
    weights = np.concatenate(weights)
    tail = float(np.mean([1.0 / np.asarray(values_by_cluster[lab]).shape[0] for lab in labs]))
    if side == "upper":
        return response_upper_bound_weighted(values, weights, tail, alpha, method=method)
    if side == "two_sided":
        return response_interval(values, alpha, weights=weights, tail_weight=tail, method=method)
    raise ValueError(f"unknown side {side!r}")


def observed_cluster_interval(
    ctx: CalibrationContext, cluster_id: str, x_test
) -> PredictionRegion:
    """Exchangeable interval using only the named, already-sampled cluster."""
    if ctx.sample.cluster_of is None:
        raise ValueError("calibration sample carries no cluster labels")
    mask = ctx.sample.cluster_of == str(cluster_id)
    if not mask.any():
        raise ValueError(f"unknown cluster {cluster_id!r}")
    restricted = CalibrationContext(
        population=ctx.population,
        sample=ctx.sample.take(np.nonzero(mask)[0]),
        model=ctx.model,
        alpha=ctx.alpha,
    )
    return split_interval_exchangeable(
        restricted, x_test, check_design=False, method=f"observed-cluster[{cluster_id}]"
    )


# --- Post-stratification ----------------------------------------------------


def poststrat_weights(
    sample: DrawnSample,
    stratum_sizes: Mapping[str, float],
    sample_counts: Mapping[str, int] | None = None,
) -> tuple[np.ndarray, dict[str, float]]:
    """Post-stratification weights N_h / n_h for an SRS sample.

    Returns the per-calibration-unit weights and a map from stratum label
    to the tail weight a test case from that stratum would use. Guarantees
    are approximate only: the training post-stratum shares are estimated by
    the realized sample counts. Strata observed zero times get no tail
    weight; requesting one is an error.
    """
    if sample.design.kind not in _EXCHANGEABLE_KINDS:
        raise ValueError("post-stratification weights assume a simple random sample")
    if sample.stratum_of is None:
        raise ValueError("sample carries no stratum labels to post-stratify on")
    labels = [str(lab) for lab in sample.stratum_of]
    if sample_counts is None:
        sample_counts = {}
        for lab in labels:
            sample_counts[lab] = sample_counts.get(lab, 0) + 1
    for lab in set(labels):
        if lab not in stratum_sizes:
            raise ValueError(f"sampled stratum {lab!r} has no known population size")
        if not stratum_sizes[lab] > 0:
            raise ValueError(f"stratum {lab!r} population size must be positive")
    unit_weights = np.array([stratum_sizes[lab] / sample_counts[lab] for lab in labels])
    tails = {
        str(lab): float(stratum_sizes[lab]) / sample_counts[lab]
        for lab in stratum_sizes
        if sample_counts.get(lab, 0) >= 1
    }
    return unit_weights, tails
