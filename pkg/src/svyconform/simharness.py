"""Monte Carlo harness: repeated sampling from a fixed finite population.

Each replicate draws a fresh sample under the configured design, builds
prediction regions under every requested method, and evaluates coverage
and length over the entire finite population (including units that were
sampled), which is exactly what the marginal guarantee promises when test
units are drawn uniformly from the population. Replicates use independent
spawned RNG streams, so parallel and serial execution produce identical
reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from ._kernels import padded_quantile_indices
from .conformal import cluster_double_conformal, cluster_repeated_subsample
from .designs import DesignKind, DesignSpec, design_split, draw, test_weights
from .population import (
    CATEGORICAL,
    ColumnSchema,
    FinitePopulation,
    SyntheticPopSpec,
    discretize_response,
    generate_population,
    load_population,
)
from .quantiles import INFINITY, conformal_quantile_unweighted, weighted_quantile_no_pad
from .scores import fit_multinomial_logit, fit_ols

TASKS = ("unsupervised", "regression", "classification")
_TASK_ENGINES = {
    "unsupervised": {"marginal", "stratified", "cluster-sub1", "cluster-subB", "cluster-double", "cluster-pool"},
    "regression": {"split"},
    "classification": {"classification"},
}
_CLUSTER_ENGINES = {"cluster-sub1", "cluster-subB", "cluster-double", "cluster-pool"}
_ONE_SIDED_ENGINES = {"marginal", "stratified", "cluster-sub1", "cluster-subB", "cluster-pool"}


def naive_quantile_baseline(scores, beta: float) -> float:
    """The unpadded ceil(beta * n) order statistic.

    Exists solely as the comparison baseline for the padded quantile; it
    carries no finite-sample guarantee and tends to undercover.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] == 0:
        raise ValueError("scores must be non-empty")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    rank = math.ceil(beta * scores.shape[0])
    return float(np.partition(scores, rank - 1)[rank - 1])


@dataclass(frozen=True)
class MethodSpec:
    """One cell of the method matrix."""

    engine: str
    use_weights: bool = False
    conformal: bool = True
    weighted_fit: bool = False
    enforce_design: bool = False
    b_subsamples: int = 20

    def __post_init__(self):
        known = set().union(*_TASK_ENGINES.values())
        if self.engine not in known:
            raise ValueError(f"unknown engine {self.engine!r}; choose from {sorted(known)}")

    @property
    def label(self) -> str:
        parts = [self.engine]
        if self.use_weights:
            parts.append("wq")
        if not self.conformal:
            parts.append("naive")
        if self.weighted_fit:
            parts.append("wfit")
        return "+".join(parts)

    def to_dict(self) -> dict:
        return {
            "engine": self.engine,
            "use_weights": self.use_weights,
            "conformal": self.conformal,
            "weighted_fit": self.weighted_fit,
            "enforce_design": self.enforce_design,
            "b_subsamples": self.b_subsamples,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MethodSpec":
        return cls(
            engine=data["engine"],
            use_weights=bool(data.get("use_weights", False)),
            conformal=bool(data.get("conformal", True)),
            weighted_fit=bool(data.get("weighted_fit", False)),
            enforce_design=bool(data.get("enforce_design", False)),
            b_subsamples=int(data.get("b_subsamples", 20)),
        )


@dataclass(frozen=True)
class PopulationSource:
    """Where the finite population comes from and how to post-process it.

    ``response="size_measure"`` swaps the size measure in as the response
    (the fully weight-informative regime). ``pps_basis="residual"`` rebuilds
    the size measure as 1 + sqrt(|r|) from full-population least-squares
    residuals, the regime where weights track model fit quality.
    """

    synthetic: SyntheticPopSpec | None = None
    path: str | None = None
    schema: ColumnSchema | None = None
    response: str = "y"
    pps_basis: str = "size"
    n_classes: int | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.path is None):
            raise ValueError("give exactly one of a synthetic spec or a file path")
        if self.path is not None and self.schema is None:
            raise ValueError("file sources need a column schema")
        if self.response not in ("y", "size_measure"):
            raise ValueError("response must be 'y' or 'size_measure'")
        if self.pps_basis not in ("size", "residual"):
            raise ValueError("pps_basis must be 'size' or 'residual'")

    def to_dict(self) -> dict:
        out: dict = {"response": self.response, "pps_basis": self.pps_basis, "n_classes": self.n_classes}
        if self.synthetic is not None:
            out["synthetic"] = {
                "n_units": self.synthetic.n_units,
                "n_strata": self.synthetic.n_strata,
                "n_clusters": self.synthetic.n_clusters,
                "covariate_dim": self.synthetic.covariate_dim,
                "noise_scale": self.synthetic.noise_scale,
                "informativeness": self.synthetic.informativeness,
                "seed": self.synthetic.seed,
            }
        else:
            out["file"] = {
                "path": self.path,
                "schema": {
                    "y": self.schema.y,
                    "x": list(self.schema.x),
                    "id": self.schema.id,
                    "stratum": self.schema.stratum,
                    "cluster": self.schema.cluster,
                    "size_measure": self.schema.size_measure,
                    "response_kind": self.schema.response_kind,
                },
            }
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "PopulationSource":
        synthetic = None
        path = None
        schema = None
        if "synthetic" in data:
            synthetic = SyntheticPopSpec(**data["synthetic"])
        if "file" in data:
            path = data["file"]["path"]
            raw = dict(data["file"]["schema"])
            raw["x"] = tuple(raw.get("x", ()))
            schema = ColumnSchema(**raw)
        return cls(
            synthetic=synthetic,
            path=path,
            schema=schema,
            response=data.get("response", "y"),
            pps_basis=data.get("pps_basis", "size"),
            n_classes=data.get("n_classes"),
        )


@dataclass(frozen=True)
class Band:
    """Acceptance band on one reported metric."""

    method: str
    alpha: float
    lo: float
    hi: float
    metric: str = "coverage"

    def to_dict(self) -> dict:
        return {"method": self.method, "alpha": self.alpha, "lo": self.lo, "hi": self.hi, "metric": self.metric}


@dataclass(frozen=True)
class ExperimentConfig:
    population: PopulationSource
    design: DesignSpec
    methods: tuple[MethodSpec, ...]
    alphas: tuple[float, ...] = (0.2, 0.1)
    replicates: int = 1000
    split_fraction: float | None = None
    task: str = "unsupervised"
    seed: int = 0
    n_jobs: int = 1
    bands: tuple[Band, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "bands", tuple(self.bands))
        if not self.methods:
            raise ValueError("the method matrix is empty")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate method labels: {labels}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValueError("every alpha must lie strictly inside (0, 1)")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task in ("regression", "classification") and self.split_fraction is None:
            raise ValueError(f"{self.task} experiments need a split_fraction")
        for m in self.methods:
            if m.engine not in _TASK_ENGINES[self.task]:
                raise ValueError(f"engine {m.engine!r} is not valid for task {self.task!r}")

    def to_dict(self) -> dict:
        return {
            "population": self.population.to_dict(),
            "design": self.design.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "alphas": list(self.alphas),
            "replicates": self.replicates,
            "split_fraction": self.split_fraction,
            "task": self.task,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
            "bands": [b.to_dict() for b in self.bands],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        return cls(
            population=PopulationSource.from_dict(data["population"]),
            design=DesignSpec.from_dict(data["design"]),
            methods=tuple(MethodSpec.from_dict(m) for m in data["methods"]),
            alphas=tuple(data.get("alphas", (0.2, 0.1))),
            replicates=int(data.get("replicates", 1000)),
            split_fraction=data.get("split_fraction"),
            task=data.get("task", "unsupervised"),
            seed=int(data.get("seed", 0)),
            n_jobs=int(data.get("n_jobs", 1)),
            bands=tuple(Band(**b) for b in data.get("bands", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def resolve_population(cfg: ExperimentConfig) -> FinitePopulation:
    """Build the experiment's finite population, applying post-processing."""
    src = cfg.population
    if src.synthetic is not None:
        pop = generate_population(src.synthetic)
    else:
        pop, _ = load_population(src.path, src.schema)
    if src.response == "size_measure":
        if pop.size_measure is None:
            raise ValueError("response='size_measure' needs a size measure")
        pop = FinitePopulation(
            ids=pop.ids.copy(),
            x=pop.x.copy(),
            y=pop.size_measure.copy(),
            stratum=None if pop.stratum is None else pop.stratum.copy(),
            cluster=None if pop.cluster is None else pop.cluster.copy(),
            size_measure=pop.size_measure.copy(),
        )
    if src.pps_basis == "residual":
        model = fit_ols(pop.x, pop.y)
        resid = np.abs(pop.y - model.predict(pop.x))
        pop = FinitePopulation(
            ids=pop.ids.copy(),
            x=pop.x.copy(),
            y=pop.y.copy(),
            stratum=None if pop.stratum is None else pop.stratum.copy(),
            cluster=None if pop.cluster is None else pop.cluster.copy(),
            size_measure=1.0 + np.sqrt(resid),
        )
    if src.n_classes is not None:
        pop = discretize_response(pop, src.n_classes)
    return pop


@dataclass(frozen=True)
class MethodResult:
    method: str
    alpha: float
    coverage_mean: float | None = None
    coverage_ci: tuple[float, float] | None = None
    length_mean: float | None = None
    length_ci: tuple[float, float] | None = None
    vacuous_rate: float | None = None
    stratum_coverage: dict | None = None
    skipped: bool = False
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": self.alpha,
            "coverage_mean": self.coverage_mean,
            "coverage_ci": list(self.coverage_ci) if self.coverage_ci else None,
            "length_mean": self.length_mean,
            "length_ci": list(self.length_ci) if self.length_ci else None,
            "vacuous_rate": self.vacuous_rate,
            "stratum_coverage": self.stratum_coverage,
            "skipped": self.skipped,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "MethodResult":
        return cls(
            method=data["method"],
            alpha=float(data["alpha"]),
            coverage_mean=data.get("coverage_mean"),
            coverage_ci=tuple(data["coverage_ci"]) if data.get("coverage_ci") else None,
            length_mean=data.get("length_mean"),
            length_ci=tuple(data["length_ci"]) if data.get("length_ci") else None,
            vacuous_rate=data.get("vacuous_rate"),
            stratum_coverage=data.get("stratum_coverage"),
            skipped=bool(data.get("skipped", False)),
            reason=data.get("reason"),
        )


@dataclass(frozen=True)
class CoverageReport:
    config: ExperimentConfig
    results: tuple[MethodResult, ...]
    replicates_run: int

    def result(self, method: str, alpha: float) -> MethodResult:
        for r in self.results:
            if r.method == method and math.isclose(r.alpha, alpha):
                return r
        raise KeyError(f"no result for method={method!r} alpha={alpha}")

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "replicates_run": self.replicates_run,
            "results": [r.to_dict() for r in self.results],
        }


# --- Per-replicate evaluation ------------------------------------------------


class _PopulationCache:
    """Derived arrays shared across replicates (read-only)."""

    def __init__(self, pop: FinitePopulation, cfg: ExperimentConfig):
        self.pop = pop
        self.n = pop.n_units
        self.y = np.asarray(pop.y, dtype=np.float64)
        self.y_sorted = np.sort(self.y)
        self.design_matrix = np.hstack([np.ones((self.n, 1)), pop.x])
        self.tail_weights = None
        if cfg.design.kind in (DesignKind.SRSWR, DesignKind.SRSWOR, DesignKind.PPSWR, DesignKind.PPSWOR):
            if cfg.design.kind in (DesignKind.PPSWR, DesignKind.PPSWOR) and pop.size_measure is None:
                self.tail_weights = None
            else:
                self.tail_weights = test_weights(pop, cfg.design)
        self.strata = {}
        if pop.stratum is not None:
            for lab in sorted(set(pop.stratum)):
                mask = pop.stratum == lab
                self.strata[lab] = np.sort(self.y[mask])
        if pop.response_kind == CATEGORICAL:
            self.labels = pop.y.astype(np.int64)
            self.n_classes = pop.n_classes


def _frac_leq(sorted_values: np.ndarray, threshold) -> float:
    if threshold is INFINITY:
        return 1.0
    return float(np.searchsorted(sorted_values, float(threshold), side="right")) / sorted_values.shape[0]


def _check_method(cfg: ExperimentConfig, pop: FinitePopulation, m: MethodSpec) -> str | None:
    """Reason this method cannot (or must not) run, else None."""
    design = cfg.design
    weighted_kinds = (DesignKind.PPSWR, DesignKind.PPSWOR)
    if m.engine in _CLUSTER_ENGINES:
        if design.kind is not DesignKind.CLUSTER:
            return f"{m.engine} needs a cluster design, got {design.kind.value}"
        if m.use_weights:
            return f"{m.engine} does not support survey-weighted quantiles"
    if m.engine == "stratified":
        if design.kind is not DesignKind.STRATIFIED:
            return f"stratified engine needs a stratified design, got {design.kind.value}"
        if m.use_weights:
            return "stratified engine does not support survey-weighted quantiles"
        missing = [lab for lab in sorted(set(pop.stratum)) if lab not in design.n]
        if missing:
            return f"allocation covers no units in strata {missing}"
    if m.use_weights and design.kind not in weighted_kinds:
        return f"survey-weighted quantiles need an unequal-probability design, got {design.kind.value}"
    if m.enforce_design and not m.use_weights and design.kind in weighted_kinds:
        return (
            f"design {design.kind.value} is not exchangeable and the method ignores its weights "
            "(enforce_design is on); use a survey-weighted variant"
        )
    if m.weighted_fit and cfg.task == "unsupervised":
        return "weighted_fit has no effect without a fitted model"
    return None


def _scalar_quantile(values, weights, m: MethodSpec, level: float):
    if m.conformal:
        if m.use_weights:
            raise AssertionError("weighted conformal quantiles are per-unit; not scalar")
        return conformal_quantile_unweighted(values, level)
    if m.use_weights:
        return weighted_quantile_no_pad(values, weights, level)
    return naive_quantile_baseline(values, level)


def _weighted_conformal_eval(cache, scores, weights, level, pop_scores):
    """Per-unit padded weighted quantiles against per-unit population scores."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    cum = np.cumsum(weights[order])
    idx = padded_quantile_indices(cum, float(cum[-1]), cache.tail_weights, level)
    padded = np.append(sorted_scores, np.inf)
    q = padded[idx]
    covered = pop_scores <= q
    vac = idx == scores.shape[0]
    return float(covered.mean()), q, float(vac.mean())


def _replicate_row(cache: _PopulationCache, cfg: ExperimentConfig, runnable, seed_seq):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    pop = cache.pop
    sample = draw(pop, cfg.design, rng)

    models = {}
    calib = sample
    if cfg.task in ("regression", "classification"):
        train, calib = design_split(sample, cfg.split_fraction, rng)
        need_fits = {m.weighted_fit for m in runnable}
        x_tr = pop.x_of(train.unit_ids)
        y_tr = pop.y_of(train.unit_ids)
        for weighted in need_fits:
            w = train.base_weight if weighted else None
            if cfg.task == "regression":
                models[weighted] = fit_ols(x_tr, y_tr, weights=w)
            else:
                models[weighted] = fit_multinomial_logit(x_tr, y_tr, n_classes=cache.n_classes, weights=w)

    calib_y = pop.y_of(calib.unit_ids).astype(np.float64)
    calib_w = calib.base_weight

    out = {}
    for m in runnable:
        for alpha in cfg.alphas:
            out[(m.label, alpha)] = _eval_method(cache, cfg, m, alpha, rng, sample, calib, calib_y, calib_w, models)
    return out


def _eval_method(cache, cfg, m, alpha, rng, sample, calib, calib_y, calib_w, models):
    level = 1.0 - alpha
    length = math.nan
    stratum_cov = None

    if m.engine == "marginal":
        if m.use_weights and m.conformal:
            cov, _, vac = _weighted_conformal_eval(cache, calib_y, calib_w, level, cache.y)
        else:
            q = _scalar_quantile(calib_y, calib_w, m, level)
            cov = _frac_leq(cache.y_sorted, q)
            vac = 1.0 if q is INFINITY else 0.0
        return cov, length, vac, None

    if m.engine == "stratified":
        total = 0.0
        vac_total = 0.0
        stratum_cov = {}
        for lab, pop_sorted in cache.strata.items():
            vals = calib_y[calib.stratum_of == lab]
            q = _scalar_quantile(vals, None, m, level)
            c = _frac_leq(pop_sorted, q)
            stratum_cov[lab] = c
            share = pop_sorted.shape[0] / cache.n
            total += share * c
            vac_total += share * (1.0 if q is INFINITY else 0.0)
        return total, length, vac_total, stratum_cov

    if m.engine in _CLUSTER_ENGINES:
        y_sample = cache.pop.y_of(sample.unit_ids).astype(np.float64)
        groups = {lab: y_sample[sample.cluster_of == lab] for lab in sorted(set(sample.cluster_of))}
        if m.engine == "cluster-sub1":
            picks = np.array(
                [g[rng.integers(0, g.shape[0])] for g in (groups[lab] for lab in sorted(groups))]
            )
            q = _scalar_quantile(picks, None, m, level)
            return _frac_leq(cache.y_sorted, q), length, 1.0 if q is INFINITY else 0.0, None
        if m.engine == "cluster-subB":
            region = cluster_repeated_subsample(groups, alpha, m.b_subsamples, rng)
            cov = 1.0 if region.vacuous else _frac_leq(cache.y_sorted, float(region.upper))
            return cov, length, 1.0 if region.vacuous else 0.0, None
        if m.engine == "cluster-double":
            region = cluster_double_conformal(groups, alpha)
            lo, hi = float(region.lower), float(region.upper)
            below = np.searchsorted(cache.y_sorted, lo, side="left") if math.isfinite(lo) else 0
            upto = np.searchsorted(cache.y_sorted, hi, side="right") if math.isfinite(hi) else cache.n
            cov = (upto - below) / cache.n
            width = hi - lo
            return cov, (width if math.isfinite(width) else math.nan), 1.0 if region.vacuous else 0.0, None
        # cluster-pool
        values = np.concatenate([groups[lab] for lab in sorted(groups)])
        weights = np.concatenate([np.full(groups[lab].shape[0], 1.0 / groups[lab].shape[0]) for lab in sorted(groups)])
        tail = float(np.mean([1.0 / groups[lab].shape[0] for lab in sorted(groups)]))
        if m.conformal:
            order = np.argsort(values, kind="stable")
            cum = np.cumsum(weights[order])
            idx = int(padded_quantile_indices(cum, float(cum[-1]), np.asarray([tail]), level)[0])
            q = INFINITY if idx >= values.shape[0] else float(values[order][idx])
        else:
            q = weighted_quantile_no_pad(values, weights, level)
        return _frac_leq(cache.y_sorted, q), length, 1.0 if q is INFINITY else 0.0, None

    if m.engine == "split":
        model = models[m.weighted_fit]
        scores = np.abs(calib_y - model.predict(cache.pop.x_of(calib.unit_ids)))
        pop_resid = np.abs(cache.y - (cache.design_matrix @ model.coef))
        if m.use_weights and m.conformal:
            cov, q, vac = _weighted_conformal_eval(cache, scores, calib_w, level, pop_resid)
            finite = np.isfinite(q)
            length = float(2.0 * q[finite].mean()) if finite.any() else math.nan
            return cov, length, vac, None
        q = _scalar_quantile(scores, calib_w, m, level)
        if q is INFINITY:
            return 1.0, math.nan, 1.0, None
        return float((pop_resid <= q).mean()), 2.0 * float(q), 0.0, None

    if m.engine == "classification":
        model = models[m.weighted_fit]
        probs_cal = model.predict(cache.pop.x_of(calib.unit_ids))
        cal_labels = cache.pop.y_of(calib.unit_ids).astype(np.int64)
        scores = 1.0 - probs_cal[np.arange(calib.n), cal_labels]
        probs_pop = model.predict(cache.pop.x)
        pop_scores = 1.0 - probs_pop[np.arange(cache.n), cache.labels]
        if m.use_weights and m.conformal:
            cov, q, vac = _weighted_conformal_eval(cache, scores, calib_w, level, pop_scores)
            sizes = (1.0 - probs_pop <= q[:, None]).sum(axis=1)
            return cov, float(sizes.mean()), vac, None
        q = _scalar_quantile(scores, calib_w, m, level)
        if q is INFINITY:
            return 1.0, float(cache.n_classes), 1.0, None
        cov = float((pop_scores <= q).mean())
        sizes = (1.0 - probs_pop <= q).sum(axis=1)
        return cov, float(sizes.mean()), 0.0, None

    raise AssertionError(f"unhandled engine {m.engine}")


def _run_chunk(args):
    cache, cfg, runnable, seeds = args
    return [_replicate_row(cache, cfg, runnable, s) for s in seeds]


def run_experiment(cfg: ExperimentConfig, population: FinitePopulation | None = None) -> CoverageReport:
    """Run the full replicate loop and aggregate a CoverageReport.

    Deterministic given the config (including its seed); incompatible
    method/design combinations are reported as skipped rows with reasons
    rather than aborting the run.
    """
    pop = population if population is not None else resolve_population(cfg)
    skipped: dict[str, str] = {}
    runnable: list[MethodSpec] = []
    for m in cfg.methods:
        reason = _check_method(cfg, pop, m)
        if reason is None:
            runnable.append(m)
        else:
            skipped[m.label] = reason

    cache = _PopulationCache(pop, cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    rows: list[dict] = []
    if runnable:
        if cfg.n_jobs > 1:
            chunks = [seeds[i :: cfg.n_jobs] for i in range(cfg.n_jobs)]
            with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
                chunk_rows = list(pool.map(_run_chunk, [(cache, cfg, runnable, c) for c in chunks]))
            # Re-interleave to replicate order for a deterministic reduction.
            rows = [None] * cfg.replicates
            for j, chunk in enumerate(chunk_rows):
                for i, row in enumerate(chunk):
                    rows[j + i * cfg.n_jobs] = row
        else:
            rows = [_replicate_row(cache, cfg, runnable, s) for s in seeds]

    results = []
    for m in cfg.methods:
        for alpha in cfg.alphas:
            if m.label in skipped:
                results.append(
                    MethodResult(method=m.label, alpha=alpha, skipped=True, reason=skipped[m.label])
                )
                continue
            cov = np.array([rows[r][(m.label, alpha)][0] for r in range(cfg.replicates)])
            lengths = np.array([rows[r][(m.label, alpha)][1] for r in range(cfg.replicates)])
            vac = np.array([rows[r][(m.label, alpha)][2] for r in range(cfg.replicates)])
            stratum_cov = None
            if m.engine == "stratified":
                per = [rows[r][(m.label, alpha)][3] for r in range(cfg.replicates)]
                labs = sorted(per[0])
                stratum_cov = {lab: float(np.mean([p[lab] for p in per])) for lab in labs}
            finite = np.isfinite(lengths)
            length_mean, length_ci = None, None
            if finite.any():
                vals = lengths[finite]
                length_mean = float(vals.mean())
                length_ci = _mc_ci(vals)
            results.append(
                MethodResult(
                    method=m.label,
                    alpha=alpha,
                    coverage_mean=float(cov.mean()),
                    coverage_ci=_mc_ci(cov),
                    length_mean=length_mean,
                    length_ci=length_ci,
                    vacuous_rate=float(vac.mean()),
                    stratum_coverage=stratum_cov,
                )
            )
    return CoverageReport(config=cfg, results=tuple(results), replicates_run=cfg.replicates)


def _mc_ci(values: np.ndarray) -> tuple[float, float]:
    """Monte Carlo confidence interval: mean +/- 2 * SD / sqrt(R)."""
    mean = float(values.mean())
    if values.shape[0] < 2:
        return (mean, mean)
    half = 2.0 * float(values.std(ddof=1)) / math.sqrt(values.shape[0])
    return (mean - half, mean + half)


# --- Report emission ---------------------------------------------------------

_CSV_FIELDS = [
    "method",
    "alpha",
    "coverage_mean",
    "coverage_lo",
    "coverage_hi",
    "length_mean",
    "length_lo",
    "length_hi",
    "vacuous_rate",
    "stratum_coverage",
    "skipped",
    "reason",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _results_csv_text(report_results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for r in report_results:
        writer.writerow(
            [
                r.method,
                repr(float(r.alpha)),
                _fmt(r.coverage_mean),
                _fmt(r.coverage_ci[0] if r.coverage_ci else None),
                _fmt(r.coverage_ci[1] if r.coverage_ci else None),
                _fmt(r.length_mean),
                _fmt(r.length_ci[0] if r.length_ci else None),
                _fmt(r.length_ci[1] if r.length_ci else None),
                _fmt(r.vacuous_rate),
                json.dumps(r.stratum_coverage, sort_keys=True) if r.stratum_coverage else "",
                _fmt(r.skipped),
                r.reason or "",
            ]
        )
    return buf.getvalue()


def _table_text(report: CoverageReport) -> str:
    lines = []
    header = f"{'method':28s} {'alpha':>6s} {'coverage (95% MC CI)':>26s} {'length':>22s} {'vacuous':>8s}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.results:
        if r.skipped:
            lines.append(f"{r.method:28s} {r.alpha:6.2f} {'skipped: ' + (r.reason or ''):s}")
            continue
        cov = f"{r.coverage_mean:.4f} ({r.coverage_ci[0]:.4f}, {r.coverage_ci[1]:.4f})"
        if r.length_mean is None:
            length = "one-sided"
        else:
            length = f"{r.length_mean:.3f} ({r.length_ci[0]:.3f}, {r.length_ci[1]:.3f})"
        lines.append(f"{r.method:28s} {r.alpha:6.2f} {cov:>26s} {length:>22s} {r.vacuous_rate:8.4f}")
    return "\n".join(lines) + "\n"


def emit_report(report: CoverageReport, format: str, path) -> None:
    """Write a report as a text table, CSV rows, or a full JSON document."""
    if not report.results:
        raise ValueError("cannot emit an empty report")
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    elif format == "csv":
        path.write_text(_results_csv_text(report.results), encoding="utf-8")
    elif format == "table":
        path.write_text(_table_text(report), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {format!r}")


def _parse_cell(text: str):
    if text == "":
        return None
    return float(text)


def read_results_csv(path) -> list[MethodResult]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            cov_lo, cov_hi = _parse_cell(row["coverage_lo"]), _parse_cell(row["coverage_hi"])
            len_lo, len_hi = _parse_cell(row["length_lo"]), _parse_cell(row["length_hi"])
            out.append(
                MethodResult(
                    method=row["method"],
                    alpha=float(row["alpha"]),
                    coverage_mean=_parse_cell(row["coverage_mean"]),
                    coverage_ci=(cov_lo, cov_hi) if cov_lo is not None else None,
                    length_mean=_parse_cell(row["length_mean"]),
                    length_ci=(len_lo, len_hi) if len_lo is not None else None,
                    vacuous_rate=_parse_cell(row["vacuous_rate"]),
                    stratum_coverage=json.loads(row["stratum_coverage"]) if row["stratum_coverage"] else None,
                    skipped=row["skipped"] == "true",
                    reason=row["reason"] or None,
                )
            )
    return out


def results_to_json_text(results) -> str:
    return json.dumps([r.to_dict() for r in results], sort_keys=True, indent=2) + "\n"


def results_from_json_text(text: str) -> list[MethodResult]:
    return [MethodResult.from_dict(d) for d in json.loads(text)]


def results_to_csv_text(results) -> str:
    return _results_csv_text(results)


def check_bands(report: CoverageReport) -> list[str]:
    """Human-readable failures for every band the report violates."""
    failures = []
    for band in report.config.bands:
        try:
            r = report.result(band.method, band.alpha)
        except KeyError:
            failures.append(f"band names unknown result {band.method!r} at alpha={band.alpha}")
            continue
        if r.skipped:
            failures.append(f"{band.method} at alpha={band.alpha} was skipped: {r.reason}")
            continue
        value = r.coverage_mean if band.metric == "coverage" else r.length_mean
        if value is None or not band.lo <= value <= band.hi:
            failures.append(
                f"{band.method} at alpha={band.alpha}: {band.metric}={value} outside [{band.lo}, {band.hi}]"
            )
    return failures
