"""Finite-population data model, CSV ingestion, and synthetic generation.

A FinitePopulation is a fixed table of N units: covariates, a response
(real or categorical), optional stratum and cluster labels, and an optional
positive size measure used by probability-proportional-to-size designs.
Populations are immutable after construction and safe to share read-only
across parallel simulation replicates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

REAL = "real"
CATEGORICAL = "categorical"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FinitePopulation:
    """N units with ids exactly 1..N, shared covariate dimension d >= 0."""

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    response_kind: str = REAL
    stratum: np.ndarray | None = None
    cluster: np.ndarray | None = None
    size_measure: np.ndarray | None = None

    def __post_init__(self):
        ids = _frozen(np.asarray(self.ids, dtype=np.int64))
        x = _frozen(np.asarray(self.x, dtype=np.float64))
        n = ids.shape[0]
        if n < 1:
            raise ValueError("a population needs at least one unit")
        if not np.array_equal(ids, np.arange(1, n + 1)):
            raise ValueError("unit ids must be exactly 1..N with no gaps or duplicates")
        if x.ndim != 2 or x.shape[0] != n:
            raise ValueError("x must be an (N, d) matrix aligned with ids")
        if self.response_kind not in (REAL, CATEGORICAL):
            raise ValueError(f"unknown response_kind: {self.response_kind!r}")
        if self.response_kind == CATEGORICAL:
            y = _frozen(np.asarray(self.y, dtype=np.int64))
            classes = np.unique(y)
            if not np.array_equal(classes, np.arange(classes.shape[0])):
                raise ValueError("categorical responses must be integer labels 0..K-1")
        else:
            y = _frozen(np.asarray(self.y, dtype=np.float64))
        if y.shape != (n,):
            raise ValueError("y must align with ids")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        for name in ("stratum", "cluster"):
            lab = getattr(self, name)
            if lab is not None:
                # Labels are normalized to strings so group lookups, config
                # allocation keys, and CSV round trips all agree.
                lab = _frozen(np.array([str(v) for v in np.asarray(lab)], dtype=object))
                if lab.shape != (n,):
                    raise ValueError(f"{name} labels must align with ids")
                object.__setattr__(self, name, lab)
        if self.size_measure is not None:
            size = _frozen(np.asarray(self.size_measure, dtype=np.float64))
            if size.shape != (n,):
                raise ValueError("size_measure must align with ids")
            if not np.all(size > 0):
                raise ValueError("size_measure must be strictly positive for every unit")
            object.__setattr__(self, "size_measure", size)

    @property
    def n_units(self) -> int:
        return self.ids.shape[0]

    @property
    def covariate_dim(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        if self.response_kind != CATEGORICAL:
            raise ValueError("n_classes is only defined for categorical responses")
        return int(self.y.max()) + 1

    def strata(self) -> list:
        return sorted(set(self.stratum)) if self.stratum is not None else []

    def clusters(self) -> list:
        return sorted(set(self.cluster)) if self.cluster is not None else []

    def x_of(self, unit_ids: np.ndarray) -> np.ndarray:
        return self.x[np.asarray(unit_ids) - 1]

    def y_of(self, unit_ids: np.ndarray) -> np.ndarray:
        return self.y[np.asarray(unit_ids) - 1]


@dataclass(frozen=True)
class SyntheticPopSpec:
    """Recipe for a deterministic synthetic population.

    informativeness in [0, 1] controls how strongly the size measure tracks
    the response: at 1 the size measure is a strictly increasing function of
    y; at 0 it is independent of y.
    """

    n_units: int
    n_strata: int = 1
    n_clusters: int = 1
    covariate_dim: int = 1
    noise_scale: float = 1.0
    informativeness: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 1:
            raise ValueError("n_units must be >= 1")
        if not 1 <= self.n_clusters <= self.n_units:
            raise ValueError("need n_units >= n_clusters >= 1")
        if not 1 <= self.n_strata <= self.n_units:
            raise ValueError("need n_units >= n_strata >= 1")
        if self.covariate_dim < 0:
            raise ValueError("covariate_dim must be >= 0")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        if not 0.0 <= self.informativeness <= 1.0:
            raise ValueError("informativeness must lie in [0, 1]")


@dataclass(frozen=True)
class ColumnSchema:
    """Column-role mapping for delimited-text ingestion.

    Regression vs. classification is decided here (response_kind), never
    inferred from the data.
    """

    y: str
    x: tuple[str, ...] = ()
    id: str | None = None
    stratum: str | None = None
    cluster: str | None = None
    size_measure: str | None = None
    response_kind: str = REAL

    def mapped_columns(self) -> list[str]:
        cols = [self.y, *self.x]
        for extra in (self.id, self.stratum, self.cluster, self.size_measure):
            if extra is not None:
                cols.append(extra)
        return cols


def load_population(path, schema: ColumnSchema) -> tuple[FinitePopulation, int]:
    """Read a comma-separated file (header row, UTF-8) into a population.

    Rows with a missing value in any mapped column are dropped; the count of
    dropped rows is returned alongside the population. Unit ids are
    reassigned 1..N in (possibly id-sorted) row order after filtering, since
    the population contract requires gap-free ids.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"population file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing_cols = [c for c in schema.mapped_columns() if c not in header]
        if missing_cols:
            raise ValueError(f"mapped columns absent from file: {', '.join(missing_cols)}")
        rows = list(reader)

    kept, dropped = [], 0
    for row in rows:
        values = [row.get(c) for c in schema.mapped_columns()]
        if any(v is None or v.strip() == "" for v in values):
            dropped += 1
            continue
        kept.append(row)
    if not kept:
        raise ValueError("no usable rows after dropping missing values")
    if schema.id is not None:
        kept.sort(key=lambda r: float(r[schema.id]))

    n = len(kept)
    x = np.array([[float(r[c]) for c in schema.x] for r in kept]).reshape(n, len(schema.x))
    if schema.response_kind == CATEGORICAL:
        y = np.array([int(float(r[schema.y])) for r in kept], dtype=np.int64)
    else:
        y = np.array([float(r[schema.y]) for r in kept])
    stratum = np.array([r[schema.stratum] for r in kept], dtype=object) if schema.stratum else None
    cluster = np.array([r[schema.cluster] for r in kept], dtype=object) if schema.cluster else None
    size = np.array([float(r[schema.size_measure]) for r in kept]) if schema.size_measure else None
    pop = FinitePopulation(
        ids=np.arange(1, n + 1),
        x=x,
        y=y,
        response_kind=schema.response_kind,
        stratum=stratum,
        cluster=cluster,
        size_measure=size,
    )
    return pop, dropped


def write_population(pop: FinitePopulation, path) -> ColumnSchema:
    """Write a population as CSV and return the schema that reads it back.

    Floats are written with repr so a write/load round trip reproduces every
    field exactly.
    """
    path = Path(path)
    x_cols = tuple(f"x{j}" for j in range(pop.covariate_dim))
    schema = ColumnSchema(
        y="y",
        x=x_cols,
        id="id",
        stratum="stratum" if pop.stratum is not None else None,
        cluster="cluster" if pop.cluster is not None else None,
        size_measure="size_measure" if pop.size_measure is not None else None,
        response_kind=pop.response_kind,
    )
    header = ["id", "y", *x_cols]
    if pop.stratum is not None:
        header.append("stratum")
    if pop.cluster is not None:
        header.append("cluster")
    if pop.size_measure is not None:
        header.append("size_measure")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(pop.n_units):
            row = [str(int(pop.ids[i]))]
            row.append(str(int(pop.y[i])) if pop.response_kind == CATEGORICAL else repr(float(pop.y[i])))
            row.extend(repr(float(v)) for v in pop.x[i])
            if pop.stratum is not None:
                row.append(str(pop.stratum[i]))
            if pop.cluster is not None:
                row.append(str(pop.cluster[i]))
            if pop.size_measure is not None:
                row.append(repr(float(pop.size_measure[i])))
            writer.writerow(row)
    return schema


def _integer_partition(weights: np.ndarray, total: int) -> np.ndarray:
    """Split `total` into len(weights) positive integers proportional to weights."""
    k = weights.shape[0]
    if total < k:
        raise ValueError("cannot give every part at least one unit")
    raw = weights / weights.sum() * (total - k)
    base = np.floor(raw).astype(np.int64)
    shortfall = int(total - k - base.sum())
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:shortfall]] += 1
    return base + 1


# Fixed generator constants: intercept and slopes
# put the response in the hundreds, the size measure is lognormal around 500
# with log-sd 0.7, stratum shares decay 3:1, and stratum/cluster structure
# enters through shifts of the first covariate.
_INTERCEPT = 500.0
_SLOPE_BASE = 25.0
_SIZE_CENTER = 500.0
_SIZE_LOG_SD = 0.7
_STRATUM_SHIFT = -1.1
_CLUSTER_SD = 0.6
_CLUSTER_SIZE_LOG_SD = 0.8


def generate_population(spec: SyntheticPopSpec) -> FinitePopulation:
    """Deterministic synthetic population: y linear in x plus Gaussian noise.

    Stratum shares decay geometrically (earlier strata are larger) and shift
    the mean of the first covariate downward stratum by stratum; clusters
    have heterogeneous sizes and add a shared offset to the first covariate,
    so both partitions carry real signal when covariates exist. The size
    measure is lognormal, tied to y by `informativeness` as documented on
    SyntheticPopSpec.
    """
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_units, spec.covariate_dim
    x = rng.standard_normal((n, d))

    stratum = None
    if spec.n_strata >= 1:
        shares = 3.0 ** -np.arange(spec.n_strata)
        sizes = _integer_partition(shares, n)
        labels = np.repeat([f"s{h + 1}" for h in range(spec.n_strata)], sizes)
        stratum = np.array(labels, dtype=object)
        if d > 0:
            offsets = _STRATUM_SHIFT * np.arange(spec.n_strata)
            x[:, 0] += np.repeat(offsets, sizes)

    cluster = None
    if spec.n_clusters >= 1:
        raw = rng.lognormal(mean=0.0, sigma=_CLUSTER_SIZE_LOG_SD, size=spec.n_clusters)
        csizes = _integer_partition(raw, n)
        perm = rng.permutation(n)
        width = len(str(spec.n_clusters))
        cluster_of = np.empty(n, dtype=object)
        effects = rng.standard_normal(spec.n_clusters) * _CLUSTER_SD
        start = 0
        for c, size in enumerate(csizes):
            members = perm[start : start + size]
            cluster_of[members] = f"c{c + 1:0{width}d}"
            if d > 0:
                x[members, 0] += effects[c]
            start += size
        cluster = cluster_of

    slopes = _SLOPE_BASE * 0.5 ** np.arange(d)
    noise = spec.noise_scale * rng.standard_normal(n)
    y = _INTERCEPT + x @ slopes + noise

    z = rng.standard_normal(n)
    y_std = (y - y.mean()) / y.std() if y.std() > 0 else np.zeros(n)
    mix = spec.informativeness * y_std + (1.0 - spec.informativeness) * z
    size_measure = _SIZE_CENTER * np.exp(_SIZE_LOG_SD * mix)

    return FinitePopulation(
        ids=np.arange(1, n + 1),
        x=x,
        y=y,
        stratum=stratum,
        cluster=cluster,
        size_measure=size_measure,
    )


def discretize_response(pop: FinitePopulation, n_classes: int) -> FinitePopulation:
    """Bin a real response at population quantiles into labels 0..K-1."""
    if pop.response_kind != REAL:
        raise ValueError("can only discretize a real-valued response")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    cuts = np.quantile(pop.y, np.arange(1, n_classes) / n_classes)
    labels = np.searchsorted(cuts, pop.y, side="left").astype(np.int64)
    return FinitePopulation(
        ids=pop.ids.copy(),
        x=pop.x.copy(),
        y=labels,
        response_kind=CATEGORICAL,
        stratum=None if pop.stratum is None else pop.stratum.copy(),
        cluster=None if pop.cluster is None else pop.cluster.copy(),
        size_measure=None if pop.size_measure is None else pop.size_measure.copy(),
    )
