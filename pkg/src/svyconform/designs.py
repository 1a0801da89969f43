"""Sampling designs and the design-aware train/calibration splitter.

Supported designs: simple random sampling with or without replacement,
probability-proportional-to-size with or without replacement, stratified
sampling with explicit per-stratum allocations, and one-stage cluster
sampling (an SRS of whole clusters). Every drawn unit carries a base weight
equal to the inverse of n times its single-draw selection probability, which
is what the survey-weighted conformal machinery consumes.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from ._kernels import ppswor_indices
from .population import FinitePopulation

_group_cache: "weakref.WeakKeyDictionary[FinitePopulation, dict]" = weakref.WeakKeyDictionary()


def group_ids(pop: FinitePopulation, which: str) -> dict:
    """Unit ids per stratum or cluster label, factorized once per population."""
    cache = _group_cache.setdefault(pop, {})
    if which not in cache:
        labels = getattr(pop, which)
        if labels is None:
            raise ValueError(f"population has no {which} labels")
        keys, inverse = np.unique(np.asarray(labels, dtype=str), return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(keys.shape[0] + 1))
        cache[which] = {
            str(keys[i]): pop.ids[order[bounds[i] : bounds[i + 1]]] for i in range(keys.shape[0])
        }
    return cache[which]


class DesignKind(str, Enum):
    SRSWR = "srswr"
    SRSWOR = "srswor"
    PPSWR = "ppswr"
    PPSWOR = "ppswor"
    STRATIFIED = "stratified"
    CLUSTER = "cluster"


_WOR_KINDS = {DesignKind.SRSWOR, DesignKind.PPSWOR, DesignKind.STRATIFIED, DesignKind.CLUSTER}
_PPS_KINDS = {DesignKind.PPSWR, DesignKind.PPSWOR}


@dataclass(frozen=True)
class DesignSpec:
    """A sampling design description.

    ``n`` is the sample size for unit-level designs, the number of clusters
    for CLUSTER, and a per-stratum allocation mapping for STRATIFIED. The
    nested ``within_stratum_kind`` must itself be an unstratified,
    unclustered kind. ``units_per_cluster`` switches cluster sampling to
    two-stage (an SRS of that many units inside each sampled cluster).
    """

    kind: DesignKind
    n: int | Mapping[str, int]
    size_col: str | None = None
    within_stratum_kind: DesignKind = DesignKind.SRSWOR
    units_per_cluster: int | None = None
    seed: int = 0

    def __post_init__(self):
        kind = DesignKind(self.kind)
        object.__setattr__(self, "kind", kind)
        wkind = DesignKind(self.within_stratum_kind)
        object.__setattr__(self, "within_stratum_kind", wkind)
        if kind is DesignKind.STRATIFIED:
            if not isinstance(self.n, Mapping) or not self.n:
                raise ValueError("stratified designs need a non-empty per-stratum allocation map")
            if any(v < 1 for v in self.n.values()):
                raise ValueError("every stratum allocation must be >= 1")
            if wkind in (DesignKind.STRATIFIED, DesignKind.CLUSTER):
                raise ValueError("within-stratum design must be unit-level")
        else:
            if isinstance(self.n, Mapping):
                raise ValueError("allocation maps are only valid for stratified designs")
            if self.n < 1:
                raise ValueError("sample size must be >= 1")

    def to_dict(self) -> dict:
        n = dict(self.n) if isinstance(self.n, Mapping) else int(self.n)
        return {
            "kind": self.kind.value,
            "n": n,
            "size_col": self.size_col,
            "within_stratum_kind": self.within_stratum_kind.value,
            "units_per_cluster": self.units_per_cluster,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DesignSpec":
        return cls(
            kind=DesignKind(data["kind"]),
            n=data["n"],
            size_col=data.get("size_col"),
            within_stratum_kind=DesignKind(data.get("within_stratum_kind", "srswor")),
            units_per_cluster=data.get("units_per_cluster"),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class DrawnSample:
    """One realized sample: unit ids (1-based), base weights, design labels."""

    unit_ids: np.ndarray
    base_weight: np.ndarray
    design: DesignSpec
    stratum_of: np.ndarray | None = None
    cluster_of: np.ndarray | None = None

    def __post_init__(self):
        ids = np.asarray(self.unit_ids, dtype=np.int64)
        w = np.asarray(self.base_weight, dtype=np.float64)
        object.__setattr__(self, "unit_ids", ids)
        object.__setattr__(self, "base_weight", w)
        if ids.ndim != 1 or ids.shape[0] < 1:
            raise ValueError("a sample must contain at least one unit")
        if w.shape != ids.shape:
            raise ValueError("base weights must align with unit ids")
        if not np.all(w > 0):
            raise ValueError("base weights must be strictly positive")
        for name in ("stratum_of", "cluster_of"):
            lab = getattr(self, name)
            if lab is not None and np.asarray(lab).shape != ids.shape:
                raise ValueError(f"{name} must align with unit ids")

    @property
    def n(self) -> int:
        return self.unit_ids.shape[0]

    def take(self, idx: np.ndarray) -> "DrawnSample":
        """Subsample by positional indices, keeping weights and metadata."""
        idx = np.asarray(idx)
        return DrawnSample(
            unit_ids=self.unit_ids[idx],
            base_weight=self.base_weight[idx],
            design=self.design,
            stratum_of=None if self.stratum_of is None else self.stratum_of[idx],
            cluster_of=None if self.cluster_of is None else self.cluster_of[idx],
        )


def _validate(pop: FinitePopulation, spec: DesignSpec) -> None:
    if spec.kind in _PPS_KINDS and pop.size_measure is None:
        raise ValueError(f"{spec.kind.value} requires a population size measure")
    if spec.kind in (DesignKind.SRSWOR, DesignKind.PPSWOR) and spec.n > pop.n_units:
        raise ValueError(f"cannot draw {spec.n} units without replacement from {pop.n_units}")
    if spec.kind is DesignKind.STRATIFIED:
        if pop.stratum is None:
            raise ValueError("stratified design on a population without stratum labels")
        groups = group_ids(pop, "stratum")
        for lab, n_h in spec.n.items():
            if lab not in groups:
                raise ValueError(f"allocation names unknown stratum {lab!r}")
            if spec.within_stratum_kind in _WOR_KINDS and n_h > groups[lab].shape[0]:
                raise ValueError(
                    f"stratum {lab!r} allocation {n_h} exceeds its size {groups[lab].shape[0]}"
                )
    if spec.kind is DesignKind.CLUSTER:
        if pop.cluster is None:
            raise ValueError("cluster design on a population without cluster labels")
        k_total = len(group_ids(pop, "cluster"))
        if spec.n > k_total:
            raise ValueError(f"cannot select {spec.n} of {k_total} clusters without replacement")


def _single_draw_probs(pop: FinitePopulation, kind: DesignKind) -> np.ndarray:
    if kind in _PPS_KINDS:
        return pop.size_measure / pop.size_measure.sum()
    return np.full(pop.n_units, 1.0 / pop.n_units)


def _unit_level_draw(pop, ids_pool, kind, n, rng):
    """Draw n units from the id pool, returning (0-based positions, weights)."""
    pool = np.asarray(ids_pool, dtype=np.int64)
    n_pool = pool.shape[0]
    if kind is DesignKind.SRSWR:
        pos = rng.integers(0, n_pool, size=n)
        weight = np.full(n, n_pool / n)
    elif kind is DesignKind.SRSWOR:
        pos = rng.choice(n_pool, size=n, replace=False)
        weight = np.full(n, n_pool / n)
    elif kind is DesignKind.PPSWR:
        sizes = pop.size_measure[pool - 1]
        p = sizes / sizes.sum()
        pos = rng.choice(n_pool, size=n, replace=True, p=p)
        weight = 1.0 / (n * p[pos])
    elif kind is DesignKind.PPSWOR:
        sizes = pop.size_measure[pool - 1]
        p = sizes / sizes.sum()
        pos = ppswor_indices(sizes, n, rng.random(n))
        # Weights are reported as in the with-replacement case: the inverse
        # of n times the first-draw selection probability.
        weight = 1.0 / (n * p[pos])
    else:
        raise ValueError(f"not a unit-level design: {kind}")
    return pool[pos], weight


def draw(pop: FinitePopulation, spec: DesignSpec, rng=None) -> DrawnSample:
    """Draw one sample. Deterministic given (pop, spec, seed or rng).

    When ``rng`` is omitted a fresh generator seeded with spec.seed is used;
    the harness passes explicit per-replicate generators instead.
    """
    _validate(pop, spec)
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    if spec.kind is DesignKind.STRATIFIED:
        groups = group_ids(pop, "stratum")
        all_ids, all_w = [], []
        for lab in sorted(spec.n):
            ids, w = _unit_level_draw(pop, groups[lab], spec.within_stratum_kind, spec.n[lab], rng)
            all_ids.append(ids)
            all_w.append(w)
        unit_ids = np.concatenate(all_ids)
        weight = np.concatenate(all_w)
    elif spec.kind is DesignKind.CLUSTER:
        groups = group_ids(pop, "cluster")
        labels = sorted(groups)
        k_total = len(labels)
        chosen = rng.choice(k_total, size=spec.n, replace=False)
        unit_chunks, weight_chunks = [], []
        for c in sorted(chosen):
            members = groups[labels[c]]
            if spec.units_per_cluster is not None:
                m = min(spec.units_per_cluster, members.shape[0])
                taken = np.sort(members[rng.choice(members.shape[0], size=m, replace=False)])
                w = (k_total / spec.n) * (members.shape[0] / m)
                members = taken
            else:
                w = k_total / spec.n
            unit_chunks.append(members)
            weight_chunks.append(np.full(members.shape[0], w))
        unit_ids = np.concatenate(unit_chunks)
        weight = np.concatenate(weight_chunks)
    else:
        unit_ids, weight = _unit_level_draw(pop, pop.ids, spec.kind, spec.n, rng)

    return DrawnSample(
        unit_ids=unit_ids,
        base_weight=weight,
        design=spec,
        stratum_of=None if pop.stratum is None else pop.stratum[unit_ids - 1],
        cluster_of=None if pop.cluster is None else pop.cluster[unit_ids - 1],
    )


def test_weights(pop: FinitePopulation, spec: DesignSpec) -> np.ndarray:
    """Base weight every population unit would carry if it were sampled.

    These are the tail weights for survey-weighted conformal prediction of
    each possible test unit. Only defined for unit-level designs.
    """
    if spec.kind in _PPS_KINDS:
        p = _single_draw_probs(pop, spec.kind)
        return 1.0 / (spec.n * p)
    if spec.kind in (DesignKind.SRSWR, DesignKind.SRSWOR):
        return np.full(pop.n_units, pop.n_units / spec.n)
    raise ValueError(f"per-unit test weights are not defined for {spec.kind.value}")


class SmallStratumWarning(UserWarning):
    """A stratum too small to split was assigned wholly to training."""


def _split_sizes(n: int, frac_train: float) -> int:
    n_train = int(round(frac_train * n))
    return min(max(n_train, 1), n - 1)


def design_split(sample: DrawnSample, frac_train: float, rng=None):
    """Split a sample into (proper training, calibration) halves.

    The split mimics the design that produced the sample: uniform at random
    for unstratified, unclustered samples; independently within each stratum
    for stratified samples; and by whole clusters for cluster samples.
    Strata with fewer than two units cannot appear on both sides; they go
    wholly to training, with a SmallStratumWarning.
    """
    if not 0.0 < frac_train < 1.0:
        raise ValueError("frac_train must lie strictly inside (0, 1)")
    if rng is None:
        rng = np.random.default_rng(sample.design.seed)
    n = sample.n
    if n < 2:
        raise ValueError("cannot split a sample with fewer than two units")

    if sample.design.kind is DesignKind.CLUSTER:
        labels = sorted(set(sample.cluster_of))
        k = len(labels)
        if k < 2:
            raise ValueError("cannot split a cluster sample with a single cluster")
        perm = rng.permutation(k)
        k_train = _split_sizes(k, frac_train)
        train_labels = {labels[i] for i in perm[:k_train]}
        mask = np.array([c in train_labels for c in sample.cluster_of])
        return sample.take(np.nonzero(mask)[0]), sample.take(np.nonzero(~mask)[0])

    if sample.design.kind is DesignKind.STRATIFIED:
        train_idx, calib_idx = [], []
        for lab in sorted(set(sample.stratum_of)):
            pos = np.nonzero(sample.stratum_of == lab)[0]
            n_h = pos.shape[0]
            if n_h < 2:
                warnings.warn(
                    f"stratum {lab!r} has {n_h} unit(s); assigned wholly to training",
                    SmallStratumWarning,
                )
                train_idx.append(pos)
                continue
            perm = pos[rng.permutation(n_h)]
            n_train = _split_sizes(n_h, frac_train)
            train_idx.append(perm[:n_train])
            calib_idx.append(perm[n_train:])
        if not calib_idx:
            raise ValueError("no stratum was large enough to contribute calibration units")
        return (
            sample.take(np.sort(np.concatenate(train_idx))),
            sample.take(np.sort(np.concatenate(calib_idx))),
        )

    perm = rng.permutation(n)
    n_train = _split_sizes(n, frac_train)
    return sample.take(np.sort(perm[:n_train])), sample.take(np.sort(perm[n_train:]))


def replicate_rng(base_seed: int, replicate: int) -> np.random.Generator:
    """Independent generator for one replicate.

    Streams are derived by spawning child SeedSequences off the base seed,
    so replicate r gets the same stream whether run serially or in parallel.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(base_seed).spawn(replicate + 1)[replicate]))
