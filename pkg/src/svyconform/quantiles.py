"""Padded empirical quantiles on the augmented real line.

The central operation: given calibration scores (optionally with survey
weights) append one extra point mass above every finite score, then invert
the resulting step CDF at level beta. The extra mass is what buys the
finite-sample coverage guarantee; when it is selected, the quantile is the
dedicated INFINITY sentinel rather than a float, so downstream interval
construction can distinguish "whole real line" explicitly.

Quantiles here are left-continuous inverses: the smallest value whose
cumulative mass reaches beta. No interpolation is performed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import CUM_RTOL, padded_quantile_indices
from .scores import WeightedScores

__all__ = [
    "INFINITY",
    "NEG_INFINITY",
    "PaddedQuantileQuery",
    "conformal_quantile_unweighted",
    "conformal_quantile_weighted",
    "normalize_shift_weights",
    "weighted_quantile_no_pad",
]


class _PosInf:
    """Sentinel for the padding point mass; orders above every real."""

    __slots__ = ()

    def __repr__(self):
        return "INFINITY"

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __float__(self):
        return math.inf

    def __neg__(self):
        return NEG_INFINITY


class _NegInf:
    """Mirror sentinel for unbounded-below interval endpoints."""

    __slots__ = ()

    def __repr__(self):
        return "NEG_INFINITY"

    def __lt__(self, other):
        return other is not self

    def __le__(self, other):
        return True

    def __gt__(self, other):
        return False

    def __ge__(self, other):
        return other is self

    def __float__(self):
        return -math.inf

    def __neg__(self):
        return INFINITY


INFINITY = _PosInf()
NEG_INFINITY = _NegInf()


@dataclass(frozen=True)
class PaddedQuantileQuery:
    """A level together with the weighted score multiset to invert."""

    beta: float
    scores_and_weights: WeightedScores

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie strictly inside (0, 1), got {self.beta}")


def conformal_quantile_unweighted(scores, beta: float):
    """ceil(beta * (n + 1))-th smallest element of scores plus one pad above.

    Returns the INFINITY sentinel when the index lands on the pad, i.e.
    whenever ceil(beta * (n + 1)) exceeds n.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.shape[0] == 0:
        raise ValueError("scores must be a non-empty 1-d array")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie strictly inside (0, 1), got {beta}")
    n = scores.shape[0]
    rank = math.ceil(beta * (n + 1))
    if rank > n:
        return INFINITY
    return float(np.partition(scores, rank - 1)[rank - 1])


def normalize_shift_weights(ws: WeightedScores) -> tuple[np.ndarray, float]:
    """Normalize unit weights and the tail weight into probabilities.

    p_i = w_i / (sum_j w_j + tail) and p_tail = tail / (sum_j w_j + tail).
    Rescaling every weight by a common positive factor leaves the output
    unchanged (any unknown normalization constant cancels).
    """
    total = float(np.sum(ws.weights)) + ws.tail_weight
    return ws.weights / total, ws.tail_weight / total


def conformal_quantile_weighted(query: PaddedQuantileQuery):
    """Left-continuous inverse of the padded, weight-normalized score CDF.

    Scores are sorted ascending with ties accumulating weight at a single
    step. If the cumulative normalized weight of all finite scores stays
    below beta, the pad is selected and the INFINITY sentinel is returned.
    With all weights equal (tail included) this reduces exactly to
    conformal_quantile_unweighted, bit for bit.
    """
    ws = query.scores_and_weights
    beta = query.beta
    first = ws.weights[0]
    if ws.tail_weight == first and np.all(ws.weights == first):
        return conformal_quantile_unweighted(ws.scores, beta)
    order = np.argsort(ws.scores, kind="stable")
    sorted_scores = ws.scores[order]
    cum = np.cumsum(ws.weights[order])
    total = float(cum[-1])
    idx = int(
        padded_quantile_indices(cum, total, np.asarray([ws.tail_weight]), beta)[0]
    )
    if idx >= ws.n:
        return INFINITY
    return float(sorted_scores[idx])


def weighted_quantile_no_pad(scores, weights, beta: float) -> float:
    """Plain weighted quantile: no padding mass, always a finite score.

    This is the design-aware analogue of the naive ceil(beta * n) order
    statistic and exists as a comparison baseline, not as a guaranteed
    procedure.
    """
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if scores.shape[0] == 0:
        raise ValueError("scores must be non-empty")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie strictly inside (0, 1), got {beta}")
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(weights[order])
    target = beta * float(cum[-1]) * (1.0 - CUM_RTOL)
    idx = int(np.searchsorted(cum, target, side="left"))
    idx = min(idx, scores.shape[0] - 1)
    return float(scores[order][idx])
