"""Nonconformity scores and the reference predictive models behind them.

Two score functions are supported: absolute residuals for regression
(|y - f(x)|) and complement class probability for classification
(1 - p_hat(y | x)). Any predictor can be wrapped in a ScoreModel as long as
its fitting procedure treats training rows symmetrically; the reference
fitters below (least squares, multinomial logistic) do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ABS_RESIDUAL = "abs_residual"
ONE_MINUS_PROB = "one_minus_prob"

_PROB_TOL = 1e-9


class CollinearDesignError(ValueError):
    """Design matrix is rank deficient; message names the involved columns."""


@dataclass(frozen=True, eq=False)
class WeightedScores:
    """A calibration multiset of (score, weight) pairs plus the tail weight.

    ``tail_weight`` is the weight the not-yet-observed test case would carry
    under the sampling design; it becomes the point mass appended above all
    finite scores when a padded quantile is taken.
    """

    scores: np.ndarray
    weights: np.ndarray
    tail_weight: float

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "tail_weight", float(self.tail_weight))
        if scores.ndim != 1 or weights.ndim != 1:
            raise ValueError("scores and weights must be 1-dimensional")
        if scores.shape[0] != weights.shape[0]:
            raise ValueError(
                f"scores and weights differ in length: {scores.shape[0]} vs {weights.shape[0]}"
            )
        if scores.shape[0] < 1:
            raise ValueError("at least one calibration score is required")
        if not np.all(weights > 0):
            raise ValueError("all weights must be strictly positive")
        if not self.tail_weight > 0:
            raise ValueError("tail_weight must be strictly positive")

    @property
    def n(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True, eq=False)
class ScoreModel:
    """A fitted predictor bundled with its score function.

    ``predictor`` maps an (m, d) covariate matrix to point predictions
    (m,) for regression, or to class-probability rows (m, n_classes) for
    classification. Probability rows must be in [0, 1] and sum to one.
    """

    predictor: Callable[[np.ndarray], np.ndarray]
    score_kind: str
    covariate_dim: int
    n_classes: int | None = None
    fit_weights: np.ndarray | None = None
    coef: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.score_kind not in (ABS_RESIDUAL, ONE_MINUS_PROB):
            raise ValueError(f"unknown score_kind: {self.score_kind!r}")
        if self.score_kind == ONE_MINUS_PROB and not self.n_classes:
            raise ValueError("classification models must declare n_classes")

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = _as_matrix(x, self.covariate_dim)
        out = np.asarray(self.predictor(x), dtype=np.float64)
        if self.score_kind == ONE_MINUS_PROB:
            if out.shape != (x.shape[0], self.n_classes):
                raise ValueError("probability predictor returned a bad shape")
            if np.any(out < -_PROB_TOL) or np.any(out > 1 + _PROB_TOL):
                raise ValueError("class probabilities outside [0, 1]")
            if np.any(np.abs(out.sum(axis=1) - 1.0) > _PROB_TOL):
                raise ValueError("class probabilities do not sum to 1")
        return out


def _as_matrix(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1) if d else x.reshape(-1, d)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected covariate dimension {d}, got shape {x.shape}")
    return x


def _design_matrix(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def _collinear_columns(design: np.ndarray, rank: int) -> list[int]:
    # Columns with large loadings in the null space are the collinear suspects.
    _, _, vt = np.linalg.svd(design, full_matrices=True)
    null = vt[rank:]
    involvement = np.abs(null).max(axis=0)
    return [int(j) for j in np.nonzero(involvement > 1e-8)[0]]


def fit_ols(x, y, weights=None) -> ScoreModel:
    """Least squares (optionally weighted) with an intercept.

    Solved by singular value decomposition, which keeps near-collinear
    designs stable across thousands of harness refits. Shuffling the
    training rows leaves the coefficients unchanged up to ~1e-13.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError("x and y disagree on the number of rows")
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} rows to fit {d} covariates plus intercept")
    design = _design_matrix(x)
    target = y
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (n,):
            raise ValueError("weights must align with rows of x")
        if not np.all(weights > 0):
            raise ValueError("fit weights must be strictly positive")
        root = np.sqrt(weights)
        design = design * root[:, None]
        target = y * root
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < d + 1:
        cols = _collinear_columns(design, rank)
        names = ", ".join("intercept" if j == 0 else f"x{j - 1}" for j in cols)
        raise CollinearDesignError(f"design matrix is rank deficient; collinear columns: {names}")
    coef = np.asarray(coef, dtype=np.float64)

    def predictor(xs: np.ndarray) -> np.ndarray:
        return coef[0] + xs @ coef[1:]

    return ScoreModel(
        predictor=predictor,
        score_kind=ABS_RESIDUAL,
        covariate_dim=d,
        fit_weights=weights,
        coef=coef,
    )


def constant_model(value: float = 0.0, covariate_dim: int = 0) -> ScoreModel:
    """A fixed-output regression model; useful as an a-priori predictor."""

    def predictor(xs: np.ndarray) -> np.ndarray:
        return np.full(xs.shape[0], float(value))

    return ScoreModel(
        predictor=predictor,
        score_kind=ABS_RESIDUAL,
        covariate_dim=covariate_dim,
        coef=np.array([float(value)]),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_multinomial_logit(
    x,
    y,
    n_classes: int | None = None,
    weights=None,
    *,
    max_iter: int = 100,
    grad_tol: float = 1e-8,
) -> ScoreModel:
    """Multinomial logistic regression fit by damped Newton iterations.

    The last class is the reference. Iterations stop when the mean absolute
    gradient drops below ``grad_tol`` or after ``max_iter`` steps; each step
    is halved until the (weighted) negative log-likelihood does not increase.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    y = np.asarray(y)
    n, d = x.shape
    labels = y.astype(np.int64)
    if np.any(labels < 0):
        raise ValueError("class labels must be integers 0..K-1")
    k = int(n_classes) if n_classes else int(labels.max()) + 1
    if np.any(labels >= k):
        raise ValueError(f"label outside 0..{k - 1} encountered")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or not np.all(w > 0):
            raise ValueError("fit weights must be positive and align with rows")

    design = _design_matrix(x)
    p = d + 1
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    beta = np.zeros((p, k - 1))
    ridge = 1e-10

    def nll(b: np.ndarray) -> float:
        logits = np.hstack([design @ b, np.zeros((n, 1))])
        log_probs = logits - np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1, keepdims=True)) - logits.max(axis=1, keepdims=True)
        return -float(np.sum(w * log_probs[np.arange(n), labels])) + 0.5 * ridge * float(np.sum(b * b))

    current = nll(beta)
    for _ in range(max_iter):
        logits = np.hstack([design @ beta, np.zeros((n, 1))])
        probs = _softmax(logits)
        resid = (probs - onehot)[:, : k - 1] * w[:, None]
        grad = design.T @ resid + ridge * beta
        if np.abs(grad).max() / max(float(w.sum()), 1.0) < grad_tol:
            break
        hess = np.zeros((p * (k - 1), p * (k - 1)))
        for a in range(k - 1):
            for b_ in range(k - 1):
                diag = w * probs[:, a] * ((1.0 if a == b_ else 0.0) - probs[:, b_])
                hess[a * p : (a + 1) * p, b_ * p : (b_ + 1) * p] = design.T @ (design * diag[:, None])
        hess += ridge * np.eye(p * (k - 1))
        step = np.linalg.solve(hess, grad.T.ravel()).reshape(k - 1, p).T
        scale = 1.0
        for _half in range(30):
            candidate = beta - scale * step
            value = nll(candidate)
            if value <= current:
                beta = candidate
                current = value
                break
            scale *= 0.5
        else:
            break

    coef = beta.copy()

    def predictor(xs: np.ndarray) -> np.ndarray:
        logits = np.hstack([_design_matrix(xs) @ coef, np.zeros((xs.shape[0], 1))])
        return _softmax(logits)

    return ScoreModel(
        predictor=predictor,
        score_kind=ONE_MINUS_PROB,
        covariate_dim=d,
        n_classes=k,
        fit_weights=None if weights is None else w,
        coef=coef,
    )


def score(model: ScoreModel, x, y) -> float:
    """Nonconformity of one point: |y - f(x)| or 1 - p_hat(y | x)."""
    x = _as_matrix(x, model.covariate_dim)
    if x.shape[0] != 1:
        raise ValueError("score() takes a single point; use score_batch for many")
    return float(score_batch(model, x, np.asarray([y]))[0])


def score_batch(model: ScoreModel, x, y) -> np.ndarray:
    """Vectorized scores for aligned covariate rows and responses."""
    x = _as_matrix(x, model.covariate_dim)
    out = model.predict(x)
    if model.score_kind == ABS_RESIDUAL:
        y = np.asarray(y, dtype=np.float64)
        return np.abs(y - out)
    labels = np.asarray(y).astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= model.n_classes):
        raise ValueError(f"class label outside 0..{model.n_classes - 1}")
    return 1.0 - out[np.arange(x.shape[0]), labels]
