"""Scoring functions, softmax inference, and the constrained-model wrapper.

A scorer maps an instance to a length-c vector of label scores. Two concrete
parameterizations are provided: :class:`LinearScorer` (per-label weight
vectors over features) and :class:`ScoreTable` (tabulated scores over a
finite support). :class:`CcmModel` wraps any scorer with a violation penalty
`score - mu * v(x, y)`; `mu = math.inf` is an explicit sentinel that routes
to exact renormalization over the admissible set rather than a large finite
penalty.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import ConstraintMap, FiniteDistribution, Instance, fmt_float

__all__ = [
    "InvalidScoreError",
    "LinearScorer",
    "ScoreTable",
    "CcmModel",
    "softmax_predict",
    "ccm_predict",
    "argmax_label",
    "predict_probabilities",
    "softmax_rows",
    "masked_softmax_rows",
    "logsumexp_rows",
    "masked_logsumexp_rows",
    "score_matrix",
]


class InvalidScoreError(ValueError):
    """A scorer produced a non-finite score where a finite one is required."""


class LinearScorer:
    """f(x, j) = w_j . x with an optional shared squared-norm budget."""

    def __init__(self, weights, norm_budget: float | None = None):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2:
            raise ValueError("weights must be (num_labels, dim)")
        if not np.isfinite(weights).all():
            raise InvalidScoreError("linear scorer weights must be finite")
        if norm_budget is not None and norm_budget < 0:
            raise ValueError("norm budget must be nonnegative")
        weights = weights.copy()
        weights.setflags(write=False)
        self.weights = weights
        self.norm_budget = norm_budget

    @property
    def num_labels(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def squared_norm(self) -> float:
        return float(np.sum(self.weights * self.weights))

    def project_to_budget(self) -> "LinearScorer":
        """Rescale onto the norm ball if the budget is exceeded."""
        if self.norm_budget is None:
            return self
        sq = self.squared_norm()
        if sq <= self.norm_budget + 1e-9:
            return self
        scale = math.sqrt(self.norm_budget / sq)
        return LinearScorer(self.weights * scale, self.norm_budget)

    def scores(self, instance: Instance) -> np.ndarray:
        return self.weights @ instance.feature_array()

    def matrix(self, features: np.ndarray) -> np.ndarray:
        """Scores for a stack of feature rows, shape (n, c)."""
        return np.asarray(features, dtype=float) @ self.weights.T


class ScoreTable:
    """Tabulated scores over a finite support, shape (num_points, num_labels)."""

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        if table.ndim != 2:
            raise ValueError("score table must be (num_points, num_labels)")
        if not np.isfinite(table).all():
            raise InvalidScoreError("score table entries must be finite")
        table = table.copy()
        table.setflags(write=False)
        self.table = table

    @classmethod
    def from_probabilities(cls, probs) -> "ScoreTable":
        """Scores whose softmax reproduces the given rows of probabilities."""
        probs = np.asarray(probs, dtype=float)
        if (probs <= 0).any():
            raise ValueError("probabilities must be strictly positive to take logs")
        return cls(np.log(probs))

    @property
    def num_points(self) -> int:
        return self.table.shape[0]

    @property
    def num_labels(self) -> int:
        return self.table.shape[1]

    def scores(self, instance: Instance) -> np.ndarray:
        iid = int(instance.iid)
        if not 0 <= iid < self.num_points:
            raise KeyError(f"unknown instance id {iid}")
        return self.table[iid]

    def to_text(self) -> str:
        lines = [f"score-table 1 {self.num_points} {self.num_labels}"]
        for row in self.table:
            lines.append(" ".join(fmt_float(v) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScoreTable":
        rows = [r.strip() for r in text.splitlines() if r.strip() and not r.startswith("#")]
        head = rows[0].split()
        if head[:2] != ["score-table", "1"]:
            raise ValueError("not a score table")
        n, c = int(head[2]), int(head[3])
        if len(rows) - 1 != n:
            raise ValueError(f"expected {n} rows, found {len(rows) - 1}")
        table = np.array([[float(v) for v in row.split()] for row in rows[1:]])
        if table.shape != (n, c):
            raise ValueError("score table shape does not match header")
        return cls(table)


class CcmModel:
    """A base scorer shifted by a violation penalty: f(x,y) - mu * v_C(x,y).

    `mu = math.inf` is a sentinel: prediction renormalizes the base softmax
    over the admissible set, giving exact zeros on inadmissible labels, and
    `scores` reports -inf there (useful for argmax inference).
    """

    def __init__(self, base, mu: float, cmap: ConstraintMap):
        mu = float(mu)
        if math.isnan(mu) or mu < 0:
            raise ValueError("mu must be nonnegative (math.inf allowed)")
        self.base = base
        self.mu = mu
        self.cmap = cmap

    @property
    def strict(self) -> bool:
        return math.isinf(self.mu)

    def scores(self, instance: Instance) -> np.ndarray:
        base = np.asarray(self.base.scores(instance), dtype=float)
        admissible = self.cmap.admissible_mask(instance.iid)
        if self.strict:
            return np.where(admissible, base, -np.inf)
        return base - self.mu * (~admissible)


def score_matrix(scorer, dist: FiniteDistribution) -> np.ndarray:
    """Finite scores of a plain scorer on the whole support, shape (n, c).

    CcmModel is adjusted here for finite mu; strict models are handled by the
    masked-softmax paths, not by materializing -inf scores.
    """
    if isinstance(scorer, CcmModel):
        if scorer.strict:
            raise ValueError("strict models have no finite score matrix; use masked paths")
        return score_matrix(scorer.base, dist) - scorer.mu * (~scorer.cmap.mask)
    if isinstance(scorer, ScoreTable):
        if scorer.num_points != dist.num_points:
            raise ValueError("score table does not cover the support")
        return scorer.table
    if isinstance(scorer, LinearScorer):
        if dist.features is None:
            raise ValueError("linear scorer needs feature vectors on the support")
        return scorer.matrix(dist.features)
    return np.array([scorer.scores(inst) for inst in dist.instances])


def logsumexp_rows(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    top = scores.max(axis=-1, keepdims=True)
    return (top + np.log(np.exp(scores - top).sum(axis=-1, keepdims=True)))[..., 0]


def masked_logsumexp_rows(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log sum exp restricted to True positions of the mask."""
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("each row needs at least one unmasked entry")
    top = np.where(mask, scores, -np.inf).max(axis=-1, keepdims=True)
    terms = np.exp(np.where(mask, scores - top, -np.inf))
    return (top + np.log(terms.sum(axis=-1, keepdims=True)))[..., 0]


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-score subtraction for overflow safety."""
    scores = np.asarray(scores, dtype=float)
    shifted = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def masked_softmax_rows(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax renormalized over True positions; exact zeros elsewhere."""
    scores = np.asarray(scores, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("each row needs at least one admissible label")
    top = np.where(mask, scores, -np.inf).max(axis=-1, keepdims=True)
    shifted = np.exp(np.where(mask, scores - top, -np.inf))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _finite_scores(scorer, instance: Instance) -> np.ndarray:
    scores = np.asarray(scorer.scores(instance), dtype=float)
    if not np.isfinite(scores).all():
        raise InvalidScoreError(
            f"non-finite score at instance {instance.iid}: {scores!r}"
        )
    return scores


def softmax_predict(scorer, instance: Instance) -> np.ndarray:
    """Softmax probabilities P(y|x) of a scorer at one instance."""
    return softmax_rows(_finite_scores(scorer, instance))


def ccm_predict(model: CcmModel, instance: Instance) -> np.ndarray:
    """Prediction of a constrained model; exact renormalization when mu = inf."""
    base = _finite_scores(model.base, instance)
    admissible = model.cmap.admissible_mask(instance.iid)
    if model.strict:
        return masked_softmax_rows(base, admissible)
    return softmax_rows(base - model.mu * (~admissible))


def predict_probabilities(scorer, instance: Instance) -> np.ndarray:
    """Dispatch: constrained models renormalize, plain scorers use softmax."""
    if isinstance(scorer, CcmModel):
        return ccm_predict(scorer, instance)
    return softmax_predict(scorer, instance)


def argmax_label(scorer, instance: Instance) -> int:
    """Label of maximal score; ties break toward the lowest index."""
    scores = np.asarray(scorer.scores(instance), dtype=float)
    if np.isnan(scores).any():
        raise InvalidScoreError(f"NaN score at instance {instance.iid}")
    return int(np.argmax(scores))
