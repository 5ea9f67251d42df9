"""Loss and violation functionals: pointwise, empirical, and exact-population.

Cross-entropy quantities are computed in the log domain (log-sum-exp
differences) so identities between risks and violations survive to near
machine precision. Population expectations are exact weighted sums over a
:class:`~constraintlab.core.FiniteDistribution`, accumulated with
`math.fsum`.

Cross-entropy of a strictly impossible gold label (strict inference with the
gold outside the admissible set) is clamped at ``CE_CLAMP`` instead of
infinity so that noisy-constraint arithmetic stays finite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ConstraintMap, Dataset, FiniteDistribution, Instance
from .scoring import (
    CcmModel,
    LinearScorer,
    logsumexp_rows,
    masked_logsumexp_rows,
    masked_softmax_rows,
    predict_probabilities,
    score_matrix,
    softmax_rows,
)

__all__ = [
    "LossKind",
    "CE_CLAMP",
    "RiskReport",
    "pointwise_loss",
    "pointwise_violation",
    "population_risk",
    "empirical_risk",
    "empirical_violation",
    "loss_gradient",
    "violation_gradient",
    "zero_one_cost",
]

CE_CLAMP = 1e4


class LossKind(enum.Enum):
    ELL1 = "ell1"
    CROSS_ENTROPY = "cross_entropy"
    HINGE_MARGIN = "hinge_margin"


def zero_one_cost(num_labels: int) -> np.ndarray:
    """Default hinge augmentation cost: 1 whenever the labels differ."""
    return 1.0 - np.eye(num_labels)


@dataclass
class RiskReport:
    """Population or empirical summary of one scorer's behavior."""

    risk: float
    violation_l1: float | None
    violation_ce: float | None
    margin: float | None
    basis: str
    kind: LossKind

    CSV_HEADER = "basis,kind,risk,violation_l1,violation_ce,margin"

    def to_kv_text(self) -> str:
        rows = [
            f"basis={self.basis}",
            f"kind={self.kind.value}",
            f"risk={self.risk!r}",
            f"violation_l1={_opt(self.violation_l1)}",
            f"violation_ce={_opt(self.violation_ce)}",
            f"margin={_opt(self.margin)}",
        ]
        return "\n".join(rows) + "\n"

    def to_csv_row(self) -> str:
        return ",".join(
            [self.basis, self.kind.value, repr(self.risk),
             _opt(self.violation_l1), _opt(self.violation_ce), _opt(self.margin)]
        )


def _opt(v) -> str:
    return "" if v is None else repr(float(v))


# ---------------------------------------------------------------------------
# Pointwise quantities
# ---------------------------------------------------------------------------

def _check_label(label: int, num_labels: int) -> int:
    label = int(label)
    if not 0 <= label < num_labels:
        raise ValueError(f"label {label} out of range for c={num_labels}")
    return label


def pointwise_loss(kind: LossKind, scorer, instance: Instance, gold_label: int,
                   cost: np.ndarray | None = None) -> float:
    """Loss of one prediction: 1 - P(gold), -log P(gold), or the hinge margin."""
    if kind == LossKind.HINGE_MARGIN:
        scores = np.asarray(scorer.scores(instance), dtype=float)
        gold = _check_label(gold_label, scores.size)
        aug = scores + (zero_one_cost(scores.size) if cost is None else cost)[:, gold]
        return float(aug.max() - scores[gold])
    probs = predict_probabilities(scorer, instance)
    gold = _check_label(gold_label, probs.size)
    p = probs[gold]
    if kind == LossKind.ELL1:
        return float(1.0 - p)
    if kind == LossKind.CROSS_ENTROPY:
        return CE_CLAMP if p == 0.0 else float(-math.log(p))
    raise ValueError(f"unsupported loss kind {kind}")


def pointwise_violation(kind: LossKind, scorer, cmap: ConstraintMap,
                        instance: Instance) -> float:
    """Predicted mass on inadmissible labels (ell1) or -log of admissible mass (ce)."""
    admissible = cmap.admissible_mask(instance.iid)
    if isinstance(scorer, CcmModel) and scorer.strict:
        # Inadmissible labels carry exactly zero probability.
        return 0.0
    if kind == LossKind.ELL1:
        probs = predict_probabilities(scorer, instance)
        return float(math.fsum(probs[~admissible].tolist()))
    if kind == LossKind.CROSS_ENTROPY:
        scores = np.asarray(scorer.scores(instance), dtype=float)
        return float(logsumexp_rows(scores) - masked_logsumexp_rows(scores, admissible))
    raise ValueError(f"violation is defined for ell1 and cross_entropy, not {kind}")


# ---------------------------------------------------------------------------
# Vectorized per-point terms over a support (values + d/d(score) rows)
# ---------------------------------------------------------------------------

def _effective_probs(scorer, dist: FiniteDistribution):
    """Probability rows of a scorer over the support; (probs, strict_mask_or_None)."""
    if isinstance(scorer, CcmModel) and scorer.strict:
        base = score_matrix(scorer.base, dist)
        return masked_softmax_rows(base, scorer.cmap.mask), scorer.cmap.mask
    return softmax_rows(score_matrix(scorer, dist)), None


def ce_loss_rows(scores: np.ndarray, gold: np.ndarray):
    idx = np.arange(scores.shape[0])
    losses = logsumexp_rows(scores) - scores[idx, gold]
    grads = softmax_rows(scores)
    grads = grads.copy()
    grads[idx, gold] -= 1.0
    return losses, grads


def l1_loss_rows(scores: np.ndarray, gold: np.ndarray):
    idx = np.arange(scores.shape[0])
    probs = softmax_rows(scores)
    p_gold = probs[idx, gold]
    grads = probs * p_gold[:, None]
    grads[idx, gold] -= p_gold
    return 1.0 - p_gold, grads


def ce_violation_rows(scores: np.ndarray, mask: np.ndarray):
    values = logsumexp_rows(scores) - masked_logsumexp_rows(scores, mask)
    grads = softmax_rows(scores) - masked_softmax_rows(scores, mask)
    return values, grads


def l1_violation_rows(scores: np.ndarray, mask: np.ndarray):
    probs = softmax_rows(scores)
    p_adm = np.where(mask, probs, 0.0).sum(axis=1)
    grads = probs * (p_adm[:, None] - mask)
    return 1.0 - p_adm, grads


def strict_ce_loss_rows(scores: np.ndarray, gold: np.ndarray, mask: np.ndarray,
                        clamp: float = CE_CLAMP):
    """-log of the admissible-renormalized gold probability; clamped when the
    gold label is inadmissible (zero gradient there: the clamp is constant)."""
    idx = np.arange(scores.shape[0])
    admissible_gold = mask[idx, gold]
    losses = masked_logsumexp_rows(scores, mask) - scores[idx, gold]
    grads = masked_softmax_rows(scores, mask)
    grads = grads.copy()
    grads[idx, gold] -= 1.0
    losses = np.where(admissible_gold, losses, clamp)
    grads[~admissible_gold] = 0.0
    return losses, grads


def margin_rows(scores: np.ndarray, gold: np.ndarray) -> np.ndarray:
    idx = np.arange(scores.shape[0])
    return scores.max(axis=1) - scores[idx, gold]


def _risk_rows(scorer, dist: FiniteDistribution, kind: LossKind, gold: np.ndarray) -> np.ndarray:
    idx = np.arange(dist.num_points)
    if kind == LossKind.HINGE_MARGIN:
        return _margin_values(scorer, dist, gold, augment=True)
    if isinstance(scorer, CcmModel) and scorer.strict:
        base = score_matrix(scorer.base, dist)
        mask = scorer.cmap.mask
        if kind == LossKind.CROSS_ENTROPY:
            losses, _ = strict_ce_loss_rows(base, gold, mask)
            return losses
        probs = masked_softmax_rows(base, mask)
        return 1.0 - probs[idx, gold]
    scores = score_matrix(scorer, dist)
    if kind == LossKind.CROSS_ENTROPY:
        return logsumexp_rows(scores) - scores[idx, gold]
    probs = softmax_rows(scores)
    return 1.0 - probs[idx, gold]


def _violation_values(scorer, dist: FiniteDistribution, cmap: ConstraintMap, kind: LossKind) -> np.ndarray:
    if isinstance(scorer, CcmModel) and scorer.strict:
        return np.zeros(dist.num_points)
    scores = score_matrix(scorer, dist)
    mask = cmap.mask
    if kind == LossKind.CROSS_ENTROPY:
        return ce_violation_rows(scores, mask)[0]
    return l1_violation_rows(scores, mask)[0]


def _margin_values(scorer, dist: FiniteDistribution, gold: np.ndarray,
                   augment: bool = False) -> np.ndarray:
    """Margins max_y g(x,y) - g(x,y_gold); +inf where the strict path excludes gold."""
    idx = np.arange(dist.num_points)
    if isinstance(scorer, CcmModel) and scorer.strict:
        base = score_matrix(scorer.base, dist)
        mask = scorer.cmap.mask
        eff = np.where(mask, base, -np.inf)
    else:
        eff = score_matrix(scorer, dist)
    if augment:
        cost = zero_one_cost(eff.shape[1])
        top = (eff[:, :, None] + cost[None, :, :]).max(axis=1)[idx, gold]
    else:
        top = eff.max(axis=1)
    gold_scores = eff[idx, gold]
    with np.errstate(invalid="ignore"):
        out = top - gold_scores
    out[np.isneginf(gold_scores)] = np.inf
    return out


def expectation(weights: np.ndarray, values: np.ndarray) -> float:
    """Exact weighted sum, tolerant of +/-inf entries."""
    values = np.asarray(values, dtype=float)
    if np.isinf(values).any():
        finite = np.isfinite(values)
        if np.isposinf(values[~finite] * weights[~finite]).any():
            return math.inf
        if np.isneginf(values[~finite] * weights[~finite]).any():
            return -math.inf
        values = np.where(finite, values, 0.0)  # inf with zero weight
    return math.fsum((weights * values).tolist())


# ---------------------------------------------------------------------------
# Population and empirical reports
# ---------------------------------------------------------------------------

def population_risk(dist: FiniteDistribution, scorer, kind: LossKind,
                    cmap: ConstraintMap | None = None) -> RiskReport:
    """Exact population risk plus both violations and the expected margin."""
    cmap = dist.constraint if cmap is None else cmap
    w = dist.weights
    gold = dist.oracle
    risk = expectation(w, _risk_rows(scorer, dist, kind, gold))
    viol_l1 = expectation(w, _violation_values(scorer, dist, cmap, LossKind.ELL1))
    viol_ce = expectation(w, _violation_values(scorer, dist, cmap, LossKind.CROSS_ENTROPY))
    margin = expectation(w, _margin_values(scorer, dist, gold))
    return RiskReport(risk, viol_l1, viol_ce, margin, "exact_population", kind)


def empirical_risk(dataset: Dataset, scorer, kind: LossKind) -> RiskReport:
    """Mean pointwise loss over the labeled split."""
    if dataset.m_labeled == 0:
        raise ValueError("empirical risk needs a nonempty labeled split")
    losses = [pointwise_loss(kind, scorer, s.instance, s.label) for s in dataset.labeled]
    margins = []
    for s in dataset.labeled:
        scores = np.asarray(scorer.scores(s.instance), dtype=float)
        g = scores[s.label]
        margins.append(math.inf if math.isinf(g) and g < 0 else float(scores.max() - g))
    risk = math.fsum(losses) / dataset.m_labeled
    margin = math.fsum(margins) / dataset.m_labeled if all(map(math.isfinite, margins)) else math.inf
    return RiskReport(risk, None, None, margin, f"empirical({dataset.m_labeled})", kind)


def empirical_violation(dataset: Dataset, scorer, cmap: ConstraintMap,
                        kind: LossKind) -> float:
    """Mean pointwise violation over the unlabeled split."""
    if dataset.m_unlabeled == 0:
        raise ValueError("empirical violation needs a nonempty unlabeled split")
    values = [pointwise_violation(kind, scorer, cmap, inst) for inst in dataset.unlabeled]
    return math.fsum(values) / dataset.m_unlabeled


# ---------------------------------------------------------------------------
# Analytic gradients (over LinearScorer weights)
# ---------------------------------------------------------------------------

def _score_grad_to_weights(dscore: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.outer(dscore, x)


def _linear_base(scorer):
    if isinstance(scorer, CcmModel):
        base = scorer.base
    else:
        base = scorer
    if not isinstance(base, LinearScorer):
        raise TypeError("gradients are defined for LinearScorer parameters")
    return base


def loss_gradient(kind: LossKind, scorer, instance: Instance, gold_label: int) -> np.ndarray:
    """d loss / d weights for a linear scorer (possibly wrapped in a CcmModel).

    Matches central finite differences to ~1e-5 relative error; the hinge
    kind returns a subgradient.
    """
    base = _linear_base(scorer)
    x = instance.feature_array()
    c = base.num_labels
    gold = _check_label(gold_label, c)
    row_dist = _single_row(scorer, instance)
    scores, mask = row_dist
    if kind == LossKind.CROSS_ENTROPY:
        if mask is not None:
            if not mask[gold]:
                return np.zeros_like(base.weights)
            probs = masked_softmax_rows(scores[None, :], mask[None, :])[0]
        else:
            probs = softmax_rows(scores[None, :])[0]
        dscore = probs.copy()
        dscore[gold] -= 1.0
        return _score_grad_to_weights(dscore, x)
    if kind == LossKind.ELL1:
        if mask is not None:
            probs = masked_softmax_rows(scores[None, :], mask[None, :])[0]
        else:
            probs = softmax_rows(scores[None, :])[0]
        p_gold = probs[gold]
        dscore = probs * p_gold
        dscore[gold] -= p_gold
        return _score_grad_to_weights(dscore, x)
    if kind == LossKind.HINGE_MARGIN:
        eff = np.where(mask, scores, -np.inf) if mask is not None else scores
        if mask is not None and not mask[gold]:
            return np.zeros_like(base.weights)
        aug = eff + zero_one_cost(c)[:, gold]
        star = int(np.argmax(aug))
        dscore = np.zeros(c)
        dscore[star] += 1.0
        dscore[gold] -= 1.0
        return _score_grad_to_weights(dscore, x)
    raise ValueError(f"unsupported loss kind {kind}")


def violation_gradient(kind: LossKind, scorer, cmap: ConstraintMap,
                       instance: Instance) -> np.ndarray:
    """d violation / d weights for a linear scorer."""
    base = _linear_base(scorer)
    x = instance.feature_array()
    admissible = cmap.admissible_mask(instance.iid)
    scores, strict_mask = _single_row(scorer, instance)
    if strict_mask is not None:
        return np.zeros_like(base.weights)
    if kind == LossKind.CROSS_ENTROPY:
        dscore = ce_violation_rows(scores[None, :], admissible[None, :])[1][0]
    elif kind == LossKind.ELL1:
        dscore = l1_violation_rows(scores[None, :], admissible[None, :])[1][0]
    else:
        raise ValueError(f"violation is defined for ell1 and cross_entropy, not {kind}")
    return _score_grad_to_weights(dscore, x)


def _single_row(scorer, instance: Instance):
    """(finite score row, strict admissible mask or None) for one instance."""
    if isinstance(scorer, CcmModel):
        base_scores = np.asarray(scorer.base.scores(instance), dtype=float)
        admissible = scorer.cmap.admissible_mask(instance.iid)
        if scorer.strict:
            return base_scores, admissible
        return base_scores - scorer.mu * (~admissible), None
    return np.asarray(scorer.scores(instance), dtype=float), None
