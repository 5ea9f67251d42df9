"""Closed-form effects of constrained inference on population risks.

Provides the exact risk change `delta(mu) = R(f) - R(f^mu)` for the
cross-entropy, l1, and margin criteria together with their analytic lower
bounds, the sign test for whether any finite penalty helps, the Lambert-W
rule for the largest safe penalty, and the thresholds governing when the
regularized and constrained approaches combine profitably.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ConstraintMap, FiniteDistribution, oracle_noise_rate
from .losses import LossKind, expectation, population_risk
from .scoring import CcmModel, masked_softmax_rows, score_matrix, softmax_rows

__all__ = [
    "PreconditionError",
    "BenefitSign",
    "RiskDelta",
    "lambert_w",
    "select_mu",
    "risk_delta",
    "marginal_benefit_sign",
    "combo_rho_threshold",
    "post_training_futility_rho",
    "margin_delta",
    "l1_delta",
    "ccm_probability_derivative",
    "zero_one_violation",
    "mu_improvement_scan",
    "MuScan",
    "default_mu_grid",
]

_BRANCH_POINT = -math.exp(-1.0)


class PreconditionError(ValueError):
    """A theorem hypothesis required by the operation does not hold."""

    def __init__(self, message, delta: float | None = None):
        super().__init__(message)
        self.delta = delta


class BenefitSign(enum.Enum):
    IMPROVES = "improves"
    DEGRADES = "degrades"
    NEUTRAL = "neutral"


def lambert_w(t: float) -> float:
    """Principal branch of the Lambert W function on [-1/e, inf).

    Solves w * exp(w) = t by Halley iteration from a regime-dependent initial
    guess (branch-point series below -0.25, a rational guess in the middle,
    log(t) - log(log(t)) for large t). The result satisfies
    |w*exp(w) - t| <= 1e-12 * max(1, |t|).
    """
    t = float(t)
    if math.isnan(t):
        raise ValueError("lambert_w is undefined for NaN")
    if t < _BRANCH_POINT:
        # Tolerate rounding just below the branch point.
        if t < _BRANCH_POINT * (1 + 1e-14) - 1e-300:
            raise ValueError(f"argument {t!r} below -1/e is outside the principal branch")
        t = _BRANCH_POINT
    if t == 0.0:
        return 0.0

    p2 = 2.0 * (math.e * t + 1.0)
    if p2 < 0.0:
        p2 = 0.0
    if p2 <= 2.0 * math.e * 1e-4:
        # Branch-point series in p = sqrt(2(1 + e t)); accurate to ~1e-13 in w
        # here, where Halley's denominator (w+1) would be ill-conditioned.
        p = math.sqrt(p2)
        return (-1.0 + p - p2 / 3.0 + (11.0 / 72.0) * p * p2
                - (43.0 / 540.0) * p2 * p2 + (769.0 / 17280.0) * p * p2 * p2
                - (221.0 / 8505.0) * p2 * p2 * p2)

    if t < -0.25:
        p = math.sqrt(p2)
        w = -1.0 + p - p2 / 3.0 + (11.0 / 72.0) * p * p2
    elif t < 3.0:
        w = t / (1.0 + t)
    else:
        log_t = math.log(t)
        w = log_t - math.log(log_t)

    for _ in range(50):
        ew = math.exp(w)
        f = w * ew - t
        if f == 0.0:
            break
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        dw = f / denom
        w -= dw
        if abs(dw) <= 1e-16 * (2.0 + abs(w)):
            break
    residual = abs(w * math.exp(w) - t)
    if residual > 1e-12 * max(1.0, abs(t)):
        raise ArithmeticError(f"lambert_w failed to converge at t={t!r} (residual {residual})")
    return w


def select_mu(violation: float, noise_rate: float) -> float:
    """Largest penalty with a guaranteed non-increase of cross-entropy risk.

    Returns W(-eta * exp(-eta)) + eta with eta = violation / noise_rate;
    infinity when the constraint is noise-free, 0 when eta = 1.
    """
    violation = float(violation)
    noise_rate = float(noise_rate)
    if noise_rate < 0:
        raise PreconditionError("noise rate must be nonnegative")
    if violation < noise_rate - 1e-15:
        raise PreconditionError(
            f"requires violation >= noise rate, got {violation} < {noise_rate}"
        )
    if noise_rate == 0.0:
        return math.inf
    eta = violation / noise_rate
    if eta <= 1.0:
        return 0.0
    return lambert_w(-eta * math.exp(-eta)) + eta


@dataclass
class RiskDelta:
    """Risk reduction achieved by the penalty mu, with analytic lower bounds."""

    mu: float
    delta_ce: float
    lower_bound_ce: float
    delta_l1: float
    lower_bound_l1: float
    delta_margin: float
    eta: float

    CSV_HEADER = "set_id,mu,delta_ce,lower_bound_ce,delta_l1,lower_bound_l1,delta_margin,eta"

    def to_csv_row(self, set_id: str) -> str:
        vals = [self.mu, self.delta_ce, self.lower_bound_ce, self.delta_l1,
                self.lower_bound_l1, self.delta_margin, self.eta]
        return ",".join([set_id] + [repr(float(v)) for v in vals])


def _confidence_weighted_violation(dist: FiniteDistribution, scorer, cmap: ConstraintMap) -> float:
    """E[P_f(y_ora | x) * P_f(inadmissible | x)] over the support."""
    probs = softmax_rows(score_matrix(scorer, dist))
    idx = np.arange(dist.num_points)
    p_gold = probs[idx, dist.oracle]
    p_out = np.where(cmap.mask, 0.0, probs).sum(axis=1)
    return expectation(dist.weights, p_gold * p_out)


def risk_delta(dist: FiniteDistribution, scorer, cmap: ConstraintMap, mu: float) -> RiskDelta:
    """Exact population risk changes R(f) - R(f^mu) for all three criteria.

    Raises ArithmeticError if the exact cross-entropy delta falls below its
    analytic lower bound (a theorem-level invariant; violation means a bug).
    """
    mu = float(mu)
    if mu < 0 or math.isnan(mu):
        raise ValueError("mu must be nonnegative")
    base_ce = population_risk(dist, scorer, LossKind.CROSS_ENTROPY, cmap)
    base_l1 = population_risk(dist, scorer, LossKind.ELL1, cmap)
    ccm = CcmModel(scorer, mu, cmap)
    ccm_ce = population_risk(dist, ccm, LossKind.CROSS_ENTROPY, cmap)
    ccm_l1 = population_risk(dist, ccm, LossKind.ELL1, cmap)

    v_l1 = base_ce.violation_l1
    v_ora = oracle_noise_rate(dist, cmap)
    conf_viol = _confidence_weighted_violation(dist, scorer, cmap)

    if math.isinf(mu):
        noise_term = math.inf if v_ora > 0 else 0.0
        lb_ce = v_l1 - noise_term
        # Noise-free strict inference admits the stronger l1 bound E[p_gold * p_out].
        lb_l1 = conf_viol - noise_term
    else:
        lb_ce = v_l1 * (1.0 - math.exp(-mu)) - mu * v_ora
        lb_l1 = 0.5 * (1.0 - math.exp(-2.0 * mu)) * conf_viol - mu * v_ora

    delta_ce = base_ce.risk - ccm_ce.risk
    delta_l1 = base_l1.risk - ccm_l1.risk
    delta_margin = base_ce.margin - ccm_ce.margin
    eta = math.inf if v_ora == 0 else v_l1 / v_ora

    if delta_ce < lb_ce - 1e-10:
        raise ArithmeticError(
            f"exact ce delta {delta_ce} fell below its lower bound {lb_ce} at mu={mu}"
        )
    return RiskDelta(mu, delta_ce, lb_ce, delta_l1, lb_l1, delta_margin, eta)


def marginal_benefit_sign(dist: FiniteDistribution, scorer, cmap: ConstraintMap,
                          tol: float = 1e-12) -> BenefitSign:
    """Whether an infinitesimal penalty reduces cross-entropy risk.

    The analytic derivative of the risk change at mu=0 is V(f) - V_ora; it is
    cross-checked against a forward finite difference (step 1e-6) before the
    sign is reported.
    """
    v = population_risk(dist, scorer, LossKind.ELL1, cmap).violation_l1
    v_ora = oracle_noise_rate(dist, cmap)
    analytic = v - v_ora

    h = 1e-6
    r0 = population_risk(dist, scorer, LossKind.CROSS_ENTROPY, cmap).risk
    rh = population_risk(dist, CcmModel(scorer, h, cmap), LossKind.CROSS_ENTROPY, cmap).risk
    fd = (r0 - rh) / h
    if abs(fd - analytic) > 5e-6 * max(1.0, abs(analytic)):
        raise ArithmeticError(
            f"finite-difference derivative {fd} disagrees with analytic {analytic}"
        )
    if analytic > tol:
        return BenefitSign.IMPROVES
    if analytic < -tol:
        return BenefitSign.DEGRADES
    return BenefitSign.NEUTRAL


def combo_rho_threshold(dist: FiniteDistribution, cmap: ConstraintMap, f_post,
                        mu: float) -> float:
    """Largest regularization weight below which the combined objective is
    guaranteed to beat the unregularized risk minimizer.

    mu = 0 degenerates to threshold 0 (no penalty, no improvement possible).
    Requires the penalty to actually improve f_post; raises PreconditionError
    (carrying the exact delta) otherwise.
    """
    mu = float(mu)
    if mu == 0.0:
        return 0.0
    rd = risk_delta(dist, f_post, cmap, mu)
    if not rd.delta_ce > 0:
        raise PreconditionError(
            f"penalty mu={mu} does not improve the base model (delta={rd.delta_ce})",
            delta=rd.delta_ce,
        )
    v_ce_post = population_risk(dist, f_post, LossKind.CROSS_ENTROPY, cmap).violation_ce
    v_ce_ccm = population_risk(dist, CcmModel(f_post, mu, cmap),
                               LossKind.CROSS_ENTROPY, cmap).violation_ce
    v_ora = oracle_noise_rate(dist, cmap)
    if v_ce_ccm == 0.0:
        return math.inf
    return (v_ce_post - mu * v_ora) / v_ce_ccm - 1.0


def post_training_futility_rho(dist: FiniteDistribution, cmap: ConstraintMap,
                               model_grid) -> float:
    """Regularization weight at or above which no penalty can help the
    regularized minimizer: 1 / (V_ora - min violation over the grid)."""
    model_grid = list(model_grid)
    if not model_grid:
        raise ValueError("model grid must be nonempty")
    v_inf = min(
        population_risk(dist, f, LossKind.ELL1, cmap).violation_l1 for f in model_grid
    )
    v_ora = oracle_noise_rate(dist, cmap)
    if v_ora < v_inf - 1e-12:
        raise PreconditionError(
            f"requires noise rate >= min violation, got {v_ora} < {v_inf}"
        )
    gap = v_ora - v_inf
    if gap <= 0:
        return math.inf
    return 1.0 / gap


def margin_delta(dist: FiniteDistribution, scorer, cmap: ConstraintMap, mu: float) -> float:
    """Exact population margin reduction M(f) - M(f^mu)."""
    base = population_risk(dist, scorer, LossKind.ELL1, cmap).margin
    ccm = population_risk(dist, CcmModel(scorer, mu, cmap), LossKind.ELL1, cmap).margin
    return base - ccm


def l1_delta(dist: FiniteDistribution, scorer, cmap: ConstraintMap, mu: float) -> float:
    """Exact population l1 risk reduction R(f) - R(f^mu)."""
    base = population_risk(dist, scorer, LossKind.ELL1, cmap).risk
    ccm = population_risk(dist, CcmModel(scorer, mu, cmap), LossKind.ELL1, cmap).risk
    return base - ccm


def ccm_probability_derivative(scorer, cmap: ConstraintMap, instance, mu: float,
                               label: int) -> float:
    """d P_{f^mu}(y|x) / d mu = P_{f^mu}(y) * (P_{f^mu}(inadmissible) - v(x,y))."""
    mu = float(mu)
    if math.isinf(mu):
        raise ValueError("the derivative is defined for finite mu")
    admissible = cmap.admissible_mask(instance.iid)
    scores = np.asarray(scorer.scores(instance), dtype=float) - mu * (~admissible)
    probs = softmax_rows(scores[None, :])[0]
    p_out = float(probs[~admissible].sum())
    v = 0.0 if admissible[int(label)] else 1.0
    return float(probs[int(label)] * (p_out - v))


def zero_one_violation(dist: FiniteDistribution, scorer, cmap: ConstraintMap) -> float:
    """Probability that the argmax prediction lands outside the admissible set."""
    scores = score_matrix(scorer, dist)
    winners = np.argmax(scores, axis=1)
    violated = ~cmap.mask[np.arange(dist.num_points), winners]
    return expectation(dist.weights, violated.astype(float))


def default_mu_grid() -> np.ndarray:
    """Geometric penalty grid used for 'no mu helps' certifications."""
    return np.geomspace(1e-3, 40.0, 64)


@dataclass
class MuScan:
    """Risk deltas over a penalty grid plus the strict limit and mu=0 slope."""

    grid: np.ndarray
    deltas: np.ndarray
    delta_at_inf: float
    derivative_at_zero: float

    @property
    def max_delta(self) -> float:
        return max(float(self.deltas.max()), self.delta_at_inf)


def mu_improvement_scan(dist: FiniteDistribution, scorer, cmap: ConstraintMap,
                        grid=None) -> MuScan:
    """Evaluate the exact cross-entropy delta over a mu grid, at mu=inf, and
    the analytic derivative at mu=0 (= V(f) - V_ora)."""
    grid = default_mu_grid() if grid is None else np.asarray(grid, dtype=float)
    base = population_risk(dist, scorer, LossKind.CROSS_ENTROPY, cmap)
    deltas = np.array([
        base.risk - population_risk(dist, CcmModel(scorer, float(m), cmap),
                                    LossKind.CROSS_ENTROPY, cmap).risk
        for m in grid
    ])
    delta_inf = base.risk - population_risk(
        dist, CcmModel(scorer, math.inf, cmap), LossKind.CROSS_ENTROPY, cmap
    ).risk
    slope = base.violation_l1 - oracle_noise_rate(dist, cmap)
    return MuScan(grid, deltas, delta_inf, slope)
