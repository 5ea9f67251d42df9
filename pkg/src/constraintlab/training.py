"""Gradient-based minimizers for the four learning objectives.

Objectives: plain risk minimization (`ERM`), risk plus a weighted violation
penalty (`ERVM_SURROGATE`, with either the l1 or cross-entropy loss family),
strictly-constrained training where gradients flow through the
admissible-renormalized softmax (`ON_TRAINING_CCM`), and the penalty-shifted
regularized objective over constrained models (`COMBINED_CCM_REGULARIZED`).

Training is deterministic: full-batch gradient descent with Armijo
backtracking (c = 1e-4, shrink 0.5) from zero parameters (or an explicit
`init`), run until the gradient norm drops below `grad_tol` or `max_iters`
is reached. Given a FiniteDistribution it minimizes the exact population
objective; given a Dataset it minimizes the empirical averages.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConstraintMap, Dataset, FiniteDistribution
from .losses import (
    LossKind,
    ce_loss_rows,
    ce_violation_rows,
    l1_loss_rows,
    l1_violation_rows,
    population_risk,
    strict_ce_loss_rows,
)
from .scoring import LinearScorer, ScoreTable
from .synthgen import constraint_baseline_table

__all__ = [
    "Objective",
    "TrainConfig",
    "TrainResult",
    "OptimizationError",
    "train",
    "evaluate_objective",
    "evaluate_regularized_objective",
    "deviation_bound_check",
    "DeviationBoundReport",
]


class Objective(enum.Enum):
    ERM = "erm"
    ERVM_SURROGATE = "ervm_surrogate"
    ON_TRAINING_CCM = "on_training_ccm"
    COMBINED_CCM_REGULARIZED = "combined_ccm_regularized"


class OptimizationError(RuntimeError):
    """The objective became non-finite; carries the trace up to the failure."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainConfig:
    objective: Objective
    rho: float = 0.0
    mu: float = 0.0
    kind: LossKind = LossKind.CROSS_ENTROPY
    learning_rate: float = 1.0
    max_iters: int = 500
    grad_tol: float = 1e-6
    seed: int = 0
    baseline_u: float = 0.0
    constraint_baseline_scale: float | None = None

    def __post_init__(self):
        if self.rho < 0 or self.mu < 0 or self.baseline_u < 0:
            raise ValueError("rho, mu, and baseline_u must be nonnegative")
        if self.learning_rate <= 0 or self.grad_tol <= 0:
            raise ValueError("learning_rate and grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.kind == LossKind.HINGE_MARGIN:
            raise ValueError("training supports the ell1 and cross_entropy families")
        strict_objectives = (Objective.ON_TRAINING_CCM, Objective.COMBINED_CCM_REGULARIZED)
        if self.objective in strict_objectives and self.kind != LossKind.CROSS_ENTROPY:
            raise ValueError(f"{self.objective.value} is a cross-entropy objective")


@dataclass
class TrainResult:
    scorer: object
    trace: list  # rows (iteration, objective, grad_norm)
    converged: bool
    final_grad_norm: float
    used_baseline: bool = False

    @property
    def objective_trace(self):
        return [(it, obj) for it, obj, _ in self.trace]

    @property
    def final_objective(self) -> float:
        return self.trace[-1][1]

    def to_csv_text(self) -> str:
        lines = ["iteration,objective,grad_norm"]
        lines += [f"{it},{obj!r},{g!r}" for it, obj, g in self.trace]
        return "\n".join(lines) + "\n"


@dataclass
class _Problem:
    """Scores -> (objective, d objective / d scores) plus the parameterization."""

    config: TrainConfig
    mask: np.ndarray           # admissible mask aligned with score rows
    risk_rows: np.ndarray      # indices of rows entering the risk term
    risk_weights: np.ndarray
    gold: np.ndarray
    viol_rows: np.ndarray      # indices of rows entering the violation term
    viol_weights: np.ndarray
    features: np.ndarray | None
    num_rows: int
    num_labels: int

    def __post_init__(self):
        self._risk_unique = np.unique(self.risk_rows).size == self.risk_rows.size
        self._viol_unique = np.unique(self.viol_rows).size == self.viol_rows.size

    def scores_of(self, params: np.ndarray) -> np.ndarray:
        if self.features is None:
            return params
        return self.features @ params.T

    def shape(self):
        if self.features is None:
            return (self.num_rows, self.num_labels)
        return (self.num_labels, self.features.shape[1])

    def make_scorer(self, params: np.ndarray):
        if self.features is None:
            return ScoreTable(params)
        return LinearScorer(params)

    def value_and_grad(self, params: np.ndarray):
        cfg = self.config
        scores = self.scores_of(params)
        dscores = np.zeros_like(scores)
        value = 0.0

        risk_scores = scores[self.risk_rows]
        risk_mask = self.mask[self.risk_rows]
        shift = None
        if cfg.objective == Objective.COMBINED_CCM_REGULARIZED and not math.isinf(cfg.mu):
            shift = cfg.mu * (~risk_mask)
            risk_scores = risk_scores - shift

        if cfg.objective in (Objective.ERM, Objective.ERVM_SURROGATE):
            rows = ce_loss_rows if cfg.kind == LossKind.CROSS_ENTROPY else l1_loss_rows
            losses, dloss = rows(risk_scores, self.gold)
        elif cfg.objective == Objective.ON_TRAINING_CCM or math.isinf(cfg.mu):
            losses, dloss = strict_ce_loss_rows(scores[self.risk_rows], self.gold, risk_mask)
        else:
            losses, dloss = ce_loss_rows(risk_scores, self.gold)
        value += float(np.dot(self.risk_weights, losses))
        contribution = self.risk_weights[:, None] * dloss
        if self._risk_unique:
            dscores[self.risk_rows] += contribution
        else:
            np.add.at(dscores, self.risk_rows, contribution)

        needs_violation = (
            cfg.objective == Objective.ERVM_SURROGATE
            or (cfg.objective == Objective.COMBINED_CCM_REGULARIZED and not math.isinf(cfg.mu))
        ) and cfg.rho > 0
        if needs_violation:
            v_scores = scores[self.viol_rows]
            v_mask = self.mask[self.viol_rows]
            if cfg.objective == Objective.COMBINED_CCM_REGULARIZED:
                v_scores = v_scores - cfg.mu * (~v_mask)
            rows = (ce_violation_rows if cfg.kind == LossKind.CROSS_ENTROPY
                    else l1_violation_rows)
            viols, dviol = rows(v_scores, v_mask)
            value += cfg.rho * float(np.dot(self.viol_weights, viols))
            contribution = cfg.rho * self.viol_weights[:, None] * dviol
            if self._viol_unique:
                dscores[self.viol_rows] += contribution
            else:
                np.add.at(dscores, self.viol_rows, contribution)

        if self.features is None:
            grad = dscores
        else:
            grad = dscores.T @ self.features
        return value, grad


def _build_problem(config: TrainConfig, data, cmap: ConstraintMap | None,
                   init) -> tuple[_Problem, np.ndarray]:
    if isinstance(data, FiniteDistribution):
        cmap = data.constraint if cmap is None else cmap
        n = data.num_points
        idx = np.arange(n)
        problem = _Problem(
            config=config, mask=cmap.mask,
            risk_rows=idx, risk_weights=np.asarray(data.weights),
            gold=np.asarray(data.oracle),
            viol_rows=idx, viol_weights=np.asarray(data.weights),
            features=data.features, num_rows=n, num_labels=cmap.num_labels,
        )
    elif isinstance(data, Dataset):
        if cmap is None:
            raise ValueError("training on a dataset needs an explicit constraint map")
        problem = _build_empirical_problem(config, data, cmap)
    else:
        raise TypeError("data must be a FiniteDistribution or a Dataset")

    if init is None:
        params = np.zeros(problem.shape())
    elif isinstance(init, ScoreTable):
        if problem.features is not None:
            raise ValueError("table init given for a feature-parameterized problem")
        params = init.table.copy()
    elif isinstance(init, LinearScorer):
        if problem.features is None:
            raise ValueError("linear init given for a tabulated problem")
        params = init.weights.copy()
    else:
        params = np.array(init, dtype=float)
    if params.shape != problem.shape():
        raise ValueError(f"init shape {params.shape} != expected {problem.shape()}")
    return problem, params


def _build_empirical_problem(config: TrainConfig, data: Dataset,
                             cmap: ConstraintMap) -> _Problem:
    needs_risk = True
    needs_viol = config.objective == Objective.ERVM_SURROGATE and config.rho > 0
    if needs_risk and data.m_labeled == 0:
        raise ValueError("objective needs a nonempty labeled split")
    if needs_viol and data.m_unlabeled == 0:
        raise ValueError("objective needs a nonempty unlabeled split")

    samples = [s.instance for s in data.labeled] + list(data.unlabeled)
    featured = samples[0].features is not None if samples else False
    if featured:
        rows = np.array([inst.features for inst in samples])
        iids = np.array([inst.iid for inst in samples])
        mask = cmap.mask[iids]
        features = rows
        num_rows = len(samples)
        risk_rows = np.arange(data.m_labeled)
        viol_rows = np.arange(data.m_labeled, len(samples))
    else:
        mask = cmap.mask
        features = None
        num_rows = cmap.num_instances
        risk_rows = np.array([s.instance.iid for s in data.labeled], dtype=int)
        viol_rows = np.array([inst.iid for inst in data.unlabeled], dtype=int)
    gold = np.array([s.label for s in data.labeled], dtype=int)
    m_l = max(data.m_labeled, 1)
    m_u = max(data.m_unlabeled, 1)
    return _Problem(
        config=config, mask=mask,
        risk_rows=risk_rows, risk_weights=np.full(data.m_labeled, 1.0 / m_l),
        gold=gold,
        viol_rows=viol_rows, viol_weights=np.full(data.m_unlabeled, 1.0 / m_u),
        features=features, num_rows=num_rows, num_labels=cmap.num_labels,
    )


def train(config: TrainConfig, data, cmap: ConstraintMap | None = None,
          init=None, callback=None) -> TrainResult:
    """Minimize the configured objective; deterministic given the config.

    `callback(iteration, scorer, objective)` is invoked after every accepted
    step. When `constraint_baseline_scale` is set (population training), the
    constraint-indicator baseline joins the hypothesis class: the result is
    whichever of {descent iterate, baseline} has the lower objective.
    """
    problem, params = _build_problem(config, data, cmap, init)
    value, grad = problem.value_and_grad(params)
    if not math.isfinite(value):
        raise OptimizationError(f"objective is {value} at initialization",
                                [(0, value, float("nan"))])
    gnorm = float(np.linalg.norm(grad))
    trace = [(0, value, gnorm)]
    converged = gnorm < config.grad_tol

    step_start = config.learning_rate
    for it in range(1, config.max_iters + 1):
        if converged:
            break
        step = step_start
        accepted = None
        for _ in range(60):
            cand = params - step * grad
            cval, cgrad = problem.value_and_grad(cand)
            if math.isfinite(cval) and cval <= value - 1e-4 * step * gnorm * gnorm:
                accepted = (cand, cval, cgrad)
                break
            if math.isnan(cval):
                raise OptimizationError(f"objective became NaN at iteration {it}", trace)
            step *= 0.5
        if accepted is None:
            break  # line search stalled at machine precision
        # Warm-start the next search from twice the accepted step.
        step_start = min(config.learning_rate, 2.0 * step)
        params, value, grad = accepted
        gnorm = float(np.linalg.norm(grad))
        trace.append((it, value, gnorm))
        if callback is not None:
            callback(it, problem.make_scorer(params), value)
        converged = gnorm < config.grad_tol

    scorer = problem.make_scorer(params)
    used_baseline = False
    if config.constraint_baseline_scale is not None:
        if not isinstance(data, FiniteDistribution):
            raise ValueError("the baseline union is defined for population training")
        resolved = data.constraint if cmap is None else cmap
        baseline = constraint_baseline_table(resolved, config.constraint_baseline_scale)
        bval = evaluate_objective(config, data, resolved, baseline)
        if bval < value:
            scorer, value, used_baseline, converged = baseline, bval, True, True
            trace.append((trace[-1][0], bval, gnorm))
    return TrainResult(scorer, trace, converged, gnorm, used_baseline)


def evaluate_objective(config: TrainConfig, data, cmap: ConstraintMap | None,
                       scorer) -> float:
    """Objective value of an arbitrary scorer under a training configuration."""
    if isinstance(scorer, LinearScorer):
        params = scorer.weights
    elif isinstance(scorer, ScoreTable):
        params = scorer.table
    else:
        raise TypeError("expected a LinearScorer or ScoreTable")
    problem, _ = _build_problem(config, data, cmap, init=None)
    if (problem.features is None) != isinstance(scorer, ScoreTable):
        raise ValueError("scorer parameterization does not match the problem")
    params = np.asarray(params, dtype=float)
    if params.shape != problem.shape():
        raise ValueError(f"scorer shape {params.shape} != expected {problem.shape()}")
    return problem.value_and_grad(params)[0]


def evaluate_regularized_objective(scorer, dist: FiniteDistribution,
                                   cmap: ConstraintMap | None, rho: float,
                                   kind: LossKind) -> float:
    """Exact population value of risk + rho * violation for the loss family."""
    cmap = dist.constraint if cmap is None else cmap
    report = population_risk(dist, scorer, kind, cmap)
    violation = (report.violation_ce if kind == LossKind.CROSS_ENTROPY
                 else report.violation_l1)
    return report.risk + rho * violation


@dataclass
class DeviationBoundReport:
    """Exact sandwich check for the risk of the regularized minimizer."""

    rho: float
    risks: list
    violations: list
    risk_minimizers: list
    regularized_minimizers: list
    violation_minimizers: list
    lower_ok: bool
    upper_ok: bool
    worst_lower_slack: float
    worst_upper_slack: float

    @property
    def all_pass(self) -> bool:
        return self.lower_ok and self.upper_ok


def deviation_bound_check(dist: FiniteDistribution, cmap: ConstraintMap | None,
                          rho: float, model_grid,
                          tie_tol: float = 1e-10,
                          slack: float = 1e-10) -> DeviationBoundReport:
    """Enumerate the exact minimizers over a finite grid and verify
    risk(f_0) <= risk(f_rho) <= risk(f_0) + rho * (V(f_0) - V(f_inf)),
    for every combination of tied minimizers."""
    model_grid = list(model_grid)
    if not model_grid:
        raise ValueError("model grid must be nonempty")
    cmap = dist.constraint if cmap is None else cmap
    reports = [population_risk(dist, f, LossKind.ELL1, cmap) for f in model_grid]
    risks = [r.risk for r in reports]
    viols = [r.violation_l1 for r in reports]
    objs = [r + rho * v for r, v in zip(risks, viols)]

    def ties(values):
        lo = min(values)
        return [i for i, v in enumerate(values) if v <= lo + tie_tol]

    f0s, frhos, finfs = ties(risks), ties(objs), ties(viols)
    worst_lower = -math.inf
    worst_upper = -math.inf
    for j in frhos:
        for i in f0s:
            worst_lower = max(worst_lower, risks[i] - risks[j])
            for k in finfs:
                bound = risks[i] + rho * (viols[i] - viols[k])
                worst_upper = max(worst_upper, risks[j] - bound)
    return DeviationBoundReport(
        rho=rho, risks=risks, violations=viols,
        risk_minimizers=f0s, regularized_minimizers=frhos, violation_minimizers=finfs,
        lower_ok=worst_lower <= slack, upper_ok=worst_upper <= slack,
        worst_lower_slack=worst_lower, worst_upper_slack=worst_upper,
    )
