"""Monte-Carlo Rademacher complexity estimation and capacity bounds.

The estimator draws sign matrices eps (one +/-1 per sample point and label,
seeded deterministically per draw) and averages the per-draw supremum of the
eps-weighted score sum over the scorer family. Suprema are exact for
enumerated families and for the norm-ball linear family (Cauchy-Schwarz
closed form); the violation-capped linear family uses projected gradient
ascent with restarts, so its estimate is a feasible lower estimate of the
true supremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConstraintMap, FiniteDistribution
from .scoring import CcmModel, softmax_rows

__all__ = [
    "ComplexityEstimate",
    "EnumeratedFamily",
    "LinearBallFamily",
    "empirical_rademacher",
    "ccm_complexity_identity_check",
    "CcmIdentityReport",
    "constrained_subset_complexity_bound",
    "ConstrainedComplexityReport",
    "generalization_gap_terms",
    "GapTerms",
    "improved_violation_constant",
]


@dataclass
class ComplexityEstimate:
    mean: float
    std_error: float
    num_epsilon_draws: int
    sup_solver: str
    per_draw_values: np.ndarray

    def to_csv_text(self) -> str:
        lines = ["draw,sup_value"]
        lines += [f"{i},{v!r}" for i, v in enumerate(self.per_draw_values)]
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        return (f"mean={self.mean!r}\nstd_error={self.std_error!r}\n"
                f"num_epsilon_draws={self.num_epsilon_draws}\n"
                f"sup_solver={self.sup_solver}\n")


@dataclass(frozen=True)
class EnumeratedFamily:
    scorers: tuple

    def __post_init__(self):
        if len(self.scorers) == 0:
            raise ValueError("enumerated family must be nonempty")


@dataclass(frozen=True)
class LinearBallFamily:
    """Linear scorers with a shared squared-norm budget, optionally capped by
    a population violation level over a known distribution."""

    num_labels: int
    dim: int
    budget: float = 1.0
    violation_cap: float | None = None
    cap_distribution: FiniteDistribution | None = None

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("norm budget must be positive")
        if (self.violation_cap is None) != (self.cap_distribution is None):
            raise ValueError("a violation cap needs its distribution and vice versa")


def _epsilon(seed: int, draw: int, m: int, c: int) -> np.ndarray:
    rng = np.random.default_rng([seed, draw])
    return rng.integers(0, 2, size=(m, c)) * 2.0 - 1.0


def _score_tensor(scorers, sample) -> np.ndarray:
    tensor = np.array([[s.scores(inst) for inst in sample] for s in scorers], dtype=float)
    if not np.isfinite(tensor).all():
        raise ValueError("enumerated families need finite scores on the sample")
    return tensor


def _finish(values: list[float], num_draws: int, solver: str) -> ComplexityEstimate:
    values = np.asarray(values, dtype=float)
    se = float(values.std(ddof=1) / math.sqrt(num_draws)) if num_draws > 1 else 0.0
    return ComplexityEstimate(float(values.mean()), se, num_draws, solver, values)


def empirical_rademacher(family, sample, num_draws: int = 2000, seed: int = 0,
                         sup_solver: str | None = None) -> ComplexityEstimate:
    """Estimate the empirical Rademacher complexity of a family on a sample.

    Singleton enumerated families short-circuit to exactly zero (the sign
    variables integrate out), reported with zero per-draw values.
    """
    m = len(sample)
    if m < 1:
        raise ValueError("sample must be nonempty")
    if isinstance(family, EnumeratedFamily):
        if sup_solver not in (None, "enumeration"):
            raise ValueError("enumerated families use the enumeration solver")
        if len(family.scorers) == 1:
            zeros = np.zeros(num_draws)
            return ComplexityEstimate(0.0, 0.0, num_draws, "enumeration", zeros)
        tensor = _score_tensor(family.scorers, sample)
        c = tensor.shape[2]
        values = []
        for d in range(num_draws):
            eps = _epsilon(seed, d, m, c)
            sups = np.einsum("kmc,mc->k", tensor, eps).max()
            values.append(sups / m)
        return _finish(values, num_draws, "enumeration")

    if isinstance(family, LinearBallFamily):
        features = _sample_features(sample, family.dim)
        if family.violation_cap is None:
            if sup_solver not in (None, "enumeration"):
                raise ValueError("the uncapped ball has an exact closed-form supremum")
            values = []
            root_b = math.sqrt(family.budget)
            for d in range(num_draws):
                eps = _epsilon(seed, d, m, family.num_labels)
                xi = eps.T @ features  # (c, p), row y = sum_i eps_iy x_i
                values.append(root_b * float(np.linalg.norm(xi)) / m)
            return _finish(values, num_draws, "enumeration")
        if sup_solver not in (None, "projected_gradient"):
            raise ValueError("the capped ball needs the projected_gradient solver")
        solver = _CapSolver(family)
        values = []
        for d in range(num_draws):
            eps = _epsilon(seed, d, m, family.num_labels)
            xi = eps.T @ features
            values.append(solver.supremum(xi, seed, d) / m)
        return _finish(values, num_draws, "projected_gradient")

    raise ValueError(f"unsupported family descriptor {type(family).__name__}")


def _sample_features(sample, dim: int) -> np.ndarray:
    if isinstance(sample, np.ndarray):
        features = np.asarray(sample, dtype=float)
    else:
        features = np.array([inst.feature_array() for inst in sample])
    if features.ndim != 2 or features.shape[1] != dim:
        raise ValueError(f"sample features must be (m, {dim})")
    return features


# ---------------------------------------------------------------------------
# Violation-capped supremum: projected gradient ascent with restarts
# ---------------------------------------------------------------------------

class _CapSolver:
    """Maximize <W, Xi> over the norm ball intersected with the population
    violation cap, staying feasible via bisection toward a feasible anchor."""

    def __init__(self, family: LinearBallFamily, restarts: int = 10, steps: int = 60):
        self.family = family
        self.restarts = restarts
        self.steps = steps
        dist = family.cap_distribution
        self.X = dist.features
        if self.X is None:
            raise ValueError("the cap distribution needs feature vectors")
        self.weights = dist.weights
        self.mask = dist.constraint.mask
        self.cap = family.violation_cap
        self.anchor = self._find_anchor()

    def violation(self, W: np.ndarray) -> np.ndarray:
        """Population violation of a stack of weight matrices, shape (r,)."""
        scores = np.einsum("rcp,np->rnc", W, self.X)
        probs = softmax_rows(scores)
        out = np.where(self.mask[None, :, :], 0.0, probs).sum(axis=2)
        return out @ self.weights

    def _find_anchor(self) -> np.ndarray:
        zero = np.zeros((1, self.family.num_labels, self.family.dim))
        if self.violation(zero)[0] <= self.cap:
            return zero[0]
        W = zero
        for k in range(400):
            scores = np.einsum("rcp,np->rnc", W, self.X)
            probs = softmax_rows(scores)
            p_adm = np.where(self.mask[None], probs, 0.0).sum(axis=2, keepdims=True)
            dscores = probs * (p_adm - self.mask[None])
            grad = np.einsum("rnc,n,np->rcp", dscores, self.weights, self.X)
            W = self._project_ball(W - (1.5 / math.sqrt(k + 1)) * grad)
            if self.violation(W)[0] <= self.cap * 0.999:
                return W[0]
        if self.violation(W)[0] <= self.cap:
            return W[0]
        raise ValueError(
            f"violation cap {self.cap} appears infeasible over the norm ball"
        )

    def _project_ball(self, W: np.ndarray) -> np.ndarray:
        sq = np.einsum("rcp,rcp->r", W, W)
        scale = np.minimum(1.0, np.sqrt(self.family.budget / np.maximum(sq, 1e-300)))
        return W * scale[:, None, None]

    def _pull_feasible(self, W: np.ndarray) -> np.ndarray:
        """Bisect each infeasible matrix toward the anchor; 30 halvings."""
        bad = self.violation(W) > self.cap
        if not bad.any():
            return W
        lo = np.zeros(W.shape[0])      # toward anchor: always feasible
        hi = np.ones(W.shape[0])
        anchor = self.anchor[None]
        for _ in range(30):
            mid = np.where(bad, (lo + hi) / 2.0, 1.0)
            cand = anchor + mid[:, None, None] * (W - anchor)
            infeasible = self.violation(cand) > self.cap
            hi = np.where(bad & infeasible, mid, hi)
            lo = np.where(bad & ~infeasible, mid, lo)
        lam = np.where(bad, lo, 1.0)
        return anchor + lam[:, None, None] * (W - anchor)

    def supremum(self, xi: np.ndarray, seed: int, draw: int) -> float:
        rng = np.random.default_rng([seed, draw, 977])
        shape = (self.restarts, self.family.num_labels, self.family.dim)
        W = self._project_ball(rng.normal(size=shape))
        W = self._pull_feasible(W)
        W[0] = self.anchor
        direction = xi / max(np.linalg.norm(xi), 1e-300)
        best = np.einsum("rcp,cp->r", W, xi)
        step = 0.5 * math.sqrt(self.family.budget)
        for _ in range(self.steps):
            W = self._project_ball(W + step * direction[None])
            W = self._pull_feasible(W)
            vals = np.einsum("rcp,cp->r", W, xi)
            best = np.maximum(best, vals)
            step *= 0.88
        return float(best.max())


# ---------------------------------------------------------------------------
# CCM shift identity
# ---------------------------------------------------------------------------

@dataclass
class CcmIdentityReport:
    base: ComplexityEstimate
    shifted: ComplexityEstimate
    max_abs_discrepancy: float | None
    paired_mean_difference: float
    pooled_std_error: float

    @property
    def within_noise(self) -> bool:
        return abs(self.paired_mean_difference) <= 3.0 * self.pooled_std_error


def ccm_complexity_identity_check(family, cmap: ConstraintMap, mu: float, sample,
                                  num_draws: int = 2000, seed: int = 0) -> CcmIdentityReport:
    """Check that shifting a family by -mu * v leaves its complexity unchanged.

    For enumerated families the per-draw supremum over the shifted family is
    recomputed from scratch and compared against (base supremum - mu * sum of
    eps-weighted violations): the discrepancy is exact. For linear families
    the two estimates share the eps draws and must agree within Monte-Carlo
    noise.
    """
    mu = float(mu)
    if math.isinf(mu):
        raise ValueError("the shift identity is stated for finite mu")
    m = len(sample)
    iids = [inst.iid for inst in sample]
    v = (~cmap.mask[iids]).astype(float)  # (m, c)

    base = empirical_rademacher(family, sample, num_draws, seed)
    if isinstance(family, EnumeratedFamily):
        shifted_scorers = tuple(CcmModel(s, mu, cmap) for s in family.scorers)
        shifted = empirical_rademacher(EnumeratedFamily(shifted_scorers), sample,
                                       num_draws, seed)
        worst = 0.0
        for d in range(num_draws):
            eps = _epsilon(seed, d, m, cmap.num_labels)
            shift = mu * float((eps * v).sum()) / m
            worst = max(worst, abs(shifted.per_draw_values[d]
                                   - (base.per_draw_values[d] - shift)))
        discrepancy = worst
    elif isinstance(family, LinearBallFamily):
        shifts = np.array([
            mu * float((_epsilon(seed, d, m, cmap.num_labels) * v).sum()) / m
            for d in range(num_draws)
        ])
        values = base.per_draw_values - shifts
        shifted = _finish(list(values), num_draws, base.sup_solver)
        discrepancy = None
    else:
        raise ValueError(f"unsupported family descriptor {type(family).__name__}")

    diff = float(shifted.mean - base.mean)
    pooled = math.sqrt(base.std_error ** 2 + shifted.std_error ** 2)
    return CcmIdentityReport(base, shifted, discrepancy, diff, pooled)


# ---------------------------------------------------------------------------
# Violation-capped capacity bound
# ---------------------------------------------------------------------------

@dataclass
class ConstrainedComplexityReport:
    capped: ComplexityEstimate
    unconstrained: ComplexityEstimate
    dual_bound_mean: float
    analytic_bound: float
    unconstrained_bound: float

    @property
    def within_bound(self) -> bool:
        return self.capped.mean <= self.analytic_bound + 3.0 * self.capped.std_error


def constrained_subset_complexity_bound(dist: FiniteDistribution, t: float,
                                        alpha, sigma2: float, m: int,
                                        num_sample_draws: int = 20,
                                        num_eps_draws: int = 25,
                                        seed: int = 0,
                                        budget: float = 1.0) -> ConstrainedComplexityReport:
    """Estimate the complexity of the violation-capped linear ball and compare
    it to the closed-form bound 0.5 * (sqrt(c/m) + sqrt((c - sigma^2 - |alpha|^2)/m)).

    Instances are resampled from `dist` per outer draw (the estimate targets
    the expected complexity), the capped supremum runs projected gradient
    ascent, and the analytic dual bound from the ball/halfspace relaxation is
    averaged alongside. Requires t < 1/(c + 2).
    """
    c = dist.num_labels
    if not t < 1.0 / (c + 2):
        raise ValueError(f"cap t={t} must be below 1/(c+2)={1.0 / (c + 2)}")
    alpha = np.asarray(alpha, dtype=float)
    if dist.features is None:
        raise ValueError("the capped family needs feature vectors")
    p = dist.features.shape[1]
    family = LinearBallFamily(c, p, budget, violation_cap=t, cap_distribution=dist)
    solver = _CapSolver(family)
    log_term = math.log(t * (c + 2))

    capped_vals, free_vals, duals = [], [], []
    draw = 0
    for s in range(num_sample_draws):
        rng = np.random.default_rng([seed, 7, s])
        idx = rng.choice(dist.num_points, size=m, p=dist.weights)
        X = dist.features[idx]
        for _ in range(num_eps_draws):
            eps = _epsilon(seed, draw, m, c)
            xi = eps.T @ X
            capped_vals.append(solver.supremum(xi, seed, draw) / m)
            free_vals.append(math.sqrt(budget) * float(np.linalg.norm(xi)) / m)
            duals.append(_dual_cap_value(xi, alpha, log_term) / m)
            draw += 1

    total = num_sample_draws * num_eps_draws
    capped = _finish(capped_vals, total, "projected_gradient")
    free = _finish(free_vals, total, "enumeration")
    analytic = 0.5 * (math.sqrt(c / m) + math.sqrt((c - sigma2 - float(alpha @ alpha)) / m))
    return ConstrainedComplexityReport(
        capped, free, float(np.mean(duals)), analytic, math.sqrt(c / m)
    )


def _dual_cap_value(xi: np.ndarray, alpha: np.ndarray, log_term: float) -> float:
    """min over nu >= 0 of nu*log_term + sqrt(sum_{j<c} |xi_j|^2 + |xi_c - nu*alpha|^2),
    the weak-duality bound on the relaxed capped supremum."""
    a2 = float(alpha @ alpha)
    xc = xi[-1]
    head = float(np.sum(xi[:-1] * xi[:-1]))

    def h(nu):
        d = xc - nu * alpha
        return nu * log_term + math.sqrt(head + float(d @ d))

    if a2 == 0.0:
        return h(0.0) if log_term >= 0 else -math.inf
    if log_term >= 0:
        return h(0.0)  # cap uninformative; nu = 0 recovers the unconstrained value
    L2 = log_term * log_term
    if a2 <= L2:
        return -math.inf  # relaxed program infeasible; no finite dual bound
    b_dot = float(xc @ alpha)
    qa = a2 * a2 - L2 * a2
    qb = -2.0 * a2 * b_dot + 2.0 * L2 * b_dot
    qc = b_dot * b_dot - L2 * (head + float(xc @ xc))
    disc = qb * qb - 4.0 * qa * qc
    candidates = [0.0]
    if disc >= 0:
        root = math.sqrt(disc)
        candidates += [max(0.0, (-qb + root) / (2 * qa)), max(0.0, (-qb - root) / (2 * qa))]
    return min(h(nu) for nu in candidates)


# ---------------------------------------------------------------------------
# Generalization-gap bookkeeping
# ---------------------------------------------------------------------------

def improved_violation_constant(num_labels: int, constrained_size: int) -> float:
    """Tighter complexity multiplier when every admissible set has the same
    size c0: (sqrt(2)/2) * sqrt(1/c0 + 1/(c - c0)). Symmetric in c0 <-> c-c0."""
    c, c0 = num_labels, constrained_size
    if not 0 < c0 < c:
        raise ValueError("constrained size must lie strictly between 0 and c")
    return (math.sqrt(2.0) / 2.0) * math.sqrt(1.0 / c0 + 1.0 / (c - c0))


@dataclass
class GapTerms:
    delta: float
    risk_gap: float
    b_labeled: float
    violation_gap: float | None = None
    b_unlabeled: float | None = None
    improved_constant: float | None = None
    improved_violation_gap: float | None = None

    def to_kv_text(self) -> str:
        rows = [f"delta={self.delta!r}", f"risk_gap={self.risk_gap!r}",
                f"b_labeled={self.b_labeled!r}"]
        for name in ("violation_gap", "b_unlabeled", "improved_constant",
                     "improved_violation_gap"):
            v = getattr(self, name)
            if v is not None:
                rows.append(f"{name}={v!r}")
        return "\n".join(rows) + "\n"


def _mean_of(estimate) -> float:
    return estimate.mean if isinstance(estimate, ComplexityEstimate) else float(estimate)


def generalization_gap_terms(m_labeled: int, m_unlabeled: int | None, delta: float,
                             complexity_labeled, complexity_unlabeled=None,
                             c0: int | None = None,
                             num_labels: int | None = None) -> GapTerms:
    """Assemble the additive terms of the uniform-convergence bounds:
    gap(m) = R_m + sqrt(log(1/delta) / (2m)) and B(delta, m) = R_m + 2 * that
    square root; plus the improved violation constant when |C(x)| is fixed."""
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if m_labeled < 1:
        raise ValueError("m_labeled must be positive")

    def conf(m):
        return math.sqrt(math.log(1.0 / delta) / (2.0 * m))

    r_l = _mean_of(complexity_labeled)
    terms = GapTerms(delta=delta, risk_gap=r_l + conf(m_labeled),
                     b_labeled=r_l + 2.0 * conf(m_labeled))
    if m_unlabeled and complexity_unlabeled is not None:
        r_u = _mean_of(complexity_unlabeled)
        terms.violation_gap = r_u + conf(m_unlabeled)
        terms.b_unlabeled = r_u + 2.0 * conf(m_unlabeled)
        if c0 is not None:
            if num_labels is None:
                raise ValueError("c0 needs num_labels")
            const = improved_violation_constant(num_labels, c0)
            terms.improved_constant = const
            terms.improved_violation_gap = const * r_u + conf(m_unlabeled)
    return terms
