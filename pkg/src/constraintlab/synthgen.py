"""Constructors for synthetic finite distributions and scorer families.

Everything here is seed-deterministic and self-checking: a generator that
promises an exact noise rate or a designed inequality re-verifies it on the
constructed object and aborts with :class:`ConstructionError` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConstraintMap, FiniteDistribution, oracle_noise_rate
from .scoring import LinearScorer, ScoreTable, masked_softmax_rows, softmax_rows

__all__ = [
    "ConstructionError",
    "ProofConstruction",
    "make_finite",
    "make_proof_construction",
    "make_gaussian_features",
    "make_two_point_line",
    "constraint_baseline_table",
    "random_score_table",
    "random_linear_scorer",
]


class ConstructionError(ValueError):
    """A generator's parameters are infeasible or its self-check failed."""


@dataclass
class ProofConstruction:
    """A distribution plus the enumerated scorers named by a proof sketch."""

    name: str
    dist: FiniteDistribution
    scorers: list
    info: dict = field(default_factory=dict)


def _normalized_weights(raw: np.ndarray) -> np.ndarray:
    w = raw / math.fsum(raw.tolist())
    # Nudge the largest entry so fsum(w) == 1 exactly.
    w[int(np.argmax(w))] += 1.0 - math.fsum(w.tolist())
    return w


def _random_admissible(rng, num_points: int, num_labels: int) -> np.ndarray:
    """Random proper admissible sets: sizes in [1, c-1] so every point keeps
    at least one inadmissible label."""
    mask = np.zeros((num_points, num_labels), dtype=bool)
    for i in range(num_points):
        k = int(rng.integers(1, num_labels))
        members = rng.choice(num_labels, size=k, replace=False)
        mask[i, members] = True
    return mask


def make_finite(num_labels: int, num_points: int, target_noise_rate: float,
                seed: int, uniform_weights: bool = True,
                feature_dim: int = 0) -> FiniteDistribution:
    """A finite distribution whose exact noise rate tracks the target.

    Under uniform weights the achieved rate is exact whenever
    `target * num_points` is integral; otherwise the nearest achievable rate
    is used and recorded (with a warning) in `dist.info`.
    """
    if num_labels < 2 or num_points < 1:
        raise ConstructionError("need at least 2 labels and 1 point")
    if not 0.0 <= target_noise_rate <= 1.0:
        raise ConstructionError("target noise rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    if uniform_weights:
        weights = _normalized_weights(np.full(num_points, 1.0 / num_points))
    else:
        weights = _normalized_weights(rng.uniform(0.2, 1.8, size=num_points))

    oracle = rng.integers(0, num_labels, size=num_points)
    mask = _random_admissible(rng, num_points, num_labels)

    noisy = _pick_noisy_points(rng, weights, target_noise_rate, uniform_weights)
    for i in range(num_points):
        y = int(oracle[i])
        if i in noisy:
            mask[i, y] = False
            if not mask[i].any():
                others = [j for j in range(num_labels) if j != y]
                mask[i, rng.choice(others)] = True
        else:
            mask[i, y] = True
            if mask[i].all():
                # Keep the complement nonempty so violations stay attainable.
                candidates = [j for j in range(num_labels) if j != y]
                mask[i, rng.choice(candidates)] = False

    dist = FiniteDistribution(weights, oracle, ConstraintMap(mask),
                              features=_maybe_features(rng, num_points, feature_dim))
    achieved = oracle_noise_rate(dist)
    expected = math.fsum(weights[sorted(noisy)].tolist()) if noisy else 0.0
    if abs(achieved - expected) > 1e-15:
        raise ConstructionError("noise placement self-check failed")
    dist.info = {
        "target_noise_rate": target_noise_rate,
        "achieved_noise_rate": achieved,
        "warning": None if abs(achieved - target_noise_rate) <= 1.0 / num_points + 1e-12
        else f"nearest achievable noise rate is {achieved!r}",
    }
    return dist


def _pick_noisy_points(rng, weights: np.ndarray, target: float,
                       uniform_weights: bool) -> set[int]:
    n = weights.size
    if target == 0.0:
        return set()
    if uniform_weights:
        k = int(round(target * n))
        return set(int(i) for i in rng.choice(n, size=k, replace=False))
    # Greedy mass selection in random order, then one corrective addition.
    order = rng.permutation(n)
    chosen: set[int] = set()
    total = 0.0
    for i in order:
        if total + weights[i] <= target + 1e-15:
            chosen.add(int(i))
            total += weights[i]
    best_extra, best_gap = None, abs(total - target)
    for i in order:
        if int(i) in chosen:
            continue
        gap = abs(total + weights[i] - target)
        if gap < best_gap:
            best_extra, best_gap = int(i), gap
    if best_extra is not None:
        chosen.add(best_extra)
    return chosen


def _maybe_features(rng, num_points: int, feature_dim: int):
    if feature_dim <= 0:
        return None
    return rng.normal(size=(num_points, feature_dim))


def random_score_table(dist: FiniteDistribution, scale: float = 1.0,
                       seed: int = 0) -> ScoreTable:
    rng = np.random.default_rng(seed)
    return ScoreTable(rng.normal(scale=scale, size=(dist.num_points, dist.num_labels)))


def random_linear_scorer(num_labels: int, dim: int, scale: float = 1.0,
                         seed: int = 0, norm_budget: float | None = None) -> LinearScorer:
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=scale, size=(num_labels, dim))
    scorer = LinearScorer(w, norm_budget)
    return scorer.project_to_budget() if norm_budget is not None else scorer


def constraint_baseline_table(cmap: ConstraintMap, scale: float) -> ScoreTable:
    """The constraint-indicator baseline: score `scale` on admissible labels,
    0 elsewhere. Driving the scale up drives its violation to zero."""
    return ScoreTable(scale * cmap.mask.astype(float))


# ---------------------------------------------------------------------------
# Named proof constructions
# ---------------------------------------------------------------------------

def make_proof_construction(name: str, **params) -> ProofConstruction:
    builders = {
        "prop32_tightness": _build_tightness_pair,
        "lemma33_baseline": _build_baseline,
        "thm52_grid": _build_futility_grid,
    }
    if name not in builders:
        raise ConstructionError(f"unknown construction {name!r}; have {sorted(builders)}")
    return builders[name](**params)


def _single_point_dist(num_labels: int, admissible: tuple[int, ...]) -> FiniteDistribution:
    cmap = ConstraintMap.from_sets([admissible], num_labels)
    return FiniteDistribution([1.0], [0], cmap)


def _build_tightness_pair(a: float, b: float, eps1: float, eps2: float,
                          rho: float, num_labels: int = 3) -> ProofConstruction:
    """Two tabulated scorers over one instance making the regularized-risk
    upper bound tight.

    The risk minimizer puts (a, b) on the two admissible labels; the
    violation minimizer trades eps1 of gold mass for an eps2 reduction of
    inadmissible mass, so it wins the regularized objective iff
    eps1 < rho * eps2 and its excess risk eps1 approaches the bound
    rho * (V(f_0) - V(f_inf)) = rho * eps2 from below.
    """
    if num_labels < 3:
        raise ConstructionError("needs at least 3 labels for a nonempty complement")
    if not (0 < a < 1 and 0 < b < 1 and eps1 > 0 and eps2 > 0 and rho > 0):
        raise ConstructionError("parameters must be positive with a, b in (0,1)")
    if eps1 >= rho * eps2:
        raise ConstructionError(f"needs eps1 < rho*eps2, got {eps1} >= {rho * eps2}")
    out_mass = 1.0 - a - b
    if out_mass < eps2:
        raise ConstructionError("inadmissible mass 1-a-b must be at least eps2")
    if a - eps1 <= 0:
        raise ConstructionError("a - eps1 must stay positive")
    n_out = num_labels - 2
    p0 = np.array([a, b] + [out_mass / n_out] * n_out)
    p_inf = np.array([a - eps1, b + eps1 + eps2] + [(out_mass - eps2) / n_out] * n_out)
    if (p_inf <= 0).any():
        raise ConstructionError("violation-minimizer probabilities must stay positive")
    dist = _single_point_dist(num_labels, (0, 1))
    f0 = ScoreTable.from_probabilities(p0[None, :])
    f_inf = ScoreTable.from_probabilities(p_inf[None, :])

    def objective(p):
        return (1.0 - p[0]) + rho * p[2:].sum()

    if not objective(p_inf) < objective(p0):
        raise ConstructionError("self-check failed: f_inf is not strictly preferred")
    info = {
        "designed_inequality": "risk(f_rho) approaches risk(f_0) + rho*(V(f_0)-V(f_inf))",
        "rho": rho,
        "excess_risk": eps1,
        "bound_gap": rho * eps2 - eps1,
    }
    return ProofConstruction("prop32_tightness", dist, [f0, f_inf], info)


def _build_baseline(t: float, num_labels: int = 4, num_points: int = 8,
                    seed: int = 0) -> ProofConstruction:
    """A noise-free distribution plus the constraint-indicator baseline f_t."""
    if t <= 0:
        raise ConstructionError("baseline scale must be positive")
    dist = make_finite(num_labels, num_points, 0.0, seed)
    baseline = constraint_baseline_table(dist.constraint, t)
    probs = softmax_rows(baseline.table)
    violation = float((np.where(dist.constraint.mask, 0.0, probs).sum(axis=1)
                       * dist.weights).sum())
    info = {
        "designed_inequality": "violation(f_t) -> 0 as t -> inf",
        "baseline_scale": t,
        "baseline_violation": violation,
    }
    return ProofConstruction("lemma33_baseline", dist, [baseline], info)


def _build_futility_grid(noise_rate: float, min_violation: float,
                         num_labels: int = 4, num_points: int = 10,
                         grid_size: int = 12, seed: int = 0) -> ProofConstruction:
    """A noisy distribution and a scorer grid whose exact minimum violation
    is `min_violation`, for exercising the large-rho futility threshold."""
    if not 0 <= min_violation < 1:
        raise ConstructionError("min violation must lie in [0, 1)")
    if noise_rate < min_violation:
        raise ConstructionError(
            f"needs noise_rate >= min_violation, got {noise_rate} < {min_violation}"
        )
    if grid_size < 2:
        raise ConstructionError("grid needs at least two scorers")
    dist = make_finite(num_labels, num_points, noise_rate, seed)
    achieved = dist.info["achieved_noise_rate"]
    rng = np.random.default_rng(seed + 1)
    mask = dist.constraint.mask
    scorers = [_table_with_out_mass(mask, np.full(num_points, max(min_violation, 1e-12)), rng)]
    for _ in range(grid_size - 1):
        out = rng.uniform(min_violation + 0.05, min(0.95, min_violation + 0.55),
                          size=num_points)
        scorers.append(_table_with_out_mass(mask, out, rng))
    violations = [
        float((np.where(mask, 0.0, softmax_rows(s.table)).sum(axis=1) * dist.weights).sum())
        for s in scorers
    ]
    v_min = min(violations)
    if abs(v_min - min_violation) > 1e-9 or int(np.argmin(violations)) != 0:
        raise ConstructionError("self-check failed: grid minimum violation is off target")
    gap = achieved - v_min
    info = {
        "designed_inequality": "rho >= 1/(noise_rate - min_violation) blocks any helpful mu",
        "noise_rate": achieved,
        "min_violation": v_min,
        "futility_rho": math.inf if gap <= 0 else 1.0 / gap,
    }
    return ProofConstruction("thm52_grid", dist, scorers, info)


def _table_with_out_mass(mask: np.ndarray, out_mass: np.ndarray, rng) -> ScoreTable:
    """Random probability table with an exact inadmissible mass per point."""
    n, c = mask.shape
    probs = np.empty((n, c))
    for i in range(n):
        adm = np.flatnonzero(mask[i])
        out = np.flatnonzero(~mask[i])
        probs[i, adm] = _random_simplex(rng, adm.size) * (1.0 - out_mass[i])
        probs[i, out] = _random_simplex(rng, out.size) * out_mass[i]
    return ScoreTable.from_probabilities(probs)


def _random_simplex(rng, k: int) -> np.ndarray:
    raw = rng.uniform(0.25, 1.0, size=k)
    return raw / raw.sum()


# ---------------------------------------------------------------------------
# Feature-based generators
# ---------------------------------------------------------------------------

def make_gaussian_features(num_labels: int, dim: int, separation: float,
                           mean, sigma2: float, m: int, seed: int,
                           sphere_radius: float = 1.0):
    """Instances rejection-sampled inside a sphere from a moment-matched
    Gaussian, labeled by a planted linear scorer, with the constraint that
    removes the last label everywhere.

    Returns (distribution, planted scorer). Raises ConstructionError if the
    sampler's acceptance rate falls below 1%.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (dim,):
        raise ConstructionError(f"mean must have shape ({dim},)")
    if sigma2 < 0:
        raise ConstructionError("sigma2 must be nonnegative")
    if np.linalg.norm(mean) > sphere_radius:
        raise ConstructionError("mean lies outside the sphere")
    rng = np.random.default_rng(seed)
    points = np.empty((m, dim))
    accepted, drawn = 0, 0
    while accepted < m:
        batch = max(m - accepted, 256)
        cand = mean + math.sqrt(sigma2) * rng.standard_normal((batch, dim))
        keep = cand[np.linalg.norm(cand, axis=1) <= sphere_radius]
        drawn += batch
        take = min(keep.shape[0], m - accepted)
        points[accepted:accepted + take] = keep[:take]
        accepted += take
        if drawn >= 200 * m and accepted < max(1, drawn // 100):
            raise ConstructionError(
                f"sphere sampler acceptance rate below 1% (mean norm "
                f"{np.linalg.norm(mean):.3f}, sigma2 {sigma2})"
            )
    planted = random_linear_scorer(num_labels, dim, seed=seed + 1)
    w = planted.weights / np.maximum(np.linalg.norm(planted.weights, axis=1, keepdims=True), 1e-12)
    planted = LinearScorer(separation * w)
    scores = planted.matrix(points)
    oracle = np.argmax(scores, axis=1)
    cmap = ConstraintMap(np.concatenate(
        [np.ones((m, num_labels - 1), dtype=bool), np.zeros((m, 1), dtype=bool)], axis=1
    ))
    weights = _normalized_weights(np.full(m, 1.0 / m))
    dist = FiniteDistribution(weights, oracle, cmap, features=points)
    dist.info = {
        "acceptance_rate": accepted / drawn if drawn else 1.0,
        "sample_mean": points.mean(axis=0),
        "target_mean": mean,
        "sigma2": sigma2,
    }
    return dist, planted


def make_two_point_line(num_labels: int, mean: float, seed: int = 0) -> FiniteDistribution:
    """The +/-1 distribution on the line: mean alpha, variance 1 - alpha^2,
    support exactly on the unit sphere; the constraint removes the last label.

    Its stats satisfy sigma^2 + alpha^2 = 1 exactly, which pins the
    constrained-complexity bound formula to a closed-form value.
    """
    if not -1.0 < mean < 1.0:
        raise ConstructionError("mean must lie in (-1, 1)")
    w_plus = (1.0 + mean) / 2.0
    weights = _normalized_weights(np.array([w_plus, 1.0 - w_plus]))
    features = np.array([[1.0], [-1.0]])
    rng = np.random.default_rng(seed)
    oracle = rng.integers(0, num_labels - 1, size=2)
    cmap = ConstraintMap(np.concatenate(
        [np.ones((2, num_labels - 1), dtype=bool), np.zeros((2, 1), dtype=bool)], axis=1
    ))
    dist = FiniteDistribution(weights, oracle, cmap, features=features)
    dist.info = {"alpha": mean, "sigma2": 1.0 - mean * mean}
    return dist
