import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constraintlab.core import ConstraintMap, FiniteDistribution, Instance
from constraintlab.scoring import (
    CcmModel,
    InvalidScoreError,
    LinearScorer,
    ScoreTable,
    argmax_label,
    ccm_predict,
    softmax_predict,
)
from constraintlab.synthgen import make_finite, random_score_table

X0 = Instance(0)


def table(*rows):
    return ScoreTable(np.array(rows, dtype=float))


def mpmath_softmax(scores):
    """High-precision reference softmax (50 significant digits)."""
    with mpmath.workdps(50):
        exps = [mpmath.e ** mpmath.mpf(float(s)) for s in scores]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


class TestSoftmax:
    def test_equal_scores_give_uniform(self):
        probs = softmax_predict(table([3.0, 3.0, 3.0, 3.0]), X0)
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_two_class_log_odds(self):
        probs = softmax_predict(table([0.0, math.log(3.0)]), X0)
        assert probs == pytest.approx([0.25, 0.75], abs=1e-12)

    def test_matches_high_precision_reference(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            scores = rng.normal(scale=3.0, size=4)
            got = softmax_predict(table(scores), X0)
            assert np.abs(got - mpmath_softmax(scores)).max() < 1e-12

    def test_overflow_safe(self):
        probs = softmax_predict(table([1000.0, 999.0]), X0)
        assert math.isfinite(probs.sum()) and abs(probs.sum() - 1.0) < 1e-12

    def test_rejects_non_finite_scores(self):
        with pytest.raises(InvalidScoreError):
            softmax_predict(LinearScorer(np.array([[1.0], [1.0]])),
                            Instance(0, (math.inf,)))

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            probs = softmax_predict(table(rng.normal(size=6) * 10), X0)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert (probs > 0).all()


@settings(max_examples=80, deadline=None)
@given(st.floats(min_value=-300, max_value=300, allow_nan=False),
       st.integers(min_value=0, max_value=10**6))
def test_shift_invariance(shift, seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(scale=2.0, size=5)
    base = softmax_predict(table(scores), X0)
    shifted = softmax_predict(table(scores + shift), X0)
    assert np.abs(base - shifted).max() < 1e-12


class TestCcmPredict:
    def setup_method(self):
        self.cmap = ConstraintMap.from_sets([{0, 1}], num_labels=3)

    def test_mu_zero_is_plain_softmax(self):
        t = table([0.3, -1.2, 2.0])
        model = CcmModel(t, 0.0, self.cmap)
        assert np.allclose(ccm_predict(model, X0), softmax_predict(t, X0), atol=0)

    def test_strict_single_admissible_is_one_hot(self):
        cmap = ConstraintMap.from_sets([{0}], num_labels=3)
        probs = ccm_predict(CcmModel(table([0.0, 5.0, 9.0]), math.inf, cmap), X0)
        assert probs.tolist() == [1.0, 0.0, 0.0]

    def test_log_two_penalty_frozen_value(self):
        # equal scores, third label penalized by log 2: (e, e, e/2)/Z.
        model = CcmModel(table([1.0, 1.0, 1.0]), math.log(2.0), self.cmap)
        assert ccm_predict(model, X0) == pytest.approx([0.4, 0.4, 0.2], abs=1e-15)

    def test_strict_inadmissible_mass_is_exactly_zero(self):
        model = CcmModel(table([1.0, -2.0, 7.0]), math.inf, self.cmap)
        probs = ccm_predict(model, X0)
        assert probs[2] == 0.0
        assert abs(probs.sum() - 1.0) < 1e-12

    def test_admissible_mass_nondecreasing_in_mu(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(scale=2.0, size=3)
        masses = []
        for mu in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 40.0]:
            probs = ccm_predict(CcmModel(table(scores), mu, self.cmap), X0)
            masses.append(probs[:2].sum())
        assert all(b >= a - 1e-12 for a, b in zip(masses, masses[1:]))

    def test_mu_forty_is_numerically_strict(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(scale=2.0, size=3)
        probs = ccm_predict(CcmModel(table(scores), 40.0, self.cmap), X0)
        strict = ccm_predict(CcmModel(table(scores), math.inf, self.cmap), X0)
        assert probs[2] < 1e-15
        assert np.abs(probs - strict).max() < 1e-15

    def test_mu_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            CcmModel(table([0.0, 0.0, 0.0]), -1.0, self.cmap)


class TestArgmax:
    def test_unique_max(self):
        assert argmax_label(table([5.0, 1.0, 1.0]), X0) == 0

    def test_tie_breaks_to_lowest_index(self):
        assert argmax_label(table([2.0, 2.0, 0.0]), X0) == 0

    def test_strict_argmax_restricted_to_admissible(self):
        cmap = ConstraintMap.from_sets([{1, 2}], num_labels=3)
        model = CcmModel(table([9.0, 3.0, 4.0]), math.inf, cmap)
        assert argmax_label(model, X0) == 2

    def test_strict_argmax_always_admissible(self):
        for seed in range(10):
            dist = make_finite(5, 8, 0.3, seed=seed)
            t = random_score_table(dist, 2.0, seed=seed + 1)
            model = CcmModel(t, math.inf, dist.constraint)
            for inst in dist.instances:
                y = argmax_label(model, inst)
                assert y in dist.constraint.admissible_set(inst.iid)


class TestScoreTable:
    def test_round_trip(self):
        rng = np.random.default_rng(1)
        t = ScoreTable(rng.normal(scale=100.0, size=(4, 3)))
        back = ScoreTable.from_text(t.to_text())
        assert (back.table == t.table).all()

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidScoreError):
            ScoreTable(np.array([[1.0, math.nan]]))

    def test_unknown_instance(self):
        with pytest.raises(KeyError):
            table([1.0, 2.0]).scores(Instance(3))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-700, max_value=700, allow_nan=False),
                min_size=2, max_size=8))
def test_score_table_serialization_round_trips(row):
    t = ScoreTable(np.array([row]))
    assert (ScoreTable.from_text(t.to_text()).table == t.table).all()


class TestLinearScorer:
    def test_scores_are_dot_products(self):
        w = np.array([[1.0, 0.0], [0.0, 2.0]])
        scorer = LinearScorer(w)
        assert scorer.scores(Instance(0, (3.0, -1.0))).tolist() == [3.0, -2.0]

    def test_projection_respects_budget(self):
        scorer = LinearScorer(np.full((3, 2), 5.0), norm_budget=1.0)
        projected = scorer.project_to_budget()
        assert projected.squared_norm() <= 1.0 + 1e-9

    def test_projection_noop_inside_budget(self):
        scorer = LinearScorer(np.full((2, 2), 0.1), norm_budget=1.0)
        assert scorer.project_to_budget() is scorer
