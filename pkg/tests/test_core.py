import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from constraintlab.core import (
    ConstraintMap,
    Dataset,
    FiniteDistribution,
    Instance,
    LabeledSample,
    LabelSpace,
    oracle_noise_rate,
    sample_dataset,
)
from constraintlab.synthgen import make_finite


def small_dist(weights, oracle, sets, num_labels, features=None):
    cmap = ConstraintMap.from_sets(sets, num_labels)
    return FiniteDistribution(weights, oracle, cmap, features=features)


class TestLabelSpace:
    def test_needs_two_labels(self):
        with pytest.raises(ValueError):
            LabelSpace(1)
        assert list(LabelSpace(3).labels()) == [0, 1, 2]


class TestConstraintMap:
    def test_rejects_empty_admissible_set(self):
        with pytest.raises(ValueError, match="empty"):
            ConstraintMap.from_sets([{0}, set()], num_labels=3)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError):
            ConstraintMap.from_sets([{0, 3}], num_labels=3)

    def test_unknown_instance_is_lookup_error(self):
        cmap = ConstraintMap.from_sets([{0, 1}], num_labels=3)
        with pytest.raises(KeyError):
            cmap.admissible_mask(5)

    def test_bitmask_round_trip(self):
        sets = [{0, 2}, {1}, {0, 1, 2, 3}]
        cmap = ConstraintMap.from_sets(sets, num_labels=4)
        bits = [cmap.bitmask(i) for i in range(3)]
        assert bits == [0b0101, 0b0010, 0b1111]
        again = ConstraintMap.from_bitmasks(bits, num_labels=4)
        assert (again.mask == cmap.mask).all()

    def test_from_function_evaluates_once(self):
        instances = [Instance(0, (1.0,)), Instance(1, (-1.0,))]
        cmap = ConstraintMap.from_function(
            instances, 2, lambda inst: {0} if inst.features[0] > 0 else {1}
        )
        assert cmap.admissible_set(0) == {0}
        assert cmap.admissible_set(1) == {1}

    def test_violation_indicator_examples(self):
        cmap = ConstraintMap.from_sets([{0, 1, 2}, {0}, {0, 1}], num_labels=3)
        from constraintlab.core import violation_indicator

        assert violation_indicator(cmap, 0, 1) == 0  # full set never violated
        assert violation_indicator(cmap, 1, 2) == 1
        assert violation_indicator(cmap, 2, 1) == 0

    def test_violation_indicator_matches_membership_exhaustively(self):
        from constraintlab.core import violation_indicator

        rng = np.random.default_rng(0)
        for c in range(2, 9):
            mask = np.zeros((6, c), dtype=bool)
            for i in range(6):
                k = int(rng.integers(1, c + 1))
                mask[i, rng.choice(c, size=k, replace=False)] = True
            cmap = ConstraintMap(mask)
            for i in range(6):
                admissible = cmap.admissible_set(i)
                for y in range(c):
                    assert violation_indicator(cmap, i, y) == (0 if y in admissible else 1)


class TestNoiseRate:
    def test_noise_free(self):
        d = small_dist([0.5, 0.5], [0, 1], [{0}, {1, 2}], 3)
        assert oracle_noise_rate(d) == 0.0

    def test_half_excluded(self):
        d = small_dist([0.5, 0.5], [0, 1], [{1}, {1}], 3)
        assert oracle_noise_rate(d) == 0.5

    def test_weighted_sum(self):
        # Exact weighted count: only the 0.2-mass point is excluded.
        d = small_dist([0.2, 0.8], [0, 1], [{1}, {1, 2}], 3)
        assert oracle_noise_rate(d) == pytest.approx(0.2, abs=1e-15)

    def test_zero_iff_no_indicator_fires(self):
        from constraintlab.core import violation_indicator

        for seed in range(6):
            d = make_finite(4, 12, 0.25 if seed % 2 else 0.0, seed=seed)
            fired = any(
                violation_indicator(d.constraint, i, int(d.oracle[i]))
                for i in range(d.num_points)
            )
            assert (oracle_noise_rate(d) == 0.0) == (not fired)


class TestFiniteDistribution:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            small_dist([0.5, 0.4], [0, 1], [{0}, {1}], 2)

    def test_weights_must_be_nonnegative(self):
        with pytest.raises(ValueError):
            small_dist([1.5, -0.5], [0, 1], [{0}, {1}], 2)

    def test_oracle_labels_validated(self):
        with pytest.raises(ValueError):
            small_dist([1.0], [5], [{0}], 3)

    def test_round_trip_bit_exact(self):
        for seed in range(4):
            d = make_finite(5, 9, 0.2, seed=seed, uniform_weights=False, feature_dim=3)
            text = d.to_text()
            back = FiniteDistribution.from_text(text)
            assert back.to_text() == text
            assert (back.weights == d.weights).all()
            assert (back.features == d.features).all()
            assert (back.oracle == d.oracle).all()
            assert (back.constraint.mask == d.constraint.mask).all()


class TestSampling:
    def test_empty_draw(self):
        d = make_finite(3, 5, 0.0, seed=1)
        ds = sample_dataset(d, 0, 0, seed=0)
        assert ds.m_labeled == 0 and ds.m_unlabeled == 0

    def test_degenerate_support(self):
        d = small_dist([1.0], [2], [{2}], 3)
        ds = sample_dataset(d, 5, 0, seed=0)
        assert ds.m_labeled == 5
        assert all(s.instance.iid == 0 and s.label == 2 for s in ds.labeled)

    def test_reproducible_byte_for_byte(self):
        d = make_finite(4, 7, 0.25, seed=2, feature_dim=2)
        a = sample_dataset(d, 20, 30, seed=77)
        b = sample_dataset(d, 20, 30, seed=77)
        assert a.to_text() == b.to_text()
        c = sample_dataset(d, 20, 30, seed=78)
        assert c.to_text() != a.to_text()

    def test_law_of_large_numbers(self):
        d = small_dist([0.5, 0.5], [0, 1], [{0}, {1}], 2)
        ds = sample_dataset(d, 0, 100_000, seed=5)
        freq = sum(1 for inst in ds.unlabeled if inst.iid == 0) / ds.m_unlabeled
        assert abs(freq - 0.5) < 0.01

    def test_dataset_round_trip(self):
        d = make_finite(3, 6, 0.0, seed=3, feature_dim=2)
        ds = sample_dataset(d, 4, 3, seed=1)
        back = Dataset.from_text(ds.to_text())
        assert back.to_text() == ds.to_text()
        assert back.labeled[0].label == ds.labeled[0].label


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-1e12, max_value=1e12,
                          allow_nan=False, allow_infinity=False),
                min_size=2, max_size=6))
def test_feature_serialization_round_trips_any_float(values):
    features = np.array([values, values])
    cmap = ConstraintMap.from_sets([{0}, {1}], num_labels=2)
    d = FiniteDistribution([0.5, 0.5], [0, 1], cmap, features=features)
    back = FiniteDistribution.from_text(d.to_text())
    assert (back.features == features).all()
