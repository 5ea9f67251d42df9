import math

import numpy as np
import pytest
from scipy.special import lambertw as scipy_lambertw

from constraintlab.analysis import (
    BenefitSign,
    PreconditionError,
    ccm_probability_derivative,
    combo_rho_threshold,
    default_mu_grid,
    l1_delta,
    lambert_w,
    margin_delta,
    marginal_benefit_sign,
    mu_improvement_scan,
    post_training_futility_rho,
    risk_delta,
    select_mu,
    zero_one_violation,
)
from constraintlab.core import ConstraintMap, FiniteDistribution, oracle_noise_rate
from constraintlab.experiments import tune_table_to_violation
from constraintlab.losses import LossKind, population_risk
from constraintlab.scoring import CcmModel, ScoreTable, softmax_predict
from constraintlab.synthgen import (
    constraint_baseline_table,
    make_finite,
    make_proof_construction,
    random_score_table,
)


class TestLambertW:
    def test_anchor_values(self):
        assert lambert_w(0.0) == 0.0
        assert abs(lambert_w(math.e) - 1.0) <= 1e-15
        assert lambert_w(-math.exp(-1.0)) == -1.0

    def test_residual_on_dense_grid(self):
        grid = np.concatenate([
            np.linspace(-math.exp(-1.0), 2.0, 3000),
            np.geomspace(2.0, 1e3, 1000),
            -math.exp(-1.0) + np.geomspace(1e-13, 1e-2, 200),
        ])
        for t in grid:
            w = lambert_w(float(t))
            assert abs(w * math.exp(w) - t) <= 1e-12 * max(1.0, abs(t))

    def test_against_scipy(self):
        rng = np.random.default_rng(2)
        for t in rng.uniform(-math.exp(-1.0), 50.0, size=500):
            ours = lambert_w(float(t))
            reference = float(scipy_lambertw(float(t), 0).real)
            assert abs(ours - reference) <= 1e-10 * max(1.0, abs(reference))

    def test_domain_error_below_branch(self):
        with pytest.raises(ValueError):
            lambert_w(-0.5)
        with pytest.raises(ValueError):
            lambert_w(float("nan"))


class TestSelectMu:
    def test_eta_one_gives_zero(self):
        assert select_mu(0.3, 0.3) == 0.0

    def test_noise_free_gives_infinity(self):
        assert select_mu(0.4, 0.0) == math.inf

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            select_mu(0.1, 0.2)

    def test_eta_two_matches_bisection_oracle(self):
        # Root of (1 - exp(-mu)) * 2 - mu, found independently by bisection.
        def g(mu):
            return (1.0 - math.exp(-mu)) * 2.0 - mu

        lo, hi = 1e-9, 4.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) > 0:
                lo = mid
            else:
                hi = mid
        root = 0.5 * (lo + hi)
        assert select_mu(2.0, 1.0) == pytest.approx(root, abs=1e-10)
        # And the selected mu actually zeroes the bound.
        mu = select_mu(2.0, 1.0)
        assert abs((1.0 - math.exp(-mu)) * 2.0 - mu) < 1e-12

    def test_large_eta_approaches_eta(self):
        assert select_mu(50.0, 1.0) == pytest.approx(50.0, abs=1e-8)


def noisy_instance(seed, c=4, n=20, noise=0.25, scale=1.5):
    dist = make_finite(c, n, noise, seed=seed)
    return dist, random_score_table(dist, scale, seed=seed + 1)


class TestRiskDelta:
    def test_mu_zero_all_deltas_vanish(self):
        dist, t = noisy_instance(1)
        rd = risk_delta(dist, t, dist.constraint, 0.0)
        assert rd.delta_ce == pytest.approx(0.0, abs=1e-12)
        assert rd.delta_l1 == pytest.approx(0.0, abs=1e-12)
        assert rd.delta_margin == pytest.approx(0.0, abs=1e-12)

    def test_noise_free_strict_delta_equals_ce_violation(self):
        for seed in range(8):
            dist, t = noisy_instance(seed, noise=0.0)
            rd = risk_delta(dist, t, dist.constraint, math.inf)
            v_ce = population_risk(dist, t, LossKind.ELL1).violation_ce
            assert rd.delta_ce == pytest.approx(v_ce, abs=1e-9)

    def test_exact_delta_dominates_bound_on_grid(self):
        for seed in range(5):
            dist, t = noisy_instance(seed + 20)
            for mu in np.geomspace(0.1, 5.0, 16):
                rd = risk_delta(dist, t, dist.constraint, float(mu))
                assert rd.delta_ce >= rd.lower_bound_ce - 1e-10

    def test_eta_field(self):
        dist, t = noisy_instance(3)
        rd = risk_delta(dist, t, dist.constraint, 1.0)
        v = population_risk(dist, t, LossKind.ELL1).violation_l1
        assert rd.eta == pytest.approx(v / oracle_noise_rate(dist), abs=1e-12)
        noise_free, t2 = noisy_instance(4, noise=0.0)
        assert risk_delta(noise_free, t2, noise_free.constraint, 1.0).eta == math.inf

    def test_violation_drop_identity(self):
        # V_ce(f) - V_ce(f^mu) == delta_ce + mu * V_ora for finite mu.
        for seed in range(6):
            dist, t = noisy_instance(seed + 40)
            v_ora = oracle_noise_rate(dist)
            v_ce = population_risk(dist, t, LossKind.ELL1).violation_ce
            for mu in (0.25, 1.0, 3.0):
                rd = risk_delta(dist, t, dist.constraint, mu)
                ccm = CcmModel(t, mu, dist.constraint)
                v_ce_mu = population_risk(dist, ccm, LossKind.ELL1).violation_ce
                assert v_ce - v_ce_mu == pytest.approx(rd.delta_ce + mu * v_ora,
                                                       abs=1e-9)

    def test_delta_derivative_nonincreasing(self):
        dist, t = noisy_instance(9)
        grid = np.linspace(0.0, 6.0, 25)
        deltas = [risk_delta(dist, t, dist.constraint, m).delta_ce for m in grid]
        slopes = np.diff(deltas) / np.diff(grid)
        assert all(b <= a + 1e-9 for a, b in zip(slopes, slopes[1:]))

    def test_csv_row(self):
        dist, t = noisy_instance(2)
        rd = risk_delta(dist, t, dist.constraint, 1.0)
        row = rd.to_csv_row("set-a")
        assert row.startswith("set-a,") and row.count(",") == rd.CSV_HEADER.count(",")


class TestBenefitSign:
    def test_improves_when_noise_free_and_violating(self):
        dist, t = noisy_instance(5, noise=0.0)
        assert marginal_benefit_sign(dist, t, dist.constraint) == BenefitSign.IMPROVES

    def test_degrades_when_strictly_compliant_and_noisy(self):
        dist, _ = noisy_instance(6)
        compliant = constraint_baseline_table(dist.constraint, 30.0)
        assert marginal_benefit_sign(dist, compliant, dist.constraint) == BenefitSign.DEGRADES

    def test_neutral_on_the_knife_edge(self):
        dist, t = noisy_instance(7)
        tuned = tune_table_to_violation(dist, t, oracle_noise_rate(dist))
        assert marginal_benefit_sign(dist, tuned, dist.constraint) == BenefitSign.NEUTRAL


class TestComboThreshold:
    def test_mu_zero_degenerates_to_zero(self):
        dist, t = noisy_instance(8)
        assert combo_rho_threshold(dist, dist.constraint, t, 0.0) == 0.0

    def test_noise_free_strict_threshold_is_infinite(self):
        dist, t = noisy_instance(9, noise=0.0)
        assert combo_rho_threshold(dist, dist.constraint, t, math.inf) == math.inf

    def test_matches_recombination_oracle(self):
        # Threshold recomputed from the three population quantities directly.
        dist, t = noisy_instance(10, noise=0.2)
        v = population_risk(dist, t, LossKind.ELL1).violation_l1
        if v <= oracle_noise_rate(dist):
            pytest.skip("instance does not out-violate the oracle")
        mu = 0.5 * select_mu(v, oracle_noise_rate(dist))
        got = combo_rho_threshold(dist, dist.constraint, t, mu)
        v_ce = population_risk(dist, t, LossKind.ELL1).violation_ce
        v_ce_mu = population_risk(dist, CcmModel(t, mu, dist.constraint),
                                  LossKind.ELL1).violation_ce
        expected = (v_ce - mu * oracle_noise_rate(dist)) / v_ce_mu - 1.0
        assert got == pytest.approx(expected, abs=1e-12)

    def test_precondition_error_carries_delta(self):
        dist, _ = noisy_instance(11)
        compliant = constraint_baseline_table(dist.constraint, 30.0)
        with pytest.raises(PreconditionError) as err:
            combo_rho_threshold(dist, dist.constraint, compliant, 1.0)
        assert err.value.delta is not None and err.value.delta <= 0


class TestFutilityThreshold:
    def test_direct_arithmetic(self):
        built = make_proof_construction("thm52_grid", noise_rate=0.3,
                                        min_violation=0.1, num_points=10, seed=0)
        got = post_training_futility_rho(built.dist, built.dist.constraint,
                                         built.scorers)
        assert got == pytest.approx(5.0, abs=1e-9)

    def test_equal_rates_give_infinity(self):
        built = make_proof_construction("thm52_grid", noise_rate=0.3,
                                        min_violation=0.3, num_points=10, seed=1)
        got = post_training_futility_rho(built.dist, built.dist.constraint,
                                         built.scorers)
        assert got == math.inf

    def test_hypothesis_not_met(self):
        dist, _ = noisy_instance(12, noise=0.0)  # V_ora = 0
        grid = [random_score_table(dist, 1.0, seed=s) for s in range(3)]
        with pytest.raises(PreconditionError):
            post_training_futility_rho(dist, dist.constraint, grid)

    def test_empty_grid(self):
        dist, _ = noisy_instance(13)
        with pytest.raises(ValueError):
            post_training_futility_rho(dist, dist.constraint, [])


class TestMarginAndL1Deltas:
    def test_mu_zero(self):
        dist, t = noisy_instance(14)
        assert margin_delta(dist, t, dist.constraint, 0.0) == pytest.approx(0.0, abs=1e-12)
        assert l1_delta(dist, t, dist.constraint, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_strict_margin_identity_noise_free(self):
        # Independent oracle: expected positive part of the score gap between
        # the best inadmissible and best admissible label.
        for seed in range(6):
            dist, t = noisy_instance(seed + 60, noise=0.0)
            mask = dist.constraint.mask
            gaps = []
            for i in range(dist.num_points):
                row = t.table[i]
                inside = row[mask[i]].max()
                outside = row[~mask[i]].max() if (~mask[i]).any() else -math.inf
                gaps.append(max(outside - inside, 0.0))
            expected = float(np.dot(dist.weights, gaps))
            got = margin_delta(dist, t, dist.constraint, math.inf)
            assert got == pytest.approx(expected, abs=1e-9)

    def test_margin_delta_zero_when_argmax_admissible(self):
        dist = make_finite(4, 6, 0.0, seed=99)
        rows = np.zeros((6, 4))
        for i in range(6):
            admissible = list(dist.constraint.admissible_set(i))
            rows[i, admissible[0]] = 5.0  # argmax already admissible
        t = ScoreTable(rows)
        assert margin_delta(dist, t, dist.constraint, math.inf) == pytest.approx(
            0.0, abs=1e-12)

    def test_l1_strict_bound_noise_free(self):
        for seed in range(6):
            dist, t = noisy_instance(seed + 80, noise=0.0)
            rd = risk_delta(dist, t, dist.constraint, math.inf)
            assert rd.delta_l1 >= rd.lower_bound_l1 - 1e-10

    def test_probability_derivative_matches_central_difference(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            dist, t = noisy_instance(seed + 100, n=10)
            inst = dist.instance(int(rng.integers(dist.num_points)))
            label = int(rng.integers(dist.num_labels))
            mu = float(rng.uniform(0.05, 4.0))
            exact = ccm_probability_derivative(t, dist.constraint, inst, mu, label)
            h = 1e-5
            admissible = dist.constraint.admissible_mask(inst.iid)

            def prob_at(m):
                model = CcmModel(t, m, dist.constraint)
                return softmax_predict(ScoreTable((t.table[inst.iid]
                                                   - m * (~admissible))[None]),
                                       type(inst)(0, inst.features))[label]

            fd = (prob_at(mu + h) - prob_at(mu - h)) / (2 * h)
            assert abs(exact - fd) < 1e-6


class TestScans:
    def test_zero_one_violation(self):
        cmap = ConstraintMap.from_sets([{0}, {1}], num_labels=2)
        dist = FiniteDistribution([0.6, 0.4], [0, 1], cmap)
        t = ScoreTable(np.array([[0.0, 5.0], [0.0, 5.0]]))  # argmax label 1 everywhere
        assert zero_one_violation(dist, t, cmap) == pytest.approx(0.6, abs=1e-15)

    def test_scan_consistency(self):
        dist, t = noisy_instance(15)
        scan = mu_improvement_scan(dist, t, dist.constraint)
        assert scan.grid.shape == default_mu_grid().shape
        direct = risk_delta(dist, t, dist.constraint, float(scan.grid[10])).delta_ce
        assert scan.deltas[10] == pytest.approx(direct, abs=1e-12)
        v = population_risk(dist, t, LossKind.ELL1).violation_l1
        assert scan.derivative_at_zero == pytest.approx(
            v - oracle_noise_rate(dist), abs=1e-12)
