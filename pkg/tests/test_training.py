import math

import numpy as np
import pytest

from constraintlab.core import (
    ConstraintMap,
    Dataset,
    FiniteDistribution,
    Instance,
    LabeledSample,
    sample_dataset,
)
from constraintlab.losses import LossKind, population_risk
from constraintlab.scoring import LinearScorer, ScoreTable
from constraintlab.synthgen import (
    constraint_baseline_table,
    make_finite,
    make_gaussian_features,
    make_proof_construction,
    random_score_table,
)
from constraintlab.training import (
    Objective,
    OptimizationError,
    TrainConfig,
    TrainResult,
    deviation_bound_check,
    evaluate_objective,
    evaluate_regularized_objective,
    train,
)


class TestTrainBasics:
    def test_separable_population_reaches_low_risk(self):
        dist, _ = make_gaussian_features(2, 3, separation=12.0,
                                         mean=np.zeros(3), sigma2=0.15,
                                         m=60, seed=4)
        result = train(TrainConfig(Objective.ERM, max_iters=600,
                                   learning_rate=4.0, grad_tol=1e-8), dist)
        objs = [o for _, o, _ in result.trace]
        assert all(b <= a + 1e-10 for a, b in zip(objs, objs[1:]))
        assert population_risk(dist, result.scorer, LossKind.ELL1).risk < 0.05

    def test_table_training_when_no_features(self):
        dist = make_finite(3, 8, 0.0, seed=1)
        result = train(TrainConfig(Objective.ERM, max_iters=200), dist)
        assert isinstance(result.scorer, ScoreTable)
        assert result.final_objective < math.log(3.0)

    def test_trace_csv_export(self):
        dist = make_finite(3, 6, 0.0, seed=2)
        result = train(TrainConfig(Objective.ERM, max_iters=20), dist)
        csv = result.to_csv_text()
        assert csv.splitlines()[0] == "iteration,objective,grad_norm"
        assert len(csv.splitlines()) == len(result.trace) + 1

    def test_nan_objective_raises_with_trace(self):
        bad = Instance(0, (math.inf, 1.0))
        ds = Dataset((LabeledSample(bad, 0),), ())
        cmap = ConstraintMap.from_sets([{0}], num_labels=2)
        with pytest.raises(OptimizationError) as err:
            train(TrainConfig(Objective.ERM, max_iters=5), ds, cmap,
                  init=LinearScorer(np.ones((2, 2))))
        assert err.value.trace

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(Objective.ERM, learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(Objective.ERM, rho=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(Objective.ON_TRAINING_CCM, kind=LossKind.ELL1)
        with pytest.raises(ValueError):
            TrainConfig(Objective.ERM, kind=LossKind.HINGE_MARGIN)

    def test_empirical_training_decreases_objective(self):
        dist = make_finite(3, 10, 0.0, seed=3, feature_dim=3)
        ds = sample_dataset(dist, 40, 60, seed=0)
        cfg = TrainConfig(Objective.ERVM_SURROGATE, rho=1.0, max_iters=120)
        result = train(cfg, ds, dist.constraint)
        assert result.trace[-1][1] < result.trace[0][1]
        assert isinstance(result.scorer, LinearScorer)

    def test_empirical_needs_constraint_map(self):
        dist = make_finite(3, 10, 0.0, seed=3, feature_dim=3)
        ds = sample_dataset(dist, 10, 0, seed=0)
        with pytest.raises(ValueError):
            train(TrainConfig(Objective.ERM, max_iters=5), ds)

    def test_tabulated_empirical_training(self):
        dist = make_finite(3, 10, 0.0, seed=5)  # no features: table params
        ds = sample_dataset(dist, 50, 50, seed=1)
        cfg = TrainConfig(Objective.ERVM_SURROGATE, rho=0.5, max_iters=80)
        result = train(cfg, ds, dist.constraint)
        assert isinstance(result.scorer, ScoreTable)
        assert result.scorer.num_points == dist.num_points


class TestObjectives:
    def test_regularized_objective_recombines(self):
        dist = make_finite(4, 12, 0.25, seed=7)
        t = random_score_table(dist, 1.5, seed=8)
        for kind in (LossKind.ELL1, LossKind.CROSS_ENTROPY):
            report = population_risk(dist, t, kind)
            violation = (report.violation_ce if kind == LossKind.CROSS_ENTROPY
                         else report.violation_l1)
            got = evaluate_regularized_objective(t, dist, None, 2.0, kind)
            assert got == pytest.approx(report.risk + 2.0 * violation, abs=1e-12)

    def test_rho_zero_is_plain_risk(self):
        dist = make_finite(3, 9, 0.0, seed=9)
        t = random_score_table(dist, 1.0, seed=10)
        assert evaluate_regularized_objective(t, dist, None, 0.0, LossKind.ELL1) == \
            pytest.approx(population_risk(dist, t, LossKind.ELL1).risk, abs=1e-15)

    def test_evaluate_objective_matches_training_view(self):
        dist = make_finite(3, 8, 0.0, seed=11)
        t = random_score_table(dist, 1.0, seed=12)
        cfg = TrainConfig(Objective.ERVM_SURROGATE, rho=1.5, kind=LossKind.ELL1)
        got = evaluate_objective(cfg, dist, None, t)
        assert got == pytest.approx(
            evaluate_regularized_objective(t, dist, None, 1.5, LossKind.ELL1),
            abs=1e-12)

    def test_on_training_objective_is_strict_risk(self):
        dist = make_finite(3, 8, 0.0, seed=13)
        t = random_score_table(dist, 1.0, seed=14)
        from constraintlab.scoring import CcmModel

        cfg = TrainConfig(Objective.ON_TRAINING_CCM)
        strict_risk = population_risk(
            dist, CcmModel(t, math.inf, dist.constraint), LossKind.CROSS_ENTROPY).risk
        assert evaluate_objective(cfg, dist, None, t) == pytest.approx(
            strict_risk, abs=1e-9)


class TestBaselineUnion:
    def test_baseline_wins_when_descent_is_cut_short(self):
        dist = make_finite(4, 10, 0.0, seed=15)
        cfg = TrainConfig(Objective.ERVM_SURROGATE, rho=10.0, kind=LossKind.ELL1,
                          max_iters=1, constraint_baseline_scale=50.0)
        result = train(cfg, dist)
        assert result.used_baseline
        v = population_risk(dist, result.scorer, LossKind.ELL1).violation_l1
        assert v <= 1.0 / 10.0 + 1e-6

    def test_violation_cap_across_rho_grid(self):
        dist = make_finite(4, 10, 0.0, seed=16)
        baseline = constraint_baseline_table(dist.constraint, 50.0)
        u = population_risk(dist, baseline, LossKind.ELL1).violation_l1
        for rho in (0.5, 1.0, 2.0, 5.0, 10.0):
            cfg = TrainConfig(Objective.ERVM_SURROGATE, rho=rho, kind=LossKind.ELL1,
                              max_iters=300, constraint_baseline_scale=50.0,
                              baseline_u=u)
            result = train(cfg, dist)
            v = population_risk(dist, result.scorer, LossKind.ELL1).violation_l1
            assert v <= 1.0 / rho + u + 1e-6


class TestDeviationBound:
    def test_random_grids_satisfy_sandwich(self):
        for seed in range(8):
            dist = make_finite(4, 15, 0.2, seed=seed)
            grid = [random_score_table(dist, 1.5, seed=100 * seed + k)
                    for k in range(10)]
            report = deviation_bound_check(dist, None, 1.0, grid)
            assert report.all_pass

    def test_consistency_when_risk_minimizer_minimizes_violation(self):
        # One scorer dominates both criteria: risk(f_rho) == risk(f_0).
        dist = make_finite(3, 6, 0.0, seed=30)
        good_rows = np.zeros((6, 3))
        good_rows[np.arange(6), dist.oracle] = 8.0
        grid = [ScoreTable(good_rows), random_score_table(dist, 1.0, seed=31)]
        report = deviation_bound_check(dist, None, 2.0, grid)
        assert report.all_pass
        assert report.risk_minimizers == report.regularized_minimizers

    def test_tightness_pair_prefers_violation_minimizer(self):
        built = make_proof_construction("prop32_tightness", a=0.6, b=0.2,
                                        eps1=0.05, eps2=0.1, rho=1.0)
        f0, f_inf = built.scorers
        obj0 = evaluate_regularized_objective(f0, built.dist, None, 1.0, LossKind.ELL1)
        obj_inf = evaluate_regularized_objective(f_inf, built.dist, None, 1.0,
                                                 LossKind.ELL1)
        assert obj_inf < obj0
        report = deviation_bound_check(built.dist, None, 1.0, built.scorers)
        assert report.all_pass
        assert report.regularized_minimizers == [1]

    def test_empty_grid_rejected(self):
        dist = make_finite(3, 5, 0.0, seed=32)
        with pytest.raises(ValueError):
            deviation_bound_check(dist, None, 1.0, [])


class TestOnTrainingIdentity:
    def test_objective_equals_risk_minus_violation_at_iterates(self):
        dist = make_finite(3, 12, 0.0, seed=40, feature_dim=3)
        seen = []

        def watch(it, scorer, objective):
            rep = population_risk(dist, scorer, LossKind.CROSS_ENTROPY)
            seen.append(abs(objective - (rep.risk - rep.violation_ce)))

        train(TrainConfig(Objective.ON_TRAINING_CCM, max_iters=60,
                          learning_rate=2.0), dist, callback=watch)
        assert seen and max(seen) < 1e-9
