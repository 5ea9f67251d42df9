"""constraintlab: a numerical testbed for label-constrained classification.

The library implements, on exactly enumerable synthetic distributions, the
two standard ways of exploiting a known label constraint — penalizing
predicted constraint violations during training, and shifting or restricting
inference by the violation indicator — together with the closed-form
quantities (risk changes, capacity bounds, penalty-selection rules) that
govern when each mechanism helps, and a CLI that verifies those claims
numerically.
"""

from .analysis import (
    BenefitSign,
    MuScan,
    PreconditionError,
    RiskDelta,
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
from .complexity import (
    ComplexityEstimate,
    EnumeratedFamily,
    LinearBallFamily,
    ccm_complexity_identity_check,
    constrained_subset_complexity_bound,
    empirical_rademacher,
    generalization_gap_terms,
    improved_violation_constant,
)
from .core import (
    ConstraintMap,
    Dataset,
    FiniteDistribution,
    Instance,
    LabeledSample,
    LabelSpace,
    oracle_noise_rate,
    sample_dataset,
    violation_indicator,
)
from .losses import (
    CE_CLAMP,
    LossKind,
    RiskReport,
    empirical_risk,
    empirical_violation,
    loss_gradient,
    pointwise_loss,
    pointwise_violation,
    population_risk,
    violation_gradient,
)
from .scoring import (
    CcmModel,
    InvalidScoreError,
    LinearScorer,
    ScoreTable,
    argmax_label,
    ccm_predict,
    predict_probabilities,
    softmax_predict,
)
from .synthgen import (
    ConstructionError,
    ProofConstruction,
    constraint_baseline_table,
    make_finite,
    make_gaussian_features,
    make_proof_construction,
    make_two_point_line,
    random_linear_scorer,
    random_score_table,
)
from .training import (
    Objective,
    OptimizationError,
    TrainConfig,
    TrainResult,
    deviation_bound_check,
    evaluate_objective,
    evaluate_regularized_objective,
    train,
)

__version__ = "0.1.0"
