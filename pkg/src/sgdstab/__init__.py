"""Desk-scale laboratory for data-dependent stability of SGD.

Train small convex and non-convex models with permutation-sampled SGD,
measure replace-one stability with coupled paired runs, estimate the
data-dependent quantities the theory consumes (risk at initialization,
gradient noise, expected Hessian spectral norm), and evaluate each
stability/generalization bound against those measurements and against the
worst-case baseline.
"""

from .models import (
    Dataset,
    Example,
    LogisticModel,
    LossModel,
    OracleLimitError,
    QuadraticModel,
    SmoothnessConstants,
    TanhMlpModel,
    dense_hessian,
    make_model,
)
from .sgd import (
    DivergenceError,
    MultiEpochWarning,
    PairedRunRecord,
    SgdConfig,
    StepSchedule,
    Trajectory,
    gradient_update_expansion,
    paired_run,
    run_sgd,
    sample_permutation,
    step_size,
    validate_schedule,
)
from .curvature import (
    MeanSpectralNorm,
    NumericError,
    PowerIterConfig,
    SpectralEstimate,
    example_hessian_norm,
    expected_hessian_norm,
    hvp_finite_difference,
    power_iteration_spectral_norm,
)
from .estimators import (
    EmpiricalConstants,
    EmpiricalConstantsConfig,
    GapEstimate,
    RiskEstimate,
    StabilityResult,
    StabilitySample,
    VarianceEstimate,
    empirical_constants,
    empirical_risk,
    empirical_stability,
    generalization_gap,
    gradient_path_sum,
    path_bound,
    risk_estimate,
    sigma_estimate,
    sigma_evaluation_iterates,
    xi_expansiveness,
)
from .bounds import (
    BoundReport,
    GammaBreakdown,
    StabilityInputs,
    T0Optimum,
    TransferSelection,
    convex_decomposed_bound,
    convex_stability_bound,
    gamma,
    nonconvex_stability_bound,
    optimistic_bound,
    optimistic_solve,
    standard_report_set,
    t0_optimum,
    transfer_select_convex,
    transfer_select_nonconvex,
    uniform_baseline_bound,
)
from .datagen import (
    dataset_drawer,
    example_drawer,
    generate_synthetic,
    teacher_model,
    teacher_weights,
)

__version__ = "0.1.0"
