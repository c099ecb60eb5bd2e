"""Loss-calibrated mean-field variational inference with continuous decisions.

Fits diagonal-Gaussian posterior approximations by maximizing ELBO + U,
where U scores learned per-target decisions against the posterior
predictive, and compares the realized decision risk against plain VI.
"""

__version__ = "0.1.0"

from .calibration import (
    BoundEstimate,
    UtilityTermEstimate,
    calibrated_bound,
    estimate_U_linearized,
    estimate_U_naive,
    inner_expected_utility,
)
from .config import ExperimentConfig, config_echo, load_config, save_config
from .decisions import (
    AffineUtility,
    ComplementLoss,
    ExpTransform,
    LossSpec,
    NativeExpSquared,
    RobustMax,
    absolute,
    bayes_estimator,
    calibrate_M,
    empirical_quantile_M,
    gamma_from_quantile,
    linex,
    loss,
    loss_subgradient_h,
    optimal_decision,
    squared,
    tilted,
    to_utility,
)
from .evaluate import (
    RiskReport,
    RunTrace,
    empirical_risk,
    posterior_decisions,
    read_trace_csv,
    risk_reduction,
    write_trace_csv,
)
from .meanfield import (
    ElboEstimate,
    VariationalParams,
    entropy,
    estimate_elbo,
    init_variational_params,
    log_q,
)
from .models import (
    EightSchoolsData,
    EightSchoolsModel,
    MatrixData,
    PmfModel,
    generate_synthetic_matrix,
    load_eight_schools,
)
from .optimize import (
    AdamState,
    CalibratedObjective,
    OptimizerConfig,
    adam_step,
    build_objective,
    init_adam,
    run_em,
    run_joint_lcvi,
    run_standard_vi,
)
from .pipeline import run_pipeline, sweep
from .reparam import RngState, SupportTransform, constrain, reparameterize, seed_rng
