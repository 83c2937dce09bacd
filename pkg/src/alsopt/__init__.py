"""Adaptive learning-based surrogate method for stochastic programs whose
random input depends on the decision through an unknown regression model."""

from .core import (
    BoxDomain,
    ContractViolation,
    CostFunction,
    DDUProblem,
    GroundTruthModel,
    LipschitzData,
    project,
    sample_response,
    weak_convexity_bound,
)
from .driver import (
    AveragingWeights,
    DegenerateWeights,
    DriverOptions,
    IterationRecord,
    ParameterSchedule,
    RunTrace,
    als_step,
    compute_Pt,
    polyak_weights,
    run_als,
    schedule_eval,
)
from .estimate import (
    InsufficientLocalData,
    LocalEstimate,
    ResidualBatch,
    assemble_G,
    fit_local_estimate,
    kernel_eval,
    kernel_weights,
    llr_fit,
    residuals_adaptive,
    residuals_static,
    select_bandwidth,
    variance_fit,
)
from .simulate import (
    Dataset,
    OracleConfig,
    SamplePair,
    default_bandwidth_rule,
    draw_adaptive,
    draw_adaptive_residual_batch,
    draw_static,
    load_fixed,
    save_fixed,
)
from .solve import (
    NumericalBreakdown,
    ProxSolveReport,
    minimize_strongly_convex,
    moreau_residual,
    prox_point,
)
from .surrogate import (
    AffineChannel,
    SurrogateModel,
    build_surrogate,
    conceptual_surrogate,
    eval_surrogate,
    subgrad_surrogate,
)
from .diagnostics import (
    SampleAverageObjective,
    StationarityReport,
    estimation_rate_experiment,
    saa_objective,
    stationarity_report,
)
from .baselines import (
    BaselineOptions,
    EquilibriumMethodConfig,
    MethodNotApplicable,
    PredictOptimizeResult,
    po_lr_run,
    spg_run,
    spp_run,
)

__version__ = "0.1.0"
