"""Control-aware model refinement: fit for prediction, refine for control.

The package implements a modular pipeline: fit a dynamics model by one-step
prediction error, extract residual disturbance scenarios, and refine the
parameters by projected gradient descent on a surrogate loss that evaluates
candidates through the optimal controls they induce.  Diagnostics quantify
when surrogate improvement transfers to deployment performance, and a
benchmark reproduces the prediction/control misalignment pattern on a
wind-disturbed point mass.
"""

from .cost import CostMatrices, cost_gradients, total_cost
from .diagnostics import (
    ConvergenceCertificate,
    DeploymentSet,
    TransferReport,
    bias,
    convergence_certificate,
    deployment_metric,
    estimate_bias_lipschitz,
    grid_sweep,
    transfer_check,
)
from .dynamics import (
    Box,
    ModelSpec,
    ParamVector,
    WindSpec,
    get_model,
    make_linear_model,
    make_pointmass_wind_model,
    rollout,
    rollout_jacobians,
    wind_disturbance_sequence,
)
from .errors import (
    ContractViolation,
    DegenerateParameterization,
    Nonconvergence,
    RolloutOverflow,
    StrongConvexityViolation,
)
from .identification import (
    Dataset,
    FitConfig,
    collect_dataset,
    counterfactual_rollout,
    estimate_disturbances,
    fit_theta_emp,
    fit_tpc,
    load_dataset,
    make_scenarios,
    prediction_mse,
    save_dataset,
)
from .scenario_control import (
    Scenario,
    ScenarioSet,
    SolveReport,
    SolverConfig,
    optimizer_hessians,
    optimizer_jacobian,
    scenario_gradients,
    scenario_objective,
    solve_optimal_control,
)
from .surrogate import (
    RunRecord,
    SurrogateConfig,
    estimate_lipschitz,
    gradient_mapping,
    project_theta,
    run_spc,
    run_updated_spc,
    surrogate_gradient,
    surrogate_loss,
)

__version__ = "0.1.0"
