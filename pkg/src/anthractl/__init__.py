"""anthractl: within-host and spatial anthracnose dynamics with optimal control."""

__version__ = "0.1.0"

from .host import (
    ConstantForcing,
    ControlSignal,
    DivisionGuardError,
    HostState,
    ModelParams,
    ProportionalForcing,
    RegionReport,
    SampledPath,
    SeasonalForcing,
    Trajectory,
    check_region,
    eval_rhs,
    integrate_ode,
    integrate_ode_batch,
    seasonal_alpha,
    validate_forcings,
)
from .ode_control import (
    AdjointState,
    BangRegimeError,
    CostSpec,
    GridMismatchError,
    OptimalSolution,
    ShootingError,
    eval_adjoint_rhs,
    eval_cost_JT,
    integrate_adjoint,
    integrate_coupled,
    optimal_u_feedback,
    shoot_p0,
    solve_feedback_cubic,
)
from .grid import (
    DiffusionField,
    GridSpec,
    ScalarField,
    SpatialGrid,
    as_cell_values,
    build_grid,
)
from .pde import (
    BoundsReport,
    EigenConvergenceError,
    EigenReport,
    FieldPath,
    OperatorMatrix,
    SingularOperatorError,
    SolverBreakdownError,
    assemble_operator,
    bounds_inputs_from_initial,
    integrate_pde,
    principal_eigenvalue,
    solve_equilibrium,
    step_implicit,
    verify_bounds,
)
from .pde_control import (
    LinearizationPoint,
    PdeCostSpec,
    RiccatiBlowupError,
    RiccatiPath,
    RiccatiState,
    SweepResult,
    closed_loop_linearized,
    eval_cost_JT3,
    forward_backward_sweep,
    hamiltonian_pointwise_feedback,
    integrate_controlled,
    integrate_linearized,
    integrate_riccati,
    linearize,
    riccati_feedback,
    solve_adjoint_pde,
)
from .severity import (
    AsiCoefficients,
    DoddCoefficients,
    DuthieCoefficients,
    SeverityForcing,
    WeatherSeries,
    dodd_logit,
    duthie_temperature_factor,
    eval_asi,
    eval_dodd_fraction,
    eval_duthie_response,
)
