"""Mean-field linear-quadratic games with stochastic Volterra state dynamics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InternalConsistencyError,
    InvalidArgumentError,
    KernelEvaluationError,
    NCEInconsistencyError,
    NonConvergenceError,
    SingularSystemError,
    VolterraMFGError,
)
from .grid_kernels import (  # noqa: E402
    KernelMatrix,
    TimeGrid,
    kernel_compose,
    make_uniform_grid,
    sample_function,
    sample_kernel,
    volterra_resolvent,
)
from .transforms import ModelSpec, TransformBundle, build_transforms, gram_M_check  # noqa: E402
from .fredholm import FredholmProblem, SolveReport, fredholm_solve, gamma_apply  # noqa: E402
from .nce import ConditionReport, NCESolution, check_conditions, nce_residual, solve_nce  # noqa: E402
from .closed_loop import (  # noqa: E402
    AffineState,
    ControlKernel,
    control_kernel,
    limit_cost,
    limit_optimal_state,
    open_loop_state,
    svf_solve,
)
from .population_sim import (  # noqa: E402
    NashGapReport,
    PlayerControl,
    PopulationState,
    SimConfig,
    deviation_experiment,
    deviation_family,
    estimate_costs,
    mean_field_error,
    rate_experiment,
    sample_paths,
    solve_population,
)
from .delay_models import (  # noqa: E402
    DelayControlModel,
    DelayStateModel,
    delay_control_to_volterra,
    delay_state_to_volterra,
    phi1_solve,
    phi2_solve,
    sde_closed_forms,
)
