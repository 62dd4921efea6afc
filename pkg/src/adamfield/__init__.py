"""Adam vector fields, their first-order approximation, and ODE shadowing experiments."""

from .adam import AdamState, Trajectory, adam_step, run_adam, run_adam_batch
from .innovation import (
    DiscreteLaw,
    InnovationSpec,
    NormalLaw,
    UniformLaw,
    constant_innovation,
    custom_innovation,
    minibatch_innovation,
    preset,
    quadratic,
)
from .schedule import StepSchedule, schedule_condition_check, training_times
from .seq_space import (
    DampingParams,
    ParamError,
    g_bound,
    g_map,
    lrho_norm,
    mv_seminorm_upper,
    rho_weights,
    translate,
    validate_params,
)

__version__ = "0.1.0"
