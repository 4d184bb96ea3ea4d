"""memwave: spectral simulator and verification harness for a wave equation
with aging (time-dependent) memory kernels, plus a finite-dimensional
covering lab for the associated attractor dimension bounds."""

from .covering import (
    BoxDimensionFit,
    CoveringTree,
    EAFamily,
    ToyProcess,
    box_dimension,
    build_covering,
    build_E,
    default_toy_2d,
    packing_number,
    packing_number_oracle,
)
from .dynamics import (
    SIGMAS,
    SPLIT_CLIPPED,
    SPLIT_LINEAR,
    DifferenceRun,
    ExtendedState,
    InstabilityError,
    ProcessConfig,
    SplitRun,
    Trajectory,
    difference_run,
    evolve,
    evolve_split,
    state_norm2,
    step,
)
from .functionals import (
    DecayFit,
    GronwallReport,
    dimension_bound,
    fit_decay,
    gronwall_check,
    lambda_functional,
    lambda_series,
    memory_inequality_check,
    phi,
    psi,
    rate_compose,
)
from .history import (
    HistoryBuffer,
    InitialHistory,
    SQuadrature,
    WindowUnderrunError,
    build_s_quadrature,
    frozen_history_norm2,
    memory_force,
    memory_inner,
    memory_norm2,
)
from .kernels import (
    ArctanExponentialKernel,
    CallableKernel,
    KernelAudit,
    KernelTailError,
    TimeDependentKernel,
    UnboundedRatioError,
    audit,
    autonomous_exponential_kernel,
    embedding_bound,
    eval_mu,
    total_mass,
)
from .spectral import (
    ModeBasis,
    Nonlinearity,
    apply_nonlinearity,
    cubic_nonlinearity,
    default_forcing,
    zero_nonlinearity,
)

__version__ = "0.1.0"
