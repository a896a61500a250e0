"""Optimal and robust LED power allocation for visible-light positioning.

Pipeline: a scenario (room, LEDs, receiver, constraints) feeds a Lambertian
channel model whose gradients build the Fisher information coefficients; on
top sit convex/semidefinite allocation problems, a min-max algorithm for
receiver pose uncertainty, and a Monte Carlo experiment harness.
"""

__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    LedTransmitter,
    Receiver,
    Scenario,
    ScenarioError,
    SyncMode,
    convert_optical_to_electrical,
    load_scenario,
    tables_scenario_path,
)
from .channel import (  # noqa: F401
    ChannelGain,
    average_illuminance_coefficients,
    gain_gradient,
    illuminance_kernel,
    lambertian_gain,
    toa_gradient,
)
from .fisher import (  # noqa: F401
    Fim,
    GammaMatrix,
    SignalEnergies,
    UnlocalizableError,
    assemble_gamma,
    crlb,
    fim,
    signal_energies,
)
from .feasible import (  # noqa: F401
    FeasibleSet,
    build_feasible_set,
    is_feasible,
    uniform_allocation_for_accuracy,
    uniform_allocation_for_budget,
)
from .conic import (  # noqa: F401
    AllocationResult,
    SolverOptions,
    Status,
    minimum_feasible_budget,
    solve_min_power,
    solve_nominal_crlb,
    solve_robust_gamma,
    solve_robust_min_power,
    worst_case_crlb_fixed_p,
)
from .minmax import (  # noqa: F401
    MinmaxParams,
    UncertaintyModel,
    objective_at,
    smoothed_objective,
    solve_minmax,
    worst_case_eval,
)
from .experiments import (  # noqa: F401
    ExperimentReport,
    PerturbationSampler,
    run_cdf_experiment,
    run_strategy_comparison,
    sample_gamma_perturbation,
    sweep,
)
