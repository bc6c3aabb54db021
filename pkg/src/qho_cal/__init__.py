"""Work statistics for a weakly driven, damped quantum harmonic oscillator.

Stochastic quantum-jump trajectories with two work estimators per
trajectory: the projective two-measurement value and the calorimetric
(two-level inference, guardian photon) value. A deterministic Lindblad
integrator and closed-form/perturbative moment formulas serve as
independent cross-checks.
"""

from .analytics import (
    PerturbativeElement,
    TruncationPolicy,
    mu,
    perturbative_u,
    transmission_T0,
    transmission_T1,
    transmission_TN,
    truncated_calorimetric_moment,
    unitary_T0,
    unitary_calorimetric_moment,
    unitary_projective_moments,
    w_nk,
)
from .errors import (
    ConfigError,
    GridMismatchError,
    InsufficientDataError,
    PrecisionLossWarning,
    QhoCalError,
    RegimeWarning,
    SimulationError,
    TruncationWarning,
)
from .fock import (
    displacement_element,
    displacement_matrix,
    ladder_operators,
    matrix_exponential,
    number_operator,
    quadratures,
)
from .lindblad import expectation, integrate, thermal_state
from .model import (
    PhysicalParams,
    Rates,
    bath_occupation,
    jump_operators,
    make_rates,
    nh_generator,
    no_jump_propagator,
)
from .trajectories import (
    EnsembleConfig,
    JumpEvent,
    TrajectoryRecord,
    evolve_trajectory,
    iter_ensemble,
    run_ensemble,
    sample_initial_level,
)
from .work import (
    GuardianOutcome,
    MomentSummary,
    WorkSample,
    calorimetric_work,
    guardian_final_probs_level,
    guardian_final_probs_state,
    guardian_initial_probs,
    heat_up_to,
    measure_ensemble,
    projective_work,
    summarize,
)

__version__ = "0.1.0"
