"""Simulation and attractor analysis for dynamical systems whose velocity
field evolves under a stimulus-driven plasticity rule."""

from .errors import (
    PlasticaError,
    ScenarioError,
    NumericError,
    DomainError,
    GridExitError,
    InvarianceError,
)
from .stimulus import (
    StimulusPath,
    SdeSpec,
    make_deterministic_path,
    simulate_sde_path,
    eval_stimulus,
    double_well_drift,
)
from .plastic_field import (
    FieldGrid,
    PlasticRule,
    gaussian_bump,
    gaussian_bump_grad,
    step_field,
    closed_form_grad_solution,
    pullback_limit_grad,
    eval_field,
    field_gradient,
)
from .trajectory import (
    Trajectory,
    RhsSource,
    integrate_trajectory,
    switching_rhs,
    velocity_magnitude_series,
)
from .attractor import (
    SetEstimate,
    PullbackSweep,
    hausdorff_distance,
    directed_distance,
    pullback_attractor_estimate,
    forward_limit_set_estimate,
    forward_attracting_set,
    forward_attraction_check,
)
from .checks import (
    CheckReport,
    check_dissipativity_A2,
    check_growth_C2,
    check_C4,
    check_symmetry_potential,
    check_dissipativity_preservation,
)
from .scenario import Scenario, load_scenario, parse_scenario

__version__ = "0.1.0"
