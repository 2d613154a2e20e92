"""Observer for systems on matrix Lie groups, designed in the ambient matrix space."""

from .lie_core import SE3, SO3, GroupDescriptor, exp_se3, exp_so3, hat3, hat_se3, membership_residual, vee3, vee_se3
from .observer import Gains, ObserverState, error_terms, lyapunov, observer_rhs
from .simulate import Scenario, SimulationTrace, fit_exponential_rate, integrate_error_system, linearity_check, run
from .systems import LandmarkFrame, NoiseConfig, SystemState, measure, propagate_true
from .estimator import AmbientObserver, check_measurements

__version__ = "0.1.0"

__all__ = [
    "SE3",
    "SO3",
    "GroupDescriptor",
    "exp_se3",
    "exp_so3",
    "hat3",
    "hat_se3",
    "vee3",
    "vee_se3",
    "membership_residual",
    "Gains",
    "ObserverState",
    "error_terms",
    "lyapunov",
    "observer_rhs",
    "Scenario",
    "SimulationTrace",
    "fit_exponential_rate",
    "integrate_error_system",
    "linearity_check",
    "run",
    "LandmarkFrame",
    "NoiseConfig",
    "SystemState",
    "measure",
    "propagate_true",
    "AmbientObserver",
    "check_measurements",
]
