"""Mean-field equilibrium solvers and a population simulator for
thermostatically controlled loads."""

from ._kernels import BACKEND
from .meanfield import (EquilibriumSolution, ErrorTrajectory,
                        FixedPointError, empirical_m_on, fixed_point,
                        propagate_macroscopic)
from .model import (AgentState, ControlInput, ModelParams, ParameterError,
                    SystemMatrices, assemble, clamp_state, drift,
                    k_coefficient, running_cost, validate)
from .riccati import (AREError, RiccatiBlowUpError, RiccatiTrajectory,
                      Variant, control_law, effective_gain_matrix,
                      hjb_residual, solve_are, solve_are_matrices,
                      solve_backward, worst_case_disturbance)
from .simulate import (GainSchedule, ImpulseRule, PopulationState, RunRecord,
                       ScenarioConfig, inject_impulse, run, step_deterministic,
                       step_sde)
from .stability import (DriftReport, EquilibriumSet, check_asymptotic,
                        check_second_moment, check_worst_case,
                        equilibrium_point)

__version__ = "0.1.0"
