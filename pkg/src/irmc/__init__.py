"""Impulse-control solver library based on regression Monte Carlo.

Workflow: build an ImpulseModel (or a preset), train a surrogate stack with
solve(), then evaluate the fitted policy with forward_evaluate() or inspect
its action boundary.  Reference oracles (closed-form thresholds, grid DP)
validate the pipeline end to end.
"""

from .design import (DesignScheme, TrainingDesign, build_design, faustmann_lattice,
                     federico_lattice, pre_average)
from .dynamics import (PHASE_AUX, PHASE_FORWARD, PHASE_TRAIN, NoiseSource,
                       PathBatch, apply_impulse, step_uncontrolled, transition)
from .errors import (AbortAtStep, BracketFailure, ConfigError, EmptyActionSet,
                     InadmissibleImpulse, InvalidParameters, IrmcError,
                     NoEvents, NonFiniteState, SolverError,
                     UnsupportedDimension, VersionMismatch)
from .intervention import (ActionDecision, ActionPolicy, OptimizerMode,
                           TargetLevel, default_mode, find_target,
                           fit_impulse_surrogate, intervention_value,
                           predict_impulse)
from .model import (ActionSet, CostKind, CostSpec, Direction, DynamicsKind,
                    ImpulseModel, fixed_cost_positive_part, guthrie_roa,
                    linear_affine_cost, make_faustmann_model,
                    make_federico_model, make_guthrie_model, make_preset,
                    power_cost, with_impulses_disabled)
from .oracle import (DpSolution, FedericoSolution, GuthrieReference,
                     brute_force_dp, federico_solution)
from .policy import (ForwardReport, extract_boundary, forward_evaluate,
                     lower_bound_check, scan_boundary, write_boundary_csv,
                     write_events_csv, write_forward_report)
from .solver import Lookahead, SolverConfig, StepTrace, solve, stationary_value
from .stack_io import load_stack, save_stack
from .surrogate import (GpSurrogate, SurrogateStack, TpsSurrogate, fit_gp,
                        fit_tps)

__version__ = "0.1.0"

__all__ = [
    "ActionDecision", "ActionPolicy", "ActionSet", "AbortAtStep",
    "BracketFailure", "ConfigError", "CostKind", "CostSpec", "Direction",
    "DesignScheme", "DpSolution", "DynamicsKind", "EmptyActionSet",
    "FedericoSolution", "ForwardReport", "GpSurrogate", "GuthrieReference",
    "ImpulseModel", "InadmissibleImpulse", "InvalidParameters", "IrmcError",
    "Lookahead", "NoEvents", "NoiseSource", "NonFiniteState", "OptimizerMode",
    "PathBatch", "PHASE_AUX", "PHASE_FORWARD", "PHASE_TRAIN", "SolverConfig",
    "SolverError", "StepTrace", "SurrogateStack", "TargetLevel",
    "TpsSurrogate", "TrainingDesign", "UnsupportedDimension",
    "VersionMismatch", "apply_impulse", "brute_force_dp", "build_design",
    "default_mode", "extract_boundary", "faustmann_lattice", "federico_lattice",
    "federico_solution", "find_target", "fit_gp", "fit_impulse_surrogate",
    "fit_tps", "fixed_cost_positive_part", "forward_evaluate", "guthrie_roa",
    "intervention_value", "linear_affine_cost", "load_stack",
    "lower_bound_check", "make_faustmann_model", "make_federico_model",
    "make_guthrie_model", "make_preset", "power_cost", "pre_average",
    "predict_impulse", "save_stack", "scan_boundary", "solve",
    "stationary_value", "step_uncontrolled", "transition",
    "with_impulses_disabled", "write_boundary_csv", "write_events_csv",
    "write_forward_report",
]
