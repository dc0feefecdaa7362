"""Sparse optimal control of interacting agents and its mean-field limit."""

from .core_model import (AffineKernel, BoundFunction, CallableKernel, ControlField, CostSpec,
                         CuckerSmaleKernel, EmpiricalMeasure, InitialSpec, Kernel, PhaseEnsemble,
                         Scenario, sample_initial, validate_scenario)
from .dynamics import (Trajectory, convolve_kernel, gronwall_growth_bound, integrate,
                       support_bound)
from .transport import TransportPlan, w1, w1_distance, w1_dual_bound
from .meanfield import MeasureTrajectory, solve_meanfield, stability_check, weak_form_residual
from .control_opt import (evaluate_cost, optimize, project_admissible, soft_threshold,
                          sparsity_report)
from .harness import gamma_study, limit_study

__version__ = "0.1.0"
