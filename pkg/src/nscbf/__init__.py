"""Control barrier function safety filters for safe sets built from unions
and intersections of smooth components, under piecewise-continuous
control-affine dynamics."""
from .controllers import (ActiveComponentConfig, AdaptiveConfig, AllComponentsConfig, ControlResult, InputBox,
                          ObjectiveSpec, QPController, search_feasible_params, u_act, u_adp, u_all,
                          verify_assumption2)
from .dynamics import DynamicsPiece, PiecewiseDynamics, active_J, eval_dynamics, select_piece
from .qp import QPProblem, QPSolution, QPSolverError, QPStatus, max_strict_margin, solve_qp, verify_kkt
from .safeset import (ActivityTolerances, Intersection, Leaf, SmoothComponent, Union, active_I, active_L,
                      eval_h, eval_tree, tilde_I, to_dnf, transition_beta)
from .scenarios import load_scenario
from .sim import IntegratorConfig, continuity_probe, filippov_sliding_field, monitor_safety, simulate

__version__ = "0.1.0"
