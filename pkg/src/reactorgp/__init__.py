"""Interpretable reactor setpoint policies by genetic programming on a learned model.

Set ``REACTORGP_DISABLE_NUMBA=1`` before import to run the pure-numpy kernels.
"""
from ._accel import USE_NUMBA
from .codegen import emit_structured_text, parse_policy, print_policy
from .data import TransitionBatch, build_dataset, fit_normalization
from .evaluation import control_deviation, evaluate_pair
from .expr import Binary, Const, Var, auto_cancel, complexity, eval_expr
from .fitness import FitnessSpec, ModelFitness, PolicyBinding, estimate_return
from .gp import GAConfig, ParetoArchive, evolve, pareto_front
from .reactor import Action, ReactorParams, Recipe, run_batch
from .surrogate import SurrogateModel, TrainingConfig, rollout, train

__version__ = "0.1.0"
