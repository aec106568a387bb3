"""Robust mean-field games on finite state and action spaces."""

from .config import ConfigError, game_from_dict, load_game
from .dpp import (
    ResidualReport,
    SolveResult,
    backward_induction,
    check_fixed_point,
    check_mfe,
    robust_policy_eval,
)
from .inner import FiniteCandidates, SingletonSet, W1Ball, ball_membership, worst_case_expectation
from .mfe import Equilibrium, SolveOptions, lambda_sweep, solve_mfe
from .model import (
    CrowdReward,
    FiniteSet,
    FiniteSpace,
    GameSpec,
    ModelError,
    Singleton,
    TableReward,
    WassersteinBall,
    make_crowd_game,
    reward_eval,
    validate_assumptions,
)
from .nagent import (
    NAgentReport,
    ProfilePolicy,
    best_response_gap,
    chaos_diagnostic,
    fixed_policy_value_exact,
    simulate_plugin,
)
from .transport import w1, w1_1d, w1_lp

__version__ = "0.1.0"
