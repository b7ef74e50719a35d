"""Finite-MDP solvers, tabular reinforcement learning and structural checks."""

__version__ = "0.1.0"

from .mdp import (  # noqa: E402
    FiniteMDP,
    MDPValidationError,
    bellman_apply,
    greedy_policy,
    load_mdp,
    policy_evaluation,
    q_value_iteration,
    save_mdp,
    value_iteration,
)
from .exact import backward_induction, lp_solve, lp_value  # noqa: E402
from .models import OrderedModel  # noqa: E402
