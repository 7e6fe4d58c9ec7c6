"""Tensor-network scheduling: cheapest task-to-machine assignment under conditional rules."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    InfeasibleError,
    MemoryCapExceeded,
    NoSolutionFound,
    SchedulingError,
)
from .model import Instance, Rule, check_rules, cost, load_instance, normalize, total_cost  # noqa: F401
from .oracle import brute_force  # noqa: F401
from .solvers import GeneticConfig, IterativeConfig, solve_combined, solve_genetic, solve_iterative  # noqa: F401
from .state_engine import solve_full  # noqa: F401
