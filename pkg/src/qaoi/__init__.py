"""Query-age-optimal sampling and transmission scheduling.

Joint and per-source occupation-measure LPs for a constrained MDP over
random-arrival and generate-at-will sources on a lossy channel, a
dynamic-truncation policy built from the per-source solutions, and a
seeded Monte-Carlo simulator.
"""
from .lp import LinearProgram, LpSolution, LpStatus, SolverFailure, solve
from .model import (
    Action,
    ActionKind,
    DegenerateQueryChain,
    QueryChain,
    SourceKind,
    SourceSpec,
    SourceState,
    StateSpaceTooLarge,
    SystemSpec,
    joint_transition,
)
from .occupancy import (
    RandomizedPolicy,
    build_joint_lp,
    evaluate_policy_exact,
    extract_policy,
    solve_joint,
)
from .simulator import SimConfig, SimMetrics, run
from .weakly_coupled import TruncatedPolicy, build_decomposed_lp, solve_decomposed

__version__ = "0.1.0"
