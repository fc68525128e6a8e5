"""Exact policy-generation solver for occupation-measure LPs.

An LP whose equality rows are the balance equations of one or more
discounted MDPs (``LinearProgram.blocks``) and whose inequality rows couple
them is solved by Dantzig-Wolfe decomposition. The vertices of each block's
balance polytope are occupation measures of deterministic stationary
policies, so the master LP mixes a handful of such policies per block under
the coupling rows, and pricing a new column is an unconstrained MDP with
costs ``cost + nu @ coupling``, solved exactly by policy iteration.

The method stops when no block has a column of negative reduced cost
(Lagrangian gap below tolerance); the mixed solution is then re-validated
against the flat LP like any other backend's output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .lp import LinearProgram, LpSolution, LpStatus, MdpBlock, finish, _solve_highs

MAX_ROUNDS = 500
MAX_PI_STEPS = 200


@dataclass
class _Column:
    policy: np.ndarray
    xbar: np.ndarray
    cost: float
    usage: np.ndarray


@dataclass
class _BlockState:
    block: MdpBlock
    stacked: sp.csr_matrix
    columns: list[_Column] = field(default_factory=list)
    last_policy: np.ndarray | None = None


def _factor(state: _BlockState, policy: np.ndarray):
    b = state.block
    n = b.n_states
    P = state.stacked[policy * n + np.arange(n)]
    M = (sp.identity(n, format="csc") - b.discount * P).tocsc()
    return spla.splu(M)


def policy_iteration(state: _BlockState, g: np.ndarray, policy: np.ndarray | None = None):
    """Optimal deterministic policy for per-(state, action) cost ``g``.

    Returns ``(policy, values, lu)`` where ``lu`` factors ``I - discount * P_policy``.
    A state keeps its action unless another one is strictly better, which
    rules out cycling between tied actions.
    """
    b = state.block
    n, n_act = g.shape
    rows = np.arange(n)
    if policy is None:
        policy = np.argmin(g, axis=1)
    for _ in range(MAX_PI_STEPS):
        lu = _factor(state, policy)
        v = lu.solve(g[rows, policy])
        q = g + b.discount * (state.stacked @ v).reshape(n_act, n).T
        best = np.argmin(q, axis=1)
        current = q[rows, policy]
        slack = 1e-12 * (1.0 + np.abs(current))
        improve = q[rows, best] < current - slack
        if not improve.any():
            return policy, v, lu
        policy = np.where(improve, best, policy)
    raise RuntimeError("policy iteration did not converge")


def lagrangian_policy(block: MdpBlock, prices: np.ndarray) -> np.ndarray:
    """Optimal deterministic policy of ``block`` under cost ``cost + prices @ coupling``."""
    st = _BlockState(block, sp.vstack(block.transitions, format="csr"))
    g = block.cost + np.tensordot(np.asarray(prices, dtype=float), block.coupling, axes=1)
    return policy_iteration(st, g)[0]


def _column(state: _BlockState, policy: np.ndarray, lu) -> _Column:
    b = state.block
    rows = np.arange(b.n_states)
    xbar = np.maximum(lu.solve(b.rhs, trans="T"), 0.0)  # nonnegative up to rounding
    cost = float(xbar @ b.cost[rows, policy])
    usage = b.coupling[:, rows, policy] @ xbar
    return _Column(policy.copy(), xbar, cost, usage)


def _master(states: list[_BlockState], b_ub: np.ndarray):
    cols = [(j, col) for j, st in enumerate(states) for col in st.columns]
    c = np.array([col.cost for _, col in cols])
    A_ub = np.column_stack([col.usage for _, col in cols]) if len(b_ub) else None
    A_eq = np.zeros((len(states), len(cols)))
    for k, (j, _) in enumerate(cols):
        A_eq[j, k] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub if len(b_ub) else None, A_eq=A_eq,
                  b_eq=np.ones(len(states)), bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    return res, cols


def solve_blocks(lp: LinearProgram, tol: float) -> LpSolution:
    """Solve a block-structured occupation-measure LP; falls back to HiGHS if the start is infeasible."""
    states = [_BlockState(b, sp.vstack(b.transitions, format="csr")) for b in lp.blocks]
    K = len(lp.b_ub)

    # start from the least-coupling and the unconstrained-optimal policy of each block
    for st in states:
        b = st.block
        for g in (b.coupling.sum(axis=0) if K else b.cost, b.cost):
            pol, _, lu = policy_iteration(st, g)
            if not any(np.array_equal(pol, col.policy) for col in st.columns):
                st.columns.append(_column(st, pol, lu))
            st.last_policy = pol

    gap = np.inf
    rounds = 0
    res, cols = _master(states, lp.b_ub)
    if res.status == 2:
        return _solve_highs(lp, tol)
    for rounds in range(1, MAX_ROUNDS + 1):
        if res.status != 0:
            break
        nu = -res.ineqlin.marginals if K else np.zeros(0)
        mu = res.eqlin.marginals
        total_rc = 0.0
        added = False
        for j, st in enumerate(states):
            b = st.block
            g = b.cost + np.tensordot(nu, b.coupling, axes=1)
            pol, v, lu = policy_iteration(st, g, st.last_policy)
            st.last_policy = pol
            rc = float(b.rhs @ v) - mu[j]
            total_rc += min(rc, 0.0)
            if rc < -1e-13 * (1.0 + abs(res.fun)) and not any(
                    np.array_equal(pol, col.policy) for col in st.columns):
                st.columns.append(_column(st, pol, lu))
                added = True
        gap = max(0.0, -total_rc)  # never -0.0
        if not added or gap <= 1e-11 * (1.0 + abs(res.fun)):
            break
        res, cols = _master(states, lp.b_ub)

    if res.status != 0 or res.x is None:
        nan = np.full(lp.num_vars, np.nan)
        return LpSolution(LpStatus.NUMERICAL_FAILURE, nan, np.nan, np.inf, np.inf,
                          f"master LP failed: {res.message}")

    x = np.zeros(lp.num_vars)
    for w, (j, col) in zip(res.x, cols):
        if w <= 0.0:
            continue
        b = states[j].block
        idx = b.offset + np.arange(b.n_states) * b.n_actions + col.policy
        x[idx] += w * col.xbar
    converged = gap <= max(tol, 1e-11) * (1.0 + abs(res.fun))
    msg = f"policy generation: {rounds} rounds, Lagrangian gap {gap:.3g}"
    nu = -np.asarray(res.ineqlin.marginals) if K else np.zeros(0)
    return finish(lp, x, tol, converged, msg, np.maximum(nu, 0.0))
