"""Joint occupation-measure LP, optimal randomized policy, exact policy evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lp as lpmod
from .model import (
    DEFAULT_STATE_LIMIT,
    StateSpace,
    SystemSpec,
    enumerate_states,
    first_slot_distribution,
    initial_distribution,
    joint_kernel_block,
    reachable_states,
    source_kernels,
    sm_cost,
    tr_cost,
)

# states whose occupation mass is below this fraction of the total get Idle
UNVISITED_THRESHOLD = 1e-9
_CHUNK = 1 << 16


@dataclass(frozen=True)
class OccupationMeasure:
    x: np.ndarray  # (|S|, |A|)
    spec: SystemSpec
    state_space: StateSpace

    @property
    def total(self) -> float:
        return float(self.x.sum())


@dataclass(frozen=True)
class RandomizedPolicy:
    """Stationary randomized policy; ``f[s, a]`` is the probability of action a in state s."""

    f: np.ndarray
    spec: SystemSpec

    def distribution(self, s: int) -> np.ndarray:
        return self.f[s]


def cost_vectors(spec: SystemSpec, space: StateSpace):
    """Per-state QAoI cost and per-action transmission/sampling indicators."""
    r, _, delta = space.fields()
    c = (r * delta).sum(axis=1).astype(float)
    d_tr = np.array([tr_cost(a) for a in spec.actions], dtype=float)
    d_sm = np.array([sm_cost(a) for a in spec.actions], dtype=float)
    return c, d_tr, d_sm


def transition_matrices(spec: SystemSpec, space: StateSpace, weights: np.ndarray | None = None,
                        states: np.ndarray | None = None):
    """Yield ``(action_id, P_a)`` as CSR matrices, or the weighted sum if ``weights`` given.

    ``weights`` is an (|S|, |A|) array; the result is then
    ``sum_a diag(weights[:, a]) P_a``. With ``states`` (a closed, sorted
    subset of joint indices) matrices are indexed by position in ``states``.
    """
    kernels = source_kernels(spec)
    if states is None:
        states = np.arange(len(space))
        position = None
    else:
        position = np.full(len(space), -1, dtype=np.int64)
        position[states] = np.arange(len(states))
    n = len(states)
    total = None
    for a in range(len(spec.actions)):
        rows, cols, vals = [], [], []
        for lo in range(0, n, _CHUNK):
            pos = np.arange(lo, min(lo + _CHUNK, n))
            nxt, prob = joint_kernel_block(spec, a, states[pos], kernels)
            if position is not None:
                nxt = position[nxt]
            if weights is not None:
                prob = prob * weights[pos, a][:, None]
            keep = prob > 0.0
            if position is not None and np.any(nxt[keep] < 0):
                raise ValueError("state subset is not closed under the transition kernel")
            rows.append(np.broadcast_to(pos[:, None], nxt.shape)[keep])
            cols.append(nxt[keep])
            vals.append(prob[keep])
        P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
        if weights is None:
            yield a, P
        else:
            total = P if total is None else total + P
    if weights is not None:
        yield None, total


def build_joint_lp(spec: SystemSpec, eta: np.ndarray | None = None,
                   limit: int = DEFAULT_STATE_LIMIT,
                   states: np.ndarray | None = None) -> lpmod.LinearProgram:
    """Occupation-measure LP of the joint constrained MDP.

    Variable ``k * |A| + a`` is the discounted occupation of (states[k], a);
    ``states`` defaults to the whole space. A restriction must be closed
    under every action and contain the support of the slot-1 distribution,
    in which case the optimum is unchanged. ``eta`` is the slot-0
    distribution (default: zero ages, steady-state queries).
    """
    space = enumerate_states(spec, limit)
    if eta is None:
        eta = initial_distribution(spec)
    eta1 = first_slot_distribution(spec, eta)
    if states is None:
        states = np.arange(len(space))
    elif eta1[np.setdiff1d(np.arange(len(space)), states)].any():
        raise ValueError("state subset misses part of the initial support")
    n, n_act = len(states), len(spec.actions)
    lam = spec.lam

    blocks, Ps = [], []
    for a, P in transition_matrices(spec, space, states=states):
        # column (s', a): e_{s'} - lam * P[s', :]
        col_block = (sp.identity(n, format="csr") - lam * P).T.tocoo()
        blocks.append((col_block.row, col_block.col * n_act + a, col_block.data))
        Ps.append(P)
    rows = np.concatenate([b[0] for b in blocks])
    cols = np.concatenate([b[1] for b in blocks])
    vals = np.concatenate([b[2] for b in blocks])
    A_eq = sp.csr_matrix((vals, (rows, cols)), shape=(n, n * n_act))
    b_eq = spec.lam_bar * eta1[states]

    c_state, d_tr, d_sm = cost_vectors(spec, space)
    c = np.repeat(c_state[states], n_act)
    A_ub = sp.csr_matrix(np.vstack([np.tile(d_tr, n), np.tile(d_sm, n)]))
    b_ub = np.array([spec.gamma_tr, spec.gamma_sm])
    structure = lpmod.MdpBlock(
        tuple(Ps), c.reshape(n, n_act),
        np.stack([np.broadcast_to(d_tr, (n, n_act)), np.broadcast_to(d_sm, (n, n_act))]),
        b_eq, lam, 0)
    return lpmod.LinearProgram(c, A_ub, b_ub, A_eq, b_eq, (structure,))


def occupation_measure(spec: SystemSpec, solution: lpmod.LpSolution,
                       limit: int = DEFAULT_STATE_LIMIT,
                       states: np.ndarray | None = None) -> OccupationMeasure:
    """Lift an LP solution to a full-space measure (zero outside ``states``)."""
    space = enumerate_states(spec, limit)
    n_act = len(spec.actions)
    x = np.zeros((len(space), n_act))
    if states is None:
        states = np.arange(len(space))
    x[states] = solution.x.reshape(len(states), n_act)
    return OccupationMeasure(x, spec, space)


def normalize_rows(x: np.ndarray, threshold: float) -> np.ndarray:
    """Row-normalise occupation masses; rows at or below ``threshold`` become Idle."""
    x = np.clip(x, 0.0, None)
    xbar = x.sum(axis=1)
    visited = xbar > threshold
    f = np.zeros_like(x)
    f[visited] = x[visited] / xbar[visited, None]
    f[~visited, 0] = 1.0
    return f


def extract_policy(m: OccupationMeasure, threshold: float = UNVISITED_THRESHOLD) -> RandomizedPolicy:
    total = max(m.total, 0.0)
    return RandomizedPolicy(normalize_rows(m.x, threshold * total), m.spec)


def solve_joint(spec: SystemSpec, eta: np.ndarray | None = None, tol: float = lpmod.DEFAULT_TOL,
                limit: int = DEFAULT_STATE_LIMIT, reachable_only: bool = True,
                method: str = "auto"):
    """Build, solve and extract. Returns ``(solution, measure, policy)``."""
    if eta is None:
        eta = initial_distribution(spec)
    states = None
    if reachable_only:
        enumerate_states(spec, limit)
        states = reachable_states(spec, first_slot_distribution(spec, eta))
    lp = build_joint_lp(spec, eta, limit, states)
    sol = lpmod.solve_or_raise(lp, tol, method)
    m = occupation_measure(spec, sol, limit, states)
    return sol, m, extract_policy(m)


def evaluate_policy_exact(spec: SystemSpec, policy: RandomizedPolicy | np.ndarray,
                          eta: np.ndarray | None = None,
                          limit: int = DEFAULT_STATE_LIMIT) -> tuple[float, float, float]:
    """Discounted (QAoI, transmissions, samples) of a stationary policy by a direct linear solve.

    Solves ``(I - lam P_pi)^T y = eta_1`` once; each metric is then
    ``lam_bar * y @ cost``.
    """
    f = policy.f if isinstance(policy, RandomizedPolicy) else np.asarray(policy, dtype=float)
    space = enumerate_states(spec, limit)
    if eta is None:
        eta = initial_distribution(spec)
    eta1 = first_slot_distribution(spec, eta)
    (_, P_pi), = transition_matrices(spec, space, weights=f)
    M = (sp.identity(len(space), format="csc") - spec.lam * P_pi.T).tocsc()
    y = spla.spsolve(M, eta1)
    c, d_tr, d_sm = cost_vectors(spec, space)
    lb = spec.lam_bar
    return float(lb * y @ c), float(lb * y @ (f @ d_tr)), float(lb * y @ (f @ d_sm))


def idle_policy(spec: SystemSpec, limit: int = DEFAULT_STATE_LIMIT) -> RandomizedPolicy:
    n = len(enumerate_states(spec, limit))
    f = np.zeros((n, len(spec.actions)))
    f[:, 0] = 1.0
    return RandomizedPolicy(f, spec)
