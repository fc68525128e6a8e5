"""Per-source decomposition of the scheduling CMDP and the dynamic truncation rule.

Dropping the one-transmission-per-slot constraint leaves sources coupled
only through the shared transmission and sampling budgets, so the LP has one
block of balance rows per source plus two shared rows. Its optimum is a
lower bound on the joint optimum. The per-source policies are then run
together, and when several of them want to transmit in the same slot only
the highest-priority source keeps its action.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import lp as lpmod
from .mdp_lp import lagrangian_policy
from .model import (
    IDLE,
    SAMPLE,
    Action,
    ActionKind,
    IDLE_ACTION,
    SourceSpec,
    SourceState,
    SystemSpec,
    first_slot_source_distribution,
    priority,
    source_initial_distribution,
    source_kernel,
    source_reachable,
    source_states,
)
from .occupancy import UNVISITED_THRESHOLD, normalize_rows

TIE_BREAK = "random-arrival-first,lowest-index"


@dataclass(frozen=True)
class PerSourcePolicy:
    """``f[s, k]``: probability of local action ``actions[k]`` in local state s."""

    source: int
    f: np.ndarray
    actions: tuple[int, ...]


@dataclass(frozen=True)
class TruncatedPolicy:
    spec: SystemSpec
    per_source: tuple[PerSourcePolicy, ...]
    tie_break: str = TIE_BREAK


@dataclass(frozen=True)
class DecomposedLp:
    """The decomposed LP plus the bookkeeping needed to read its solution.

    ``offsets[i]`` is the first variable of source i; source i's variables
    are laid out ``k * |A_i| + a`` over ``states[i]`` (local indices).
    """

    lp: lpmod.LinearProgram
    spec: SystemSpec
    states: tuple[np.ndarray, ...]
    offsets: tuple[int, ...]


def _source_block(src: SourceSpec, spec: SystemSpec, eta1: np.ndarray, states: np.ndarray):
    n_loc = 2 * (spec.N + 1) ** 2
    position = np.full(n_loc, -1, dtype=np.int64)
    position[states] = np.arange(len(states))
    n, acts = len(states), src.local_actions
    rows, cols, vals, Ps = [], [], [], []
    for k, code in enumerate(acts):
        ker = source_kernel(src, spec.p, spec.N, code)
        nxt = position[ker.nxt[states]]
        prob = ker.prob[states]
        keep = prob > 0.0
        if np.any(nxt[keep] < 0):
            raise ValueError("state subset is not closed under the transition kernel")
        src_pos = np.broadcast_to(np.arange(n)[:, None], nxt.shape)[keep]
        P = sp.csr_matrix((prob[keep], (src_pos, nxt[keep])), shape=(n, n))
        Ps.append(P)
        blk = (sp.identity(n, format="csr") - spec.lam * P).T.tocoo()
        rows.append(blk.row)
        cols.append(blk.col * len(acts) + k)
        vals.append(blk.data)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n * len(acts)))
    local = source_states(spec.N)[states]
    c = np.repeat((local[:, 0] * local[:, 2]).astype(float), len(acts))
    d_tr = np.tile([float(code != IDLE) for code in acts], n)
    d_sm = np.tile([float(code == SAMPLE) for code in acts], n)
    return A, spec.lam_bar * eta1[states], c, d_tr, d_sm, tuple(Ps)


def build_decomposed_lp(spec: SystemSpec, per_source_eta=None, reachable_only: bool = False,
                        shared_sampling: bool = True) -> DecomposedLp:
    """Decomposed occupation-measure LP.

    ``per_source_eta`` are slot-0 distributions over each source's local
    states (default: zero ages, steady-state query flag). With
    ``shared_sampling=False`` each generate-at-will source gets its own
    sampling row with the full budget instead of one shared row.
    """
    if per_source_eta is None:
        per_source_eta = [source_initial_distribution(src, spec.N) for src in spec.sources]
    n_loc = 2 * (spec.N + 1) ** 2
    blocks, states_all, offsets = [], [], []
    offset = 0
    for src, eta in zip(spec.sources, per_source_eta):
        eta1 = first_slot_source_distribution(src, spec.p, spec.N, np.asarray(eta, dtype=float))
        if reachable_only:
            states = np.flatnonzero(source_reachable(src, spec.p, spec.N, np.flatnonzero(eta1)))
        else:
            states = np.arange(n_loc)
        blocks.append(_source_block(src, spec, eta1, states))
        states_all.append(states)
        offsets.append(offset)
        offset += blocks[-1][0].shape[1]

    A_eq = sp.block_diag([b[0] for b in blocks], format="csr")
    b_eq = np.concatenate([b[1] for b in blocks])
    c = np.concatenate([b[2] for b in blocks])
    ub_rows = [np.concatenate([b[3] for b in blocks])]
    b_ub = [spec.gamma_tr]
    gaw = [i for i, src in enumerate(spec.sources) if not src.is_random_arrival]
    if gaw and shared_sampling:
        ub_rows.append(np.concatenate([b[4] for b in blocks]))
        b_ub.append(spec.gamma_sm)
    elif gaw:
        for i in gaw:
            row = np.zeros(offset)
            row[offsets[i]:offsets[i] + len(blocks[i][4])] = blocks[i][4]
            ub_rows.append(row)
            b_ub.append(spec.gamma_sm)
    A_ub = sp.csr_matrix(np.vstack(ub_rows))
    structure = []
    for i, blk in enumerate(blocks):
        n_act = len(spec.sources[i].local_actions)
        lo, hi = offsets[i], offsets[i] + len(blk[2])
        coupling = np.stack([row[lo:hi].reshape(-1, n_act) for row in ub_rows])
        structure.append(lpmod.MdpBlock(blk[5], blk[2].reshape(-1, n_act), coupling,
                                        blk[1], spec.lam, lo))
    lp = lpmod.LinearProgram(c, A_ub, np.array(b_ub), A_eq, b_eq, tuple(structure))
    return DecomposedLp(lp, spec, tuple(states_all), tuple(offsets))


def per_source_masses(dlp: DecomposedLp, x: np.ndarray) -> list[np.ndarray]:
    """Full local-space (|S_i|, |A_i|) occupation arrays, zero outside the LP's states."""
    n_loc = 2 * (dlp.spec.N + 1) ** 2
    out = []
    for i, src in enumerate(dlp.spec.sources):
        n_act = len(src.local_actions)
        states = dlp.states[i]
        xi = np.zeros((n_loc, n_act))
        xi[states] = x[dlp.offsets[i]:dlp.offsets[i] + len(states) * n_act].reshape(-1, n_act)
        out.append(xi)
    return out


def extract_per_source_policies(dlp: DecomposedLp, solution: lpmod.LpSolution,
                                threshold: float = UNVISITED_THRESHOLD,
                                fill: str = "lagrangian") -> list[PerSourcePolicy]:
    """Per-source randomized policies from the decomposed optimum.

    Visited states get ``x_i(s, .) / xbar_i(s)``. Unvisited ones are never
    reached by the source on its own, but truncation can push it there, so
    with ``fill="lagrangian"`` they take the source's optimal action under
    budget-priced costs (the LP's inequality duals); ``fill="idle"`` gives
    them Idle.
    """
    if fill not in ("lagrangian", "idle"):
        raise ValueError(f"unknown fill {fill!r}")
    prices = solution.ineq_duals
    policies = []
    for i, xi in enumerate(per_source_masses(dlp, solution.x)):
        total = max(float(np.clip(xi, 0.0, None).sum()), 0.0)
        cut = threshold * total
        f = normalize_rows(xi, cut)
        if fill == "lagrangian" and prices is not None:
            states = dlp.states[i]
            act = lagrangian_policy(dlp.lp.blocks[i], prices)
            empty = np.clip(xi[states], 0.0, None).sum(axis=1) <= cut
            f[states[empty]] = 0.0
            f[states[empty], act[empty]] = 1.0
        policies.append(PerSourcePolicy(i, f, dlp.spec.sources[i].local_actions))
    return policies


def lower_bound_value(solution: lpmod.LpSolution) -> float:
    return float(solution.objective_value)


def solve_decomposed(spec: SystemSpec, per_source_eta=None, tol: float = lpmod.DEFAULT_TOL,
                     shared_sampling: bool = True, method: str = "auto"):
    """Returns ``(solution, truncated_policy, lower_bound)``."""
    dlp = build_decomposed_lp(spec, per_source_eta, reachable_only=True,
                              shared_sampling=shared_sampling)
    sol = lpmod.solve_or_raise(dlp.lp, tol, method)
    pols = extract_per_source_policies(dlp, sol)
    return sol, TruncatedPolicy(spec, tuple(pols)), lower_bound_value(sol)


def _local_to_action(src: SourceSpec, i: int, code: int) -> Action:
    if code == IDLE:
        return IDLE_ACTION
    if src.is_random_arrival:
        return Action(ActionKind.TRANSMIT, i)
    return Action(ActionKind.SAMPLE_AND_TRANSMIT if code == SAMPLE else ActionKind.RETRANSMIT, i)


def winner(spec: SystemSpec, state, candidates) -> int:
    """Source among ``candidates`` kept by the truncation rule.

    Highest priority wins; ties go to random-arrival sources, then to the
    lowest index.
    """
    return min(
        candidates,
        key=lambda i: (-priority(spec.sources[i], SourceState(*state[i])),
                       not spec.sources[i].is_random_arrival, i),
    )


def truncated_action(spec: SystemSpec, state, sampled_codes) -> Action:
    """Resolve independently sampled per-source local actions into one joint action."""
    active = [i for i, code in enumerate(sampled_codes) if code != IDLE]
    if not active:
        return IDLE_ACTION
    i = active[0] if len(active) == 1 else winner(spec, state, active)
    return _local_to_action(spec.sources[i], i, int(sampled_codes[i]))
