"""Seeded Monte-Carlo simulation of scheduling policies.

All replications advance together as numpy arrays. Every uniform draw is a
hash of ``(seed, replication, purpose, slot)``, so each replication owns an
independent stream per purpose (arrivals and queries per source, the
channel, policy randomisation) and results do not depend on how many
replications run alongside. Policies compared under the same seed see the
same arrivals, queries and channel outcomes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .model import (
    IDLE,
    SAMPLE,
    SEND,
    ActionKind,
    SystemSpec,
    query_steady_state,
    source_index,
)
from .occupancy import RandomizedPolicy
from .weakly_coupled import TruncatedPolicy

ARRIVAL, QUERY, CHANNEL, POLICY = 1, 2, 3, 4

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class StreamRng:
    """Counter-based uniforms: one independent stream per (replication, purpose)."""

    def __init__(self, seed: int, reps: np.ndarray):
        seed_arr = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        with np.errstate(over="ignore"):
            self._keys = _mix64(_mix64(seed_arr) + (reps.astype(np.uint64) + np.uint64(1)) * _GOLDEN)

    def uniform(self, purpose: int, source: int, t: int) -> np.ndarray:
        tag = np.uint64(((purpose & 0xFF) << 24) | (source & 0xFFFFFF))
        with np.errstate(over="ignore"):
            z = _mix64(self._keys ^ _mix64(np.array([tag], dtype=np.uint64) * _GOLDEN))
            z = _mix64(z + np.uint64(t + 1) * _GOLDEN)
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass
class BatchState:
    """(R, n_sources) arrays of query flags, transmitter ages and monitor ages."""

    r: np.ndarray
    theta: np.ndarray
    delta: np.ndarray

    def copy(self) -> "BatchState":
        return BatchState(self.r.copy(), self.theta.copy(), self.delta.copy())

    def cost(self) -> np.ndarray:
        return (self.r * self.delta).sum(axis=1)


@dataclass(frozen=True)
class StepOutcome:
    q: np.ndarray
    arrivals: np.ndarray
    next: BatchState


def advance(spec: SystemSpec, state: BatchState, action_ids: np.ndarray,
            u_arrival: np.ndarray, u_channel: np.ndarray, u_query: np.ndarray) -> StepOutcome:
    """One slot for every replication.

    ``u_arrival`` and ``u_query`` are (R, n_sources) uniforms, ``u_channel``
    is (R,). The channel draw only matters in slots with a transmission.
    """
    N = spec.N
    roles = spec.action_roles[action_ids]
    success = u_channel < spec.p
    r, th, de = state.r, state.theta, state.delta
    th1 = np.minimum(th + 1, N)
    de1 = np.minimum(de + 1, N)
    new_th = np.empty_like(th)
    new_de = np.empty_like(de)
    q = np.zeros_like(r)
    arrivals = np.zeros_like(r)
    for i, src in enumerate(spec.sources):
        code = roles[:, i]
        qi = (code != IDLE) & success
        q[:, i] = qi
        if src.is_random_arrival:
            arr = u_arrival[:, i] < src.mu
            arrivals[:, i] = arr
            new_th[:, i] = np.where(arr, 0, th1[:, i])
            new_de[:, i] = np.where(qi, th1[:, i], de1[:, i])
        else:
            sample = code == SAMPLE
            new_th[:, i] = np.where(sample, 1, th1[:, i])
            new_de[:, i] = np.where(qi, np.where(sample, 1, th1[:, i]), de1[:, i])
    rho = np.array([s.query.rho for s in spec.sources])
    rho_bar = np.array([s.query.rho_bar for s in spec.sources])
    new_r = np.where(r == 1, u_query < rho, u_query >= rho_bar).astype(r.dtype)
    return StepOutcome(q, arrivals, BatchState(new_r, new_th, new_de))


def step(spec: SystemSpec, state, a, rng: np.random.Generator) -> StepOutcome:
    """Single-replication step from a joint state (tuple of (r, theta, delta))."""
    arr = np.asarray(state, dtype=np.int64).reshape(1, spec.n_sources, 3)
    bs = BatchState(arr[..., 0], arr[..., 1], arr[..., 2])
    a_id = a if isinstance(a, (int, np.integer)) else spec.action_id(a)
    n = spec.n_sources
    return advance(spec, bs, np.array([a_id]), rng.random((1, n)), rng.random(1), rng.random((1, n)))


def step_many(spec: SystemSpec, state, a, draws: int, seed: int = 0) -> BatchState:
    """``draws`` independent one-slot successors of the same state (for kernel checks)."""
    arr = np.broadcast_to(np.asarray(state, dtype=np.int64).reshape(1, spec.n_sources, 3),
                          (draws, spec.n_sources, 3))
    bs = BatchState(arr[..., 0].copy(), arr[..., 1].copy(), arr[..., 2].copy())
    a_id = a if isinstance(a, (int, np.integer)) else spec.action_id(a)
    rng = StreamRng(seed, np.arange(draws))
    n = spec.n_sources
    u_arr = np.stack([rng.uniform(ARRIVAL, i, 0) for i in range(n)], axis=1)
    u_q = np.stack([rng.uniform(QUERY, i, 0) for i in range(n)], axis=1)
    out = advance(spec, bs, np.full(draws, a_id), u_arr, rng.uniform(CHANNEL, 0, 0), u_q)
    return out.next


# ---------------------------------------------------------------------------
# Policies


@dataclass
class SlotContext:
    t: int
    state: BatchState
    draw: Callable[[int, int], np.ndarray]
    running_tr: np.ndarray
    running_sm: np.ndarray


class SimPolicy(Protocol):
    def act(self, spec: SystemSpec, ctx: SlotContext) -> np.ndarray: ...


def _local_index(spec: SystemSpec, state: BatchState) -> np.ndarray:
    return source_index(spec.N, state.r, state.theta, state.delta)


def _sample_codes(f: np.ndarray, idx: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(f[idx], axis=1)
    k = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(k, f.shape[1] - 1)


def _action_table(spec: SystemSpec) -> np.ndarray:
    """(n_sources, 3) joint action id for each local code (-1 where invalid)."""
    table = np.full((spec.n_sources, 3), -1, dtype=np.int64)
    table[:, IDLE] = 0
    for k, a in enumerate(spec.actions):
        if a.kind is ActionKind.TRANSMIT or a.kind is ActionKind.RETRANSMIT:
            table[a.source, SEND] = k
        elif a.kind is ActionKind.SAMPLE_AND_TRANSMIT:
            table[a.source, SAMPLE] = k
    return table


def priorities(spec: SystemSpec, state: BatchState) -> np.ndarray:
    ra = np.array([s.is_random_arrival for s in spec.sources])
    return np.where(ra, state.r * (state.delta - state.theta), state.r * state.delta)


def _winner(spec: SystemSpec, state: BatchState, eligible: np.ndarray) -> np.ndarray:
    """Index of the highest-priority eligible source per row (ties: random arrival, then lowest index)."""
    n = spec.n_sources
    ra = np.array([s.is_random_arrival for s in spec.sources], dtype=np.int64)
    key = priorities(spec, state) * (2 * n) + ra * n + (n - 1 - np.arange(n))
    key = np.where(eligible, key, np.iinfo(np.int64).min)
    return key.argmax(axis=1)


class IdleSimPolicy:
    def act(self, spec, ctx):
        return np.zeros(len(ctx.state.r), dtype=np.int64)


class JointSimPolicy:
    def __init__(self, policy: RandomizedPolicy):
        self.policy = policy

    def act(self, spec, ctx):
        local = _local_index(spec, ctx.state)
        idx = np.zeros(len(local), dtype=np.int64)
        for i in range(spec.n_sources):
            idx = idx * spec.source_size + local[:, i]
        return _sample_codes(self.policy.f, idx, ctx.draw(POLICY, 0))


class TruncatedSimPolicy:
    def __init__(self, policy: TruncatedPolicy):
        self.policy = policy

    def sampled_codes(self, spec, ctx) -> np.ndarray:
        local = _local_index(spec, ctx.state)
        codes = np.empty_like(local)
        for i, ps in enumerate(self.policy.per_source):
            k = _sample_codes(ps.f, local[:, i], ctx.draw(POLICY, i))
            codes[:, i] = np.asarray(ps.actions)[k]
        return codes

    def act(self, spec, ctx):
        codes = self.sampled_codes(spec, ctx)
        active = codes != IDLE
        win = _winner(spec, ctx.state, active)
        rows = np.arange(len(codes))
        chosen = codes[rows, win]
        ids = _action_table(spec)[win, chosen]
        return np.where(active.any(axis=1), ids, 0)


class BaselineSimPolicy:
    """Greedy rule driven by the running discounted transmission and sampling averages."""

    def act(self, spec, ctx):
        R = len(ctx.state.r)
        win = _winner(spec, ctx.state, np.ones((R, spec.n_sources), dtype=bool))
        ra = np.array([s.is_random_arrival for s in spec.sources])[win]
        code = np.where(ra, SEND, np.where(ctx.running_sm <= spec.gamma_sm, SAMPLE, SEND))
        ids = _action_table(spec)[win, code]
        return np.where(ctx.running_tr <= spec.gamma_tr, ids, 0)


def baseline_action(spec: SystemSpec, state, running: tuple[float, float], t: int = 1):
    """Scalar form of the greedy baseline rule; ``state`` is a joint state tuple."""
    arr = np.asarray(state, dtype=np.int64).reshape(1, spec.n_sources, 3)
    ctx = SlotContext(t, BatchState(arr[..., 0], arr[..., 1], arr[..., 2]), None,
                      np.array([running[0]]), np.array([running[1]]))
    return spec.actions[int(BaselineSimPolicy().act(spec, ctx)[0])]


def as_sim_policy(policy) -> SimPolicy:
    if isinstance(policy, RandomizedPolicy):
        return JointSimPolicy(policy)
    if isinstance(policy, TruncatedPolicy):
        return TruncatedSimPolicy(policy)
    if policy == "idle":
        return IdleSimPolicy()
    if policy == "baseline":
        return BaselineSimPolicy()
    if hasattr(policy, "act"):
        return policy
    raise TypeError(f"cannot simulate {policy!r}")


# ---------------------------------------------------------------------------
# Runner


def horizon_for(spec: SystemSpec, tail_tolerance: float) -> int:
    """Slots needed so the discarded discounted tail is below ``tail_tolerance``."""
    bound = tail_tolerance * (1.0 - spec.lam) / (2 * spec.n_sources * spec.N)
    return max(1, math.ceil(math.log(bound) / math.log(spec.lam)))


def truncation_bias(spec: SystemSpec, horizon: int) -> float:
    """Upper bound on the QAoI mass lost by stopping after ``horizon`` slots."""
    return spec.lam ** horizon * spec.n_sources * spec.N


@dataclass(frozen=True)
class SimConfig:
    replications: int = 1000
    seed: int = 0
    horizon: int | None = None
    tail_tolerance: float = 1e-6
    max_horizon: int = 1_000_000
    record_traces: bool = False

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be positive")

    def horizon_for(self, spec: SystemSpec) -> int:
        if self.horizon is not None:
            return self.horizon
        return min(horizon_for(spec, self.tail_tolerance), self.max_horizon)


def _ci95(x: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    return float(1.959963984540054 * x.std(ddof=1) / math.sqrt(len(x)))


@dataclass(frozen=True)
class SimMetrics:
    qaoi: np.ndarray
    tr: np.ndarray
    sm: np.ndarray
    horizon: int
    bias_bound: float
    traces: list | None = field(default=None, repr=False)

    @property
    def qaoi_mean(self) -> float:
        return float(self.qaoi.mean())

    @property
    def qaoi_ci95(self) -> float:
        return _ci95(self.qaoi)

    @property
    def tr_mean(self) -> float:
        return float(self.tr.mean())

    @property
    def tr_ci95(self) -> float:
        return _ci95(self.tr)

    @property
    def sm_mean(self) -> float:
        return float(self.sm.mean())

    @property
    def sm_ci95(self) -> float:
        return _ci95(self.sm)

    def summary(self) -> dict:
        return {
            "qaoi_mean": self.qaoi_mean, "qaoi_ci95": self.qaoi_ci95,
            "tr_mean": self.tr_mean, "tr_ci95": self.tr_ci95,
            "sm_mean": self.sm_mean, "sm_ci95": self.sm_ci95,
            "replications": len(self.qaoi), "horizon": self.horizon,
            "bias_bound": self.bias_bound,
        }


def initial_batch(spec: SystemSpec, rng: StreamRng, R: int) -> BatchState:
    """Zero ages; query flags drawn from each chain's steady state."""
    n = spec.n_sources
    r = np.empty((R, n), dtype=np.int64)
    for i, src in enumerate(spec.sources):
        r[:, i] = rng.uniform(QUERY, i, -1) < query_steady_state(src.query)
    zeros = np.zeros((R, n), dtype=np.int64)
    return BatchState(r, zeros, zeros.copy())


def run(policy, spec: SystemSpec, config: SimConfig) -> SimMetrics:
    """Discounted QAoI, transmission and sampling averages of ``policy``.

    Slot 0 starts from zero ages and moves to slot 1 with no transmission;
    costs and actions are counted for slots ``1..horizon`` with weight
    ``(1 - lam) lam^(t-1)``.
    """
    sim = as_sim_policy(policy)
    R, T, n = config.replications, config.horizon_for(spec), spec.n_sources
    rng = StreamRng(config.seed, np.arange(R))
    state = initial_batch(spec, rng, R)

    def draws(t):
        u_arr = np.stack([rng.uniform(ARRIVAL, i, t) for i in range(n)], axis=1)
        u_q = np.stack([rng.uniform(QUERY, i, t) for i in range(n)], axis=1)
        return u_arr, rng.uniform(CHANNEL, 0, t), u_q

    state = advance(spec, state, np.zeros(R, dtype=np.int64), *draws(0)).next
    qaoi = np.zeros(R)
    tr = np.zeros(R)
    sm = np.zeros(R)
    d_tr = np.array([a.kind is not ActionKind.IDLE for a in spec.actions], dtype=float)
    d_sm = np.array([a.kind is ActionKind.SAMPLE_AND_TRANSMIT for a in spec.actions], dtype=float)
    traces = [] if config.record_traces else None
    w = spec.lam_bar
    for t in range(1, T + 1):
        cost = state.cost()
        qaoi += w * cost
        ctx = SlotContext(t, state, lambda purpose, i, t=t: rng.uniform(purpose, i, t), tr, sm)
        a = sim.act(spec, ctx)
        tr = tr + w * d_tr[a]
        sm = sm + w * d_sm[a]
        out = advance(spec, state, a, *draws(t))
        if traces is not None:
            traces.append((t, state, a, out.q, cost))
        state = out.next
        w *= spec.lam
    return SimMetrics(qaoi, tr, sm, T, truncation_bias(spec, T), traces)


def write_traces(spec: SystemSpec, metrics: SimMetrics, path) -> None:
    """One CSV row per (replication, slot)."""
    if metrics.traces is None:
        raise ValueError("simulation was run without record_traces")
    n = spec.n_sources
    header = ["replication", "t"]
    for i in range(n):
        header += [f"r{i}", f"theta{i}", f"delta{i}"]
    header += ["action"] + [f"q{i}" for i in range(n)] + ["cost"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        R = len(metrics.qaoi)
        for rep in range(R):
            for t, st, a, q, cost in metrics.traces:
                row = [rep, t]
                for i in range(n):
                    row += [int(st.r[rep, i]), int(st.theta[rep, i]), int(st.delta[rep, i])]
                row += [str(spec.actions[int(a[rep])])] + [int(v) for v in q[rep]] + [int(cost[rep])]
                w.writerow(row)
