"""System instance, CMDP state/action spaces, transition kernels and costs.

Per-source local actions share one integer code across source kinds::

    0  idle
    1  send the buffered packet (transmit for random-arrival sources,
       retransmit for generate-at-will sources)
    2  take a new sample and send it (generate-at-will only)

A joint action activates at most one source, so a joint action id maps to a
row of local codes with at most one nonzero entry.

Slot convention: ``initial_distribution`` is the state at slot 0 (all ages
zero). Decisions and costs start at slot 1; the slot 0 -> 1 move is an idle
step (see :func:`first_slot_distribution`).
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

IDLE, SEND, SAMPLE = 0, 1, 2

DEFAULT_STATE_LIMIT = 1_000_000


class StateSpaceTooLarge(ValueError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"state space has {size} states, limit is {limit}")
        self.size = size
        self.limit = limit


class DegenerateQueryChain(ValueError):
    pass


@dataclass(frozen=True)
class QueryChain:
    """Two-state Markov chain driving a source's query flag.

    ``rho`` is the self-transition probability of state 1 (query on),
    ``rho_bar`` that of state 0.
    """

    rho: float
    rho_bar: float

    def __post_init__(self):
        for name in ("rho", "rho_bar"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")


class SourceKind(enum.Enum):
    RANDOM_ARRIVAL = "random_arrival"
    GENERATE_AT_WILL = "generate_at_will"


@dataclass(frozen=True)
class SourceSpec:
    kind: SourceKind
    query: QueryChain
    mu: float | None = None

    def __post_init__(self):
        if self.kind is SourceKind.RANDOM_ARRIVAL:
            if self.mu is None or not 0.0 < self.mu <= 1.0:
                raise ValueError(f"random-arrival source needs 0 < mu <= 1, got {self.mu}")
        elif self.mu is not None:
            raise ValueError("generate-at-will source takes no arrival rate")

    @classmethod
    def random_arrival(cls, mu: float, rho: float, rho_bar: float) -> "SourceSpec":
        return cls(SourceKind.RANDOM_ARRIVAL, QueryChain(rho, rho_bar), mu)

    @classmethod
    def generate_at_will(cls, rho: float, rho_bar: float) -> "SourceSpec":
        return cls(SourceKind.GENERATE_AT_WILL, QueryChain(rho, rho_bar))

    @property
    def is_random_arrival(self) -> bool:
        return self.kind is SourceKind.RANDOM_ARRIVAL

    @property
    def local_actions(self) -> tuple[int, ...]:
        return (IDLE, SEND) if self.is_random_arrival else (IDLE, SEND, SAMPLE)


class ActionKind(enum.Enum):
    IDLE = "idle"
    TRANSMIT = "transmit"
    RETRANSMIT = "retransmit"
    SAMPLE_AND_TRANSMIT = "sample_and_transmit"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    source: int | None = None

    def __str__(self):
        if self.kind is ActionKind.IDLE:
            return "idle"
        return f"{self.kind.value}({self.source})"


IDLE_ACTION = Action(ActionKind.IDLE)


def tr_cost(a: Action) -> int:
    return int(a.kind is not ActionKind.IDLE)


def sm_cost(a: Action) -> int:
    return int(a.kind is ActionKind.SAMPLE_AND_TRANSMIT)


@dataclass(frozen=True)
class SystemSpec:
    """A heterogeneous status-update system.

    Attributes:
        sources: ordered sources; index i in actions and states refers here.
        p: per-slot probability that a transmission is received.
        N: age cap; all ages live in ``{0..N}``.
        lam: discount factor in (0, 1).
        gamma_tr: budget on the discounted average number of transmissions.
        gamma_sm: budget on the discounted average number of new samples.
    """

    sources: tuple[SourceSpec, ...]
    p: float
    N: int
    lam: float
    gamma_tr: float
    gamma_sm: float

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ValueError("need at least one source")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p={self.p} outside (0, 1]")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N={self.N} must be a positive integer")
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda={self.lam} outside (0, 1)")
        for name in ("gamma_tr", "gamma_sm"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} outside (0, 1]")

    @property
    def lam_bar(self) -> float:
        return 1.0 - self.lam

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def source_size(self) -> int:
        """Number of states of a single source, ``2 (N+1)^2``."""
        return 2 * (self.N + 1) ** 2

    @property
    def joint_size(self) -> int:
        return self.source_size ** self.n_sources

    @cached_property
    def actions(self) -> tuple[Action, ...]:
        """Joint actions: idle first, then each source's non-idle actions in source order."""
        acts = [IDLE_ACTION]
        for i, src in enumerate(self.sources):
            if src.is_random_arrival:
                acts.append(Action(ActionKind.TRANSMIT, i))
            else:
                acts.append(Action(ActionKind.RETRANSMIT, i))
                acts.append(Action(ActionKind.SAMPLE_AND_TRANSMIT, i))
        return tuple(acts)

    @cached_property
    def action_roles(self) -> np.ndarray:
        """(n_actions, n_sources) table of local action codes."""
        roles = np.zeros((len(self.actions), self.n_sources), dtype=np.int64)
        for k, a in enumerate(self.actions):
            if a.kind is not ActionKind.IDLE:
                roles[k, a.source] = local_code(a)
        return roles

    def action_id(self, a: Action) -> int:
        return self.actions.index(a)

    def with_(self, **changes) -> "SystemSpec":
        fields_ = {
            "sources": self.sources, "p": self.p, "N": self.N, "lam": self.lam,
            "gamma_tr": self.gamma_tr, "gamma_sm": self.gamma_sm,
        }
        fields_.update(changes)
        return SystemSpec(**fields_)

    def to_dict(self) -> dict:
        return {
            "sources": [
                {"kind": s.kind.value, "mu": s.mu, "rho": s.query.rho, "rho_bar": s.query.rho_bar}
                for s in self.sources
            ],
            "p": self.p, "N": self.N, "lambda": self.lam,
            "gamma_tr": self.gamma_tr, "gamma_sm": self.gamma_sm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        sources = []
        for s in d["sources"]:
            kind = SourceKind(s["kind"])
            if kind is SourceKind.RANDOM_ARRIVAL:
                sources.append(SourceSpec.random_arrival(s["mu"], s["rho"], s["rho_bar"]))
            else:
                sources.append(SourceSpec.generate_at_will(s["rho"], s["rho_bar"]))
        return cls(tuple(sources), p=d["p"], N=int(d["N"]), lam=d["lambda"],
                   gamma_tr=d["gamma_tr"], gamma_sm=d["gamma_sm"])

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def local_code(a: Action) -> int:
    return {
        ActionKind.IDLE: IDLE,
        ActionKind.TRANSMIT: SEND,
        ActionKind.RETRANSMIT: SEND,
        ActionKind.SAMPLE_AND_TRANSMIT: SAMPLE,
    }[a.kind]


class SourceState(NamedTuple):
    r: int
    theta: int
    delta: int


JointState = tuple  # tuple[SourceState, ...], one entry per source


# ---------------------------------------------------------------------------
# Scalar kernels


def clamp_age(v: int, N: int) -> int:
    if v < 0:
        raise ValueError(f"age {v} is negative")
    return min(v, N)


def query_transition(chain: QueryChain, r: int) -> dict[int, float]:
    if r == 1:
        dist = {1: chain.rho, 0: 1.0 - chain.rho}
    elif r == 0:
        dist = {0: chain.rho_bar, 1: 1.0 - chain.rho_bar}
    else:
        raise ValueError(f"query flag must be 0 or 1, got {r}")
    return {k: v for k, v in dist.items() if v > 0.0}


def query_steady_state(chain: QueryChain) -> float:
    """Stationary probability of the query-on state."""
    if chain.rho == 1.0 and chain.rho_bar == 1.0:
        raise DegenerateQueryChain("rho = rho_bar = 1 has no unique steady state")
    return (1.0 - chain.rho_bar) / (2.0 - chain.rho - chain.rho_bar)


def age_transition(src: SourceSpec, p: float, N: int, theta: int, delta: int,
                   code: int) -> list[tuple[int, int, float]]:
    """Branches ``(theta', delta', prob)`` of one source's age pair.

    Duplicate age pairs (from clamping) are not merged here.
    """
    th1 = min(theta + 1, N)
    de1 = min(delta + 1, N)
    if src.is_random_arrival:
        mu = src.mu
        mu_bar = 1.0 - mu
        if code == IDLE:
            return [(0, de1, mu), (th1, de1, mu_bar)]
        if code == SEND:
            return [
                (0, th1, mu * p),
                (0, de1, mu * (1.0 - p)),
                (th1, th1, mu_bar * p),
                (th1, de1, mu_bar * (1.0 - p)),
            ]
        raise ValueError("random-arrival source cannot be sampled")
    if code == IDLE:
        return [(th1, de1, 1.0)]
    if code == SEND:
        return [(th1, th1, p), (th1, de1, 1.0 - p)]
    if code == SAMPLE:
        return [(1, 1, p), (1, de1, 1.0 - p)]
    raise ValueError(f"unknown local action code {code}")


def source_transition(src: SourceSpec, p: float, N: int, state: SourceState,
                      code: int) -> dict[SourceState, float]:
    """Sparse next-state distribution of one source under local action ``code``."""
    out: dict[SourceState, float] = {}
    for r_next, pq in query_transition(src.query, state.r).items():
        for th, de, pa in age_transition(src, p, N, state.theta, state.delta, code):
            if pa == 0.0:
                continue
            key = SourceState(r_next, th, de)
            out[key] = out.get(key, 0.0) + pq * pa
    return out


def joint_transition(spec: SystemSpec, s: Sequence[SourceState], a: Action | int
                     ) -> dict[tuple[SourceState, ...], float]:
    a_id = a if isinstance(a, int) else spec.action_id(a)
    roles = spec.action_roles[a_id]
    dist: dict[tuple, float] = {(): 1.0}
    for i, src in enumerate(spec.sources):
        part = source_transition(src, spec.p, spec.N, SourceState(*s[i]), int(roles[i]))
        dist = {prefix + (ns,): w * q for prefix, w in dist.items() for ns, q in part.items()}
    return dist


def qaoi_cost(s: Sequence[SourceState]) -> int:
    return sum(st[0] * st[2] for st in s)


def priority(src: SourceSpec, state: SourceState) -> float:
    """Truncation priority: queried age gap for random-arrival sources, queried age otherwise."""
    r, theta, delta = state
    if src.is_random_arrival:
        return r * (delta - theta)
    return r * delta


# ---------------------------------------------------------------------------
# Enumeration


def source_index(N: int, r, theta, delta):
    return (r * (N + 1) + theta) * (N + 1) + delta


def source_states(N: int) -> np.ndarray:
    """(2(N+1)^2, 3) array of (r, theta, delta), lexicographic."""
    r, th, de = np.meshgrid(np.arange(2), np.arange(N + 1), np.arange(N + 1), indexing="ij")
    return np.stack([r.ravel(), th.ravel(), de.ravel()], axis=1)


@dataclass(frozen=True)
class StateSpace:
    """Dense lexicographic enumeration of joint states (source 0 outermost)."""

    N: int
    n_sources: int
    local: np.ndarray = field(repr=False)

    @property
    def source_size(self) -> int:
        return len(self.local)

    def __len__(self) -> int:
        return self.source_size ** self.n_sources

    def digits(self, idx) -> np.ndarray:
        """Per-source local indices of joint index (or array of indices)."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty(idx.shape + (self.n_sources,), dtype=np.int64)
        rem = idx.copy()
        for i in reversed(range(self.n_sources)):
            out[..., i] = rem % self.source_size
            rem //= self.source_size
        return out

    def compose(self, digits) -> np.ndarray:
        digits = np.asarray(digits, dtype=np.int64)
        idx = np.zeros(digits.shape[:-1], dtype=np.int64)
        for i in range(self.n_sources):
            idx = idx * self.source_size + digits[..., i]
        return idx

    def state(self, k: int) -> tuple[SourceState, ...]:
        return tuple(SourceState(*map(int, self.local[d])) for d in self.digits(k))

    def index_of(self, s: Sequence[SourceState]) -> int:
        n = self.N
        return int(self.compose([source_index(n, *st) for st in s]))

    @property
    def states(self):
        return (self.state(k) for k in range(len(self)))

    def fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(|S|, n_sources) arrays of r, theta, delta for every joint state."""
        d = self.digits(np.arange(len(self)))
        loc = self.local[d]
        return loc[..., 0], loc[..., 1], loc[..., 2]


def enumerate_states(spec: SystemSpec, limit: int = DEFAULT_STATE_LIMIT) -> StateSpace:
    size = spec.joint_size
    if size > limit:
        raise StateSpaceTooLarge(size, limit)
    return StateSpace(spec.N, spec.n_sources, source_states(spec.N))


def initial_distribution(spec: SystemSpec) -> np.ndarray:
    """Slot-0 distribution: zero ages, independent steady-state query flags."""
    space = enumerate_states(spec, limit=max(spec.joint_size, DEFAULT_STATE_LIMIT))
    eta = np.zeros(len(space))
    marg = [query_steady_state(src.query) for src in spec.sources]
    for flags in np.ndindex(*(2,) * spec.n_sources):
        w = math.prod(m if f else 1.0 - m for f, m in zip(flags, marg))
        if w > 0.0:
            eta[space.index_of([SourceState(f, 0, 0) for f in flags])] += w
    return eta


def source_initial_distribution(src: SourceSpec, N: int) -> np.ndarray:
    eta = np.zeros(2 * (N + 1) ** 2)
    on = query_steady_state(src.query)
    eta[source_index(N, 1, 0, 0)] = on
    eta[source_index(N, 0, 0, 0)] = 1.0 - on
    return eta


# ---------------------------------------------------------------------------
# Vectorised kernels


@dataclass(frozen=True)
class SourceKernel:
    """Padded branch table of one source under one local action.

    ``nxt[s, k]`` is the k-th successor of local state s and ``prob[s, k]``
    its probability; rows sum to 1. Zero-probability branches may remain.
    """

    nxt: np.ndarray
    prob: np.ndarray


def source_kernel(src: SourceSpec, p: float, N: int, code: int) -> SourceKernel:
    st = source_states(N)
    r, th, de = st[:, 0], st[:, 1], st[:, 2]
    n = len(st)
    # symbolic branch probabilities: a dummy state gives the branch weights,
    # which do not depend on the ages
    branches = age_transition(src, p, N, 0, 0, code)
    weights = [b[2] for b in branches]
    th1 = np.minimum(th + 1, N)
    de1 = np.minimum(de + 1, N)
    zero = np.zeros_like(th)
    one = np.ones_like(th)
    if src.is_random_arrival:
        ages = {
            IDLE: [(zero, de1), (th1, de1)],
            SEND: [(zero, th1), (zero, de1), (th1, th1), (th1, de1)],
        }[code]
    else:
        ages = {
            IDLE: [(th1, de1)],
            SEND: [(th1, th1), (th1, de1)],
            SAMPLE: [(one, one), (one, de1)],
        }[code]
    rho, rho_bar = src.query.rho, src.query.rho_bar
    # P(r' = 1 | r), P(r' = 0 | r)
    p_on = np.where(r == 1, rho, 1.0 - rho_bar)
    p_off = np.where(r == 1, 1.0 - rho, rho_bar)
    nxt = np.empty((n, 2 * len(ages)), dtype=np.int64)
    prob = np.empty((n, 2 * len(ages)))
    k = 0
    for rn, pq in ((1, p_on), (0, p_off)):
        for (t2, d2), w in zip(ages, weights):
            nxt[:, k] = source_index(N, rn, t2, d2)
            prob[:, k] = pq * w
            k += 1
    return SourceKernel(nxt, prob)


def source_kernels(spec: SystemSpec) -> list[dict[int, SourceKernel]]:
    return [
        {code: source_kernel(src, spec.p, spec.N, code) for code in src.local_actions}
        for src in spec.sources
    ]


def joint_kernel_block(spec: SystemSpec, action_id: int, states: np.ndarray,
                       kernels=None) -> tuple[np.ndarray, np.ndarray]:
    """Successor indices and probabilities of joint ``states`` under one action.

    Returns arrays of shape (len(states), K) with K the product of the
    per-source branch counts (at most 8 per source).
    """
    if kernels is None:
        kernels = source_kernels(spec)
    space = StateSpace(spec.N, spec.n_sources, source_states(spec.N))
    digits = space.digits(states)
    roles = spec.action_roles[action_id]
    m = len(states)
    nxt = np.zeros((m, 1), dtype=np.int64)
    prob = np.ones((m, 1))
    n = space.source_size
    for i in range(spec.n_sources):
        ker = kernels[i][int(roles[i])]
        ni = ker.nxt[digits[:, i]]
        pi = ker.prob[digits[:, i]]
        nxt = (nxt[:, :, None] * n + ni[:, None, :]).reshape(m, -1)
        prob = (prob[:, :, None] * pi[:, None, :]).reshape(m, -1)
    return nxt, prob


def first_slot_distribution(spec: SystemSpec, eta: np.ndarray) -> np.ndarray:
    """Push a slot-0 joint distribution one idle step forward to slot 1."""
    support = np.flatnonzero(eta)
    nxt, prob = joint_kernel_block(spec, 0, support)
    out = np.zeros_like(eta, dtype=float)
    np.add.at(out, nxt.ravel(), (prob * eta[support, None]).ravel())
    return out


def first_slot_source_distribution(src: SourceSpec, p: float, N: int,
                                   eta: np.ndarray) -> np.ndarray:
    ker = source_kernel(src, p, N, IDLE)
    support = np.flatnonzero(eta)
    out = np.zeros_like(eta, dtype=float)
    np.add.at(out, ker.nxt[support].ravel(), (ker.prob[support] * eta[support, None]).ravel())
    return out


def source_reachable(src: SourceSpec, p: float, N: int, start: np.ndarray) -> np.ndarray:
    """Boolean mask of local states reachable from ``start`` under any local actions."""
    n = 2 * (N + 1) ** 2
    kernels = [source_kernel(src, p, N, code) for code in src.local_actions]
    seen = np.zeros(n, dtype=bool)
    seen[np.asarray(start, dtype=np.int64)] = True
    frontier = seen.copy()
    while frontier.any():
        idx = np.flatnonzero(frontier)
        new = np.zeros(n, dtype=bool)
        for ker in kernels:
            new[ker.nxt[idx][ker.prob[idx] > 0.0]] = True
        frontier = new & ~seen
        seen |= new
    return seen


def reachable_states(spec: SystemSpec, eta1: np.ndarray) -> np.ndarray:
    """Sorted joint indices of a set closed under every action that contains supp(eta1).

    Built as the product of per-source reachable sets. Occupation mass is
    zero outside any such set, so LPs may be restricted to it exactly.
    """
    space = StateSpace(spec.N, spec.n_sources, source_states(spec.N))
    digits = space.digits(np.flatnonzero(eta1))
    masks = [
        source_reachable(src, spec.p, spec.N, np.unique(digits[:, i]))
        for i, src in enumerate(spec.sources)
    ]
    grids = np.meshgrid(*[np.flatnonzero(m) for m in masks], indexing="ij")
    return np.sort(space.compose(np.stack([g.ravel() for g in grids], axis=1)))
