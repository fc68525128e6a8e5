import math

import numpy as np
import pytest

from conftest import always_query_spec, two_source_spec
from qaoi.model import Action, ActionKind, SourceState
from qaoi.occupancy import evaluate_policy_exact, idle_policy, solve_joint
from qaoi.simulator import (
    SimConfig, StreamRng, baseline_action, horizon_for, run, step, step_many,
    truncation_bias, write_traces,
)
from qaoi.weakly_coupled import solve_decomposed


def test_idle_closed_form_zero_variance():
    spec = always_query_spec()
    m = run("idle", spec, SimConfig(replications=50, seed=1, tail_tolerance=1e-13))
    assert m.qaoi_mean == pytest.approx(3.0, abs=1e-12)
    assert m.qaoi_ci95 < 1e-12
    # the joint policy object gives the same path
    m2 = run(idle_policy(spec), spec, SimConfig(replications=5, seed=1, tail_tolerance=1e-13))
    np.testing.assert_array_equal(m.qaoi[:5], m2.qaoi)


def test_step_examples():
    spec = two_source_spec(p=1.0)
    rng = np.random.default_rng(0)
    s = (SourceState(1, 2, 4), SourceState(0, 3, 5))
    out = step(spec, s, Action(ActionKind.SAMPLE_AND_TRANSMIT, 1), rng)
    assert out.q[0].tolist() == [0, 1]
    assert (out.next.theta[0, 1], out.next.delta[0, 1]) == (1, 1)
    out = step(spec, s, Action(ActionKind.IDLE), rng)
    assert out.q[0].tolist() == [0, 0]
    assert out.next.delta[0].tolist() == [min(5, spec.N), min(6, spec.N)]


def test_reproducible_and_prefix_stable():
    spec = two_source_spec(N=3)
    cfg = SimConfig(replications=64, seed=7, horizon=60)
    a = run("baseline", spec, cfg)
    b = run("baseline", spec, cfg)
    np.testing.assert_array_equal(a.qaoi, b.qaoi)
    c = run("baseline", spec, SimConfig(replications=16, seed=7, horizon=60))
    np.testing.assert_array_equal(a.qaoi[:16], c.qaoi)
    d = run("baseline", spec, SimConfig(replications=16, seed=8, horizon=60))
    assert not np.array_equal(c.qaoi, d.qaoi)


def test_stream_uniforms_look_uniform():
    u = StreamRng(3, np.arange(200_000)).uniform(1, 0, 5)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.003
    assert abs(u.var() - 1 / 12) < 0.001


def test_baseline_rule_clauses():
    spec = two_source_spec()
    s = (SourceState(1, 0, 5), SourceState(1, 1, 2))  # source 0 wins (5 > 2)
    assert baseline_action(spec, s, (0.6, 0.0)) == Action(ActionKind.IDLE)
    assert baseline_action(spec, s, (0.1, 0.0)) == Action(ActionKind.TRANSMIT, 0)
    s = (SourceState(1, 3, 4), SourceState(1, 1, 6))  # source 1 wins (6 > 1)
    assert baseline_action(spec, s, (0.1, 0.1)) == Action(ActionKind.SAMPLE_AND_TRANSMIT, 1)
    assert baseline_action(spec, s, (0.1, 0.5)) == Action(ActionKind.RETRANSMIT, 1)


def test_horizon_and_bias():
    spec = two_source_spec(N=10, lam=0.99)
    T = horizon_for(spec, 1e-6)
    assert truncation_bias(spec, T) <= 1e-6
    assert T == math.ceil(math.log(1e-6 * 0.01 / (2 * 2 * 10)) / math.log(0.99))
    assert SimConfig(max_horizon=100).horizon_for(spec) == 100


def test_optimal_policy_simulates_to_its_value():
    spec = two_source_spec(N=3, lam=0.9)
    _, _, pol = solve_joint(spec)
    exact = evaluate_policy_exact(spec, pol)
    hits = 0
    for seed in range(5):
        m = run(pol, spec, SimConfig(replications=2000, seed=seed))
        hits += abs(m.qaoi_mean - exact[0]) <= 1.5 * m.qaoi_ci95
        assert m.tr_mean <= spec.gamma_tr + 2 * m.tr_ci95
    assert hits >= 4


def test_estimator_consistency_large_sample():
    spec = two_source_spec(N=2, lam=0.9)
    _, _, pol = solve_joint(spec)
    exact = evaluate_policy_exact(spec, pol)[0]
    m = run(pol, spec, SimConfig(replications=10_000, seed=11))
    assert abs(m.qaoi_mean - exact) <= 3 * m.qaoi_ci95


def test_traces_are_legal(tmp_path):
    spec = two_source_spec(N=3)
    _, tp, _ = solve_decomposed(spec)
    m = run(tp, spec, SimConfig(replications=3, seed=2, horizon=40, record_traces=True))
    assert len(m.traces) == 40
    for t, state, a, q, cost in m.traces:
        acts = [spec.actions[int(k)] for k in a]
        # at most one transmission per slot, so delivery flags are per active source only
        for act, qrow in zip(acts, q):
            active = {act.source} if act.kind is not ActionKind.IDLE else set()
            assert set(np.flatnonzero(qrow)) <= active
    path = tmp_path / "tr.csv"
    write_traces(spec, m, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "replication,t,r0,theta0,delta0,r1,theta1,delta1,action,q0,q1,cost"
    assert len(lines) == 1 + 3 * 40


def test_step_many_shape():
    spec = two_source_spec(N=3)
    out = step_many(spec, (SourceState(1, 1, 2), SourceState(0, 1, 1)), 1, 1000, seed=4)
    assert out.r.shape == (1000, 2)
    assert set(np.unique(out.delta[:, 1])) == {2}  # source 1 idles: delta 1 -> 2
