import numpy as np
import pytest

from conftest import two_source_spec
from qaoi.model import Action, ActionKind, SourceSpec, SourceState, SystemSpec
from qaoi.occupancy import solve_joint
from qaoi.weakly_coupled import (
    TIE_BREAK, build_decomposed_lp, extract_per_source_policies, per_source_masses,
    solve_decomposed, truncated_action, winner,
)


@pytest.mark.parametrize("gamma_tr", [0.2, 0.5, 0.9])
def test_lower_bound_below_joint(gamma_tr):
    spec = two_source_spec(N=3, gamma_tr=gamma_tr)
    _, _, lb = solve_decomposed(spec)
    opt = solve_joint(spec)[0].objective_value
    assert lb <= opt + 1e-9


def test_single_source_decomposition_is_exact():
    spec = SystemSpec((SourceSpec.generate_at_will(0.7, 0.4),), p=0.8, N=4, lam=0.9,
                      gamma_tr=0.4, gamma_sm=0.2)
    _, _, lb = solve_decomposed(spec)
    assert lb == pytest.approx(solve_joint(spec)[0].objective_value, rel=1e-9)


def test_backends_agree():
    spec = two_source_spec(N=3)
    a = solve_decomposed(spec, method="highs")[2]
    b = solve_decomposed(spec, method="decomposition")[2]
    assert a == pytest.approx(b, rel=1e-8)


def test_per_source_budgets_hold():
    spec = two_source_spec(N=3, gamma_tr=0.3, gamma_sm=0.1)
    dlp = build_decomposed_lp(spec, reachable_only=True)
    sol = solve_decomposed(spec)[0]
    xs = per_source_masses(dlp, sol.x)
    tr = sum(x[:, 1:].sum() for x in xs)
    sm = xs[1][:, 2].sum()
    assert tr <= 0.3 + 1e-9 and sm <= 0.1 + 1e-9
    for x in xs:
        assert x.sum() == pytest.approx(1.0, abs=1e-9)


def test_separate_sampling_rows_equal_shared_with_one_gaw():
    spec = two_source_spec(N=3)
    a = solve_decomposed(spec, shared_sampling=True)[2]
    b = solve_decomposed(spec, shared_sampling=False)[2]
    assert a == pytest.approx(b, rel=1e-9)


def test_fill_only_touches_unvisited_states():
    spec = two_source_spec(N=4)
    dlp = build_decomposed_lp(spec, reachable_only=True)
    sol = solve_decomposed(spec)[0]
    lag = extract_per_source_policies(dlp, sol, fill="lagrangian")
    idle = extract_per_source_policies(dlp, sol, fill="idle")
    for i, x in enumerate(per_source_masses(dlp, sol.x)):
        visited = x.sum(axis=1) > 1e-9 * x.sum()
        np.testing.assert_array_equal(lag[i].f[visited], idle[i].f[visited])
        np.testing.assert_allclose(lag[i].f.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        extract_per_source_policies(dlp, sol, fill="random")


def test_truncation_rule():
    spec = two_source_spec()
    state = (SourceState(1, 1, 4), SourceState(1, 2, 3))  # priorities 3 and 3
    assert winner(spec, state, [0, 1]) == 0  # tie goes to the random-arrival source
    state = (SourceState(1, 1, 3), SourceState(1, 2, 4))  # priorities 2 and 4
    assert truncated_action(spec, state, [1, 2]) == Action(ActionKind.SAMPLE_AND_TRANSMIT, 1)
    assert truncated_action(spec, state, [1, 0]) == Action(ActionKind.TRANSMIT, 0)
    assert truncated_action(spec, state, [0, 1]) == Action(ActionKind.RETRANSMIT, 1)
    assert truncated_action(spec, state, [0, 0]) == Action(ActionKind.IDLE)
    assert TIE_BREAK.startswith("random-arrival-first")


def test_tie_between_same_kind_goes_to_lowest_index():
    spec = SystemSpec((SourceSpec.generate_at_will(0.5, 0.5),) * 3, p=0.9, N=3, lam=0.9,
                      gamma_tr=0.5, gamma_sm=0.3)
    state = (SourceState(1, 0, 2), SourceState(1, 1, 3), SourceState(1, 0, 3))
    assert winner(spec, state, [0, 1, 2]) == 1
