import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auctionlab.agent import (
    EXPLORATION_FLOOR,
    AgentParams,
    Exploration,
    ExplorationSchedule,
    QTable,
    boltzmann_probabilities,
    decay_exploration,
    floor_hitting_episode,
    init_agent,
    select_bid,
    update_async,
    update_sync,
)
from auctionlab.auction import PaymentRule, counterfactual_action_values, make_bid_grid
from auctionlab.exceptions import ConfigurationError, DomainError, InvariantViolation

GRID = make_bid_grid(6)


def table(values):
    return QTable(np.array(values, dtype=float))


def test_update_worked_example():
    q = table([[0.5, 0.0], [0.6, 0.1]])
    update_async(q, 0, 0, 0.4, 1, AgentParams(alpha=0.1, gamma=0.95))
    assert q.values[0, 0] == pytest.approx(0.547, abs=1e-12)
    assert q.values[1].tolist() == [0.6, 0.1]


def test_alpha_one_gamma_zero_collapses_to_reward():
    q = table([[0.3, 0.9], [0.7, 0.2]])
    update_async(q, 1, 0, 0.25, 0, AgentParams(alpha=1.0, gamma=0.0))
    assert q.values[1, 0] == 0.25


def test_alpha_zero_is_identity():
    q = table(np.random.default_rng(0).random((6, 6)))
    before = q.values.copy()
    update_async(q, 2, 3, 0.8, 5, AgentParams(alpha=0.0))
    assert np.array_equal(q.values, before)


def test_reward_out_of_range():
    with pytest.raises(DomainError):
        update_async(table([[0.0, 0.0]]), 0, 0, 1.5, 0, AgentParams())


def test_param_validation():
    with pytest.raises(ConfigurationError):
        AgentParams(alpha=1.2)
    with pytest.raises(ConfigurationError):
        AgentParams(gamma=1.0)
    with pytest.raises(ConfigurationError):
        AgentParams(decay=0.0)
    assert AgentParams(gamma=0.95).q_upper_bound == pytest.approx(20.0)


def test_init_shapes_and_draw_order():
    q, sched = init_agent(AgentParams(feedback=True), 6, np.random.default_rng(4))
    assert q.values.shape == (6, 6)
    assert sched.param == 1.0 and sched.kind is Exploration.BOLTZMANN
    flat = np.random.default_rng(4).random(36)
    assert np.array_equal(q.values.ravel(), flat)
    q1, sched1 = init_agent(AgentParams(feedback=False, egreedy=True), 11, np.random.default_rng(4))
    assert q1.values.shape == (1, 11)
    assert sched1.kind is Exploration.EPSILON_GREEDY


def test_boltzmann_equal_values_uniform():
    p = boltzmann_probabilities([0.3, 0.3, 0.3], 0.5)
    assert p == pytest.approx([1 / 3] * 3, abs=1e-15)


def test_boltzmann_two_actions():
    p = boltzmann_probabilities([1.0, 0.0], 1.0)
    assert p[0] == pytest.approx(np.e / (np.e + 1), abs=1e-15)


def test_boltzmann_extreme_values_finite():
    p = boltzmann_probabilities([1e6, 0.0, -1e6], 0.01)
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_boltzmann_selection_frequencies():
    q = table([[1.0, 0.0, 0.5]])
    sched = ExplorationSchedule(Exploration.BOLTZMANN, param=0.5)
    rng = np.random.default_rng(8)
    n = 200_000
    counts = np.bincount([select_bid(q, 0, sched, rng) for _ in range(n)], minlength=3)
    p = boltzmann_probabilities(q.values[0], 0.5)
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(counts / n - p) < 4 * se)


def test_boltzmann_consumes_one_draw():
    a, b = np.random.default_rng(2), np.random.default_rng(2)
    select_bid(table([[0.1, 0.2]]), 0, ExplorationSchedule(Exploration.BOLTZMANN), a)
    b.random()
    assert a.random() == b.random()


def test_egreedy_draw_count():
    q = table([[0.1, 0.9]])
    exploit = ExplorationSchedule(Exploration.EPSILON_GREEDY, param=0.0)
    a, b = np.random.default_rng(2), np.random.default_rng(2)
    assert select_bid(q, 0, exploit, a) == 1
    b.random()
    assert a.random() == b.random()
    explore = ExplorationSchedule(Exploration.EPSILON_GREEDY, param=1.0)
    a, b = np.random.default_rng(2), np.random.default_rng(2)
    select_bid(q, 0, explore, a)
    b.random(2)
    assert a.random() == b.random()


def test_egreedy_tie_picks_lowest_index():
    sched = ExplorationSchedule(Exploration.EPSILON_GREEDY, param=0.0)
    assert select_bid(table([[0.2, 0.7, 0.7]]), 0, sched, np.random.default_rng(0)) == 1


def test_select_rejects_nan_and_bad_state():
    sched = ExplorationSchedule(Exploration.BOLTZMANN)
    with pytest.raises(InvariantViolation):
        select_bid(table([[np.nan, 0.0]]), 0, sched, np.random.default_rng(0))
    with pytest.raises(DomainError):
        select_bid(table([[0.0, 0.0]]), 3, sched, np.random.default_rng(0))


def test_decay_schedule_and_floor():
    sched = ExplorationSchedule(Exploration.BOLTZMANN, decay=0.5)
    sched = decay_exploration(sched)
    assert sched.param == 0.5
    for _ in range(20):
        sched = decay_exploration(sched)
    assert sched.param == EXPLORATION_FLOOR and sched.at_floor


@pytest.mark.parametrize("decay", [0.9999, 0.99995, 0.99])
def test_floor_hitting_episode_matches_loop(decay):
    p, t = 1.0, 0
    while p > EXPLORATION_FLOOR:
        p *= decay
        t += 1
    # compounding error can shift the boundary by one episode at most
    assert abs(floor_hitting_episode(decay) - t) <= 1


def test_floor_hitting_known_values():
    assert floor_hitting_episode(0.9999) == 46_050
    assert floor_hitting_episode(0.99995) == 92_102
    with pytest.raises(ConfigurationError):
        floor_hitting_episode(1.0)


def test_sync_update_matches_hand_targets():
    rng = np.random.default_rng(11)
    params = AgentParams(alpha=0.3, gamma=0.9, asynchronous=False)
    q = QTable(rng.random((6, 6)))
    before = q.values.copy()
    rivals = [0.4, 0.2]
    cfs = counterfactual_action_values(PaymentRule.FIRST_PRICE, GRID, rivals)
    update_sync(q, 2, cfs, params, GRID)
    for a, b in enumerate(GRID.levels):
        nxt = GRID.index_of(max(b, 0.4))
        want = 0.7 * before[2, a] + 0.3 * (cfs[a].expected_reward + 0.9 * before[nxt].max())
        assert q.values[2, a] == pytest.approx(want, abs=1e-15)
    assert np.array_equal(np.delete(q.values, 2, axis=0), np.delete(before, 2, axis=0))


def test_sync_played_cell_agrees_with_async_without_ties():
    rng = np.random.default_rng(5)
    params = AgentParams(alpha=0.2, gamma=0.95)
    start = rng.random((6, 6))
    rivals = [0.4, 0.2]
    cfs = counterfactual_action_values(PaymentRule.SECOND_PRICE, GRID, rivals)
    qa, qs = QTable(start.copy()), QTable(start.copy())
    a = 4  # bid 0.8 wins outright and pays 0.4
    update_async(qa, 1, a, 0.6, GRID.index_of(0.8), params)
    update_sync(qs, 1, cfs, params, GRID)
    assert qs.values[1, a] == pytest.approx(qa.values[1, a], abs=1e-15)


def test_sync_without_feedback_uses_singleton_state():
    params = AgentParams(feedback=False, alpha=0.5, gamma=0.5)
    q = QTable(np.zeros((1, 6)))
    cfs = counterfactual_action_values(PaymentRule.FIRST_PRICE, GRID, [0.6])
    update_sync(q, 0, cfs, params, GRID)
    assert q.values[0].tolist() == pytest.approx([0.5 * c.expected_reward for c in cfs])


def test_sync_length_mismatch():
    cfs = counterfactual_action_values(PaymentRule.FIRST_PRICE, GRID, [0.6])
    with pytest.raises(DomainError):
        update_sync(QTable(np.zeros((6, 5))), 0, cfs, AgentParams(), GRID)


def test_two_sync_agents_reach_mutual_best_response():
    # myopic sync learners in a 3-level second-price auction: bidding 1 is
    # weakly dominant, and repeated counterfactual updates find it
    grid = make_bid_grid(3)
    params = AgentParams(alpha=0.5, gamma=0.0, asynchronous=False, feedback=False)
    qs = [QTable(np.zeros((1, 3))), QTable(np.zeros((1, 3)))]
    for _ in range(60):
        acts = [q.greedy_action(0) for q in qs]
        for i, q in enumerate(qs):
            rival = grid.levels[acts[1 - i]]
            update_sync(q, 0, counterfactual_action_values(PaymentRule.SECOND_PRICE, grid, [rival]), params, grid)
    acts = [q.greedy_action(0) for q in qs]
    assert acts == [2, 2]


def test_q_table_csv(tmp_path):
    q = table([[0.1, 0.2], [0.3, 0.4]])
    path = tmp_path / "q.csv"
    q.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["state", "action", "value"]
    assert rows[4] == ["1", "1", "0.4"]


@settings(max_examples=100, deadline=None)
@given(
    alpha=st.floats(0, 1),
    gamma=st.floats(0, 0.99),
    seed=st.integers(0, 2**32 - 1),
)
def test_random_updates_stay_bounded(alpha, gamma, seed):
    rng = np.random.default_rng(seed)
    params = AgentParams(alpha=alpha, gamma=gamma)
    q = QTable(rng.random((6, 6)))
    for _ in range(300):
        s, a, s2 = rng.integers(0, 6, size=3)
        update_async(q, s, a, float(rng.random()), s2, params)
    assert q.values.min() >= 0.0
    assert q.values.max() <= params.q_upper_bound + 1e-12


@settings(max_examples=200, deadline=None)
@given(
    row=st.lists(st.floats(-50, 50), min_size=2, max_size=11),
    beta=st.floats(0.01, 10),
    shift=st.floats(-100, 100),
)
def test_boltzmann_normalized_and_shift_invariant(row, beta, shift):
    p = boltzmann_probabilities(row, beta)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)
    p2 = boltzmann_probabilities(np.asarray(row) + shift, beta)
    assert np.allclose(p, p2, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(decay=st.floats(0.5, 0.99999), steps=st.integers(0, 2000))
def test_schedule_monotone_and_floored(decay, steps):
    sched = ExplorationSchedule(Exploration.EPSILON_GREEDY, decay=decay)
    prev = sched.param
    for _ in range(steps):
        sched = decay_exploration(sched)
        assert EXPLORATION_FLOOR <= sched.param <= prev
        prev = sched.param
