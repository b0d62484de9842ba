import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defectnas.arch_graph import infer_shapes, validate_graph
from defectnas.metaqnn import (
    DEFAULT_SCHEDULE,
    EpsilonSchedule,
    MetaQNNConfig,
    QTable,
    ReplayBuffer,
    SearchSpace,
    completed,
    conv_count_reward,
    epsilon_at,
    legal_actions,
    q_update,
    run_metaqnn_search,
    sample_architecture,
    start_state,
    transition,
)


def test_default_schedule_layout():
    s = EpsilonSchedule()
    assert s.total == 200
    expected = [1.0] * 100 + [e for e in (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3) for _ in range(10)] + [0.2] * 15 + [0.1] * 15
    assert [epsilon_at(s, i) for i in range(200)] == expected
    with pytest.raises(IndexError):
        epsilon_at(s, 200)


def test_schedule_validation():
    with pytest.raises(ValueError):
        EpsilonSchedule(((0.5, 3), (0.9, 3)))
    with pytest.raises(ValueError):
        EpsilonSchedule(((1.5, 3),))
    assert EpsilonSchedule(((1.0, 0), (0.5, 2))).total == 2
    assert DEFAULT_SCHEDULE[0] == (1.0, 100)


def _walk(space, actions):
    state = start_state(space)
    for a in actions:
        assert a in legal_actions(space, state), (a, state)
        state = transition(state, a)
    return state


def test_head_phase_allows_one_hidden_dense_then_classifier():
    space = SearchSpace(patch_size=64)
    state = _walk(space, [("conv", 3, 64, 1, 1)] * 3 + [("spp", 3)])
    assert {a[0] for a in legal_actions(space, state)} == {"fc", "classifier"}
    state = transition(state, ("fc", 128))
    assert legal_actions(space, state) == [("classifier",)]
    assert legal_actions(space, transition(state, ("classifier",))) == []


def test_spp_needs_minimum_depth_and_depth_is_capped():
    space = SearchSpace(patch_size=64)
    shallow = _walk(space, [("conv", 3, 64, 1, 1)] * 2)
    assert not any(a[0] == "spp" for a in legal_actions(space, shallow))
    deep = _walk(space, [("conv", 3, 64, 1, 1)] * 10)
    assert not any(a[0] == "conv" for a in legal_actions(space, deep))


def test_pending_skip_only_allows_padded_3x3():
    space = SearchSpace(patch_size=64)
    state = _walk(space, [("conv", 3, 64, 1, 1), ("skip",)])
    legal = legal_actions(space, state)
    assert legal and all(a[0] == "conv" and a[1] == 3 and a[3] == 1 and a[4] == 1 for a in legal)
    after = transition(state, legal[0])
    assert ("skip",) not in legal_actions(space, after)  # a skip cannot start on a skip's closing conv


def test_shrinking_convs_stop_before_spp_would_fail():
    space = SearchSpace(patch_size=16)
    state = _walk(space, [("conv", 5, 64, 1, 0)] * 3)  # 16 -> 4
    for a in legal_actions(space, state):
        if a[0] == "conv":
            assert transition(state, a).size >= min(space.spp_scales)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=60, deadline=None)
def test_sampled_architectures_are_valid(seed):
    space = SearchSpace()
    g, traj = sample_architecture(QTable(), 1.0, np.random.default_rng(seed), space)
    assert validate_graph(g) == []
    assert space.min_conv <= g.conv_count <= space.max_conv
    assert traj[-1].next_state.phase == "terminal"
    infer_shapes(g)


def test_terminal_update_by_hand():
    space = SearchSpace(patch_size=64)
    _, traj = sample_architecture(QTable(), 1.0, np.random.default_rng(0), space)
    q = q_update(QTable(), traj, 0.8)
    last = traj[-1]
    assert q.get(last.state, last.action) == pytest.approx(0.9 * 0.15 + 0.1 * 0.8, abs=1e-6)


def test_backward_sweep_uses_updated_successor():
    space = SearchSpace(patch_size=64)
    _, traj = sample_architecture(QTable(), 1.0, np.random.default_rng(1), space)
    q = q_update(QTable(), traj, 1.0)
    terminal = 0.9 * 0.15 + 0.1 * 1.0  # 0.235
    # second-to-last: its successor's legal Qs are q_init except the one just raised
    prev = traj[-2]
    expected = 0.9 * 0.15 + 0.1 * max(terminal, 0.15)
    assert q.get(prev.state, prev.action) == pytest.approx(expected, abs=1e-6)


def test_zero_reward_pulls_values_down():
    space = SearchSpace(patch_size=64)
    _, traj = sample_architecture(QTable(), 1.0, np.random.default_rng(2), space)
    q = q_update(QTable(), traj, 0.0)
    last = traj[-1]
    assert q.get(last.state, last.action) < 0.15


def test_rewards_must_be_unit_interval():
    with pytest.raises(ValueError):
        ReplayBuffer().add([], 1.5)
    with pytest.raises(ValueError):
        q_update(QTable(), [], -0.1)


def test_greedy_ties_go_to_canonical_order():
    space = SearchSpace(patch_size=64)
    state = start_state(space)
    legal = legal_actions(space, state)
    assert QTable().best(state, legal) == legal[0]


def _small_config(seed=0, steps=((1.0, 6), (0.1, 4))):
    space = SearchSpace(patch_size=32, min_conv=3, max_conv=5)
    return MetaQNNConfig(EpsilonSchedule(steps), space, replay=8, seed=seed)


def test_search_fills_every_slot_and_replays():
    cfg = _small_config()
    recs, q, buf = run_metaqnn_search(cfg, lambda g: conv_count_reward(g, cfg.space), clock=lambda: 0.0)
    assert [r["index"] for r in completed(recs)] == list(range(10))
    assert len(buf) == 10 and q.values
    assert {r["epsilon"] for r in recs} == {1.0, 0.1}


def test_early_stopped_architectures_do_not_consume_slots():
    cfg = _small_config(steps=((1.0, 4),))
    calls = []

    def evaluator(g):
        calls.append(g)
        return None if len(calls) % 2 else 0.5

    recs, _, buf = run_metaqnn_search(cfg, evaluator)
    assert len(buf) == 4 and len(recs) == 8
    assert [r["status"] for r in recs].count("early-stopped") == 4


def test_evaluator_errors_retry_and_give_up():
    cfg = _small_config(steps=((1.0, 1),))
    cfg.max_attempts = 3

    def boom(g):
        raise RuntimeError("bad")

    with pytest.raises(RuntimeError, match="no architecture completed"):
        run_metaqnn_search(cfg, boom)


def test_search_is_deterministic():
    cfg = _small_config(seed=7)
    reward = lambda g: conv_count_reward(g, cfg.space)  # noqa: E731
    a, _, _ = run_metaqnn_search(cfg, reward, clock=lambda: 0.0)
    b, _, _ = run_metaqnn_search(cfg, reward, clock=lambda: 0.0)
    assert a == b


def test_surrogate_reward_range():
    space = SearchSpace()
    for seed in range(20):
        g, _ = sample_architecture(QTable(), 1.0, np.random.default_rng(seed), space)
        assert 0.0 <= conv_count_reward(g, space) <= 1.0
