"""Epsilon-greedy Q-learning over the layer-picking search space."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..arch_graph import infer_shapes, one_line
from .space import SearchSpace, build_graph, legal_actions, start_state, transition

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = ((1.0, 100), (0.9, 10), (0.8, 10), (0.7, 10), (0.6, 10), (0.5, 10), (0.4, 10),
                    (0.3, 10), (0.2, 15), (0.1, 15))


@dataclass(frozen=True)
class EpsilonSchedule:
    steps: tuple = DEFAULT_SCHEDULE  # (epsilon, architecture count) pairs

    def __post_init__(self):
        eps = [e for e, _ in self.steps]
        if any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon must be non-increasing")
        if any(n < 0 for _, n in self.steps) or any(not 0 <= e <= 1 for e in eps):
            raise ValueError("epsilon in [0, 1] and non-negative counts required")

    @property
    def total(self) -> int:
        return sum(n for _, n in self.steps)


def epsilon_at(schedule: EpsilonSchedule, index: int) -> float:
    if not 0 <= index < schedule.total:
        raise IndexError(f"architecture index {index} outside a schedule of {schedule.total}")
    for eps, n in schedule.steps:
        if index < n:
            return eps
        index -= n
    raise AssertionError("unreachable")


@dataclass
class QTable:
    alpha: float = 0.1
    gamma: float = 1.0
    q_init: float = 0.15
    values: dict = field(default_factory=dict)  # (state key, action) -> Q

    def get(self, state, action) -> float:
        return self.values.get((state.key, action), self.q_init)

    def set(self, state, action, value):
        self.values[(state.key, action)] = float(np.float32(value))

    def best(self, state, legal):
        """Greedy action; ties go to the earliest action in canonical order."""
        qs = [self.get(state, a) for a in legal]
        return legal[int(np.argmax(qs))]

    def max_q(self, state, legal) -> float:
        return max(self.get(state, a) for a in legal) if legal else 0.0


@dataclass
class Step:
    state: object
    action: tuple
    next_state: object
    next_legal: tuple


@dataclass
class ReplayBuffer:
    entries: list = field(default_factory=list)  # (trajectory, reward); append-only

    def add(self, trajectory, reward):
        if not 0.0 <= reward <= 1.0:
            raise ValueError("reward must lie in [0, 1]")
        self.entries.append((trajectory, reward))

    def __len__(self):
        return len(self.entries)


def sample_architecture(qtable: QTable, epsilon: float, rng, space: SearchSpace | None = None, actions=None):
    """Roll out one architecture; returns ``(graph, trajectory)``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    space = space or SearchSpace()
    actions = actions or space.actions()
    state = start_state(space)
    traj, taken = [], []
    legal = legal_actions(space, state, actions)
    while state.phase != "terminal":
        if rng.random() < epsilon:
            a = legal[int(rng.integers(len(legal)))]
        else:
            a = qtable.best(state, legal)
        nxt = transition(state, a)
        nxt_legal = legal_actions(space, nxt, actions)
        traj.append(Step(state, a, nxt, tuple(nxt_legal)))
        taken.append(a)
        state, legal = nxt, nxt_legal
    return build_graph(space, taken), traj


def q_update(qtable: QTable, trajectory, reward: float) -> QTable:
    """Backward sweep: terminal transition toward the reward, interior ones toward the best next Q."""
    if not 0.0 <= reward <= 1.0:
        raise ValueError("reward must lie in [0, 1]")
    a_, g_ = qtable.alpha, qtable.gamma
    for i in range(len(trajectory) - 1, -1, -1):
        st = trajectory[i]
        if st.next_state.phase == "terminal":
            target = reward
        else:
            target = g_ * qtable.max_q(st.next_state, list(st.next_legal))
        qtable.set(st.state, st.action, (1 - a_) * qtable.get(st.state, st.action) + a_ * target)
    return qtable


@dataclass
class MetaQNNConfig:
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    space: SearchSpace = field(default_factory=SearchSpace)
    alpha: float = 0.1
    gamma: float = 1.0
    q_init: float = 0.15
    replay: int = 64
    seed: int = 0
    max_attempts: int = 50  # samples per slot before giving up


def run_metaqnn_search(config: MetaQNNConfig, evaluator, on_record=None, clock=time.time):
    """Fill every schedule slot with an evaluated architecture.

    ``evaluator(graph)`` returns a reward in [0, 1], or ``None`` if the
    architecture was early-stopped; such an architecture is logged, gets no
    Q update and does not consume the slot.  An evaluator exception is logged
    and the slot is retried.  Returns ``(log records, qtable, buffer)``.
    """
    rng = np.random.default_rng(config.seed)
    q = QTable(config.alpha, config.gamma, config.q_init)
    buf = ReplayBuffer()
    actions = config.space.actions()
    records = []

    def emit(rec):
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    for index in range(config.schedule.total):
        eps = epsilon_at(config.schedule, index)
        for attempt in range(config.max_attempts):
            graph, traj = sample_architecture(q, eps, rng, config.space, actions)
            rep = infer_shapes(graph)
            rec = {"index": index, "attempt": attempt, "epsilon": eps, "params": rep.param_count,
                   "layers": rep.layer_count, "dsl": one_line(graph), "time": clock()}
            try:
                reward = evaluator(graph)
            except Exception as exc:  # noqa: BLE001 - any evaluator failure retries the slot
                log.error("slot %d: evaluator failed: %s", index, exc)
                emit({**rec, "status": "error", "reward": None, "error": str(exc)})
                continue
            if reward is None:
                emit({**rec, "status": "early-stopped", "reward": None})
                continue
            reward = float(reward)
            q_update(q, traj, reward)
            buf.add(traj, reward)
            picks = np.sort(rng.integers(len(buf), size=config.replay))
            for j in picks:  # fixed sorted order keeps the result independent of draw order
                t, r = buf.entries[j]
                q_update(q, t, r)
            emit({**rec, "status": "ok", "reward": reward})
            break
        else:
            raise RuntimeError(f"slot {index}: no architecture completed after {config.max_attempts} attempts")
    return records, q, buf


def conv_count_reward(graph, space: SearchSpace | None = None) -> float:
    """Surrogate reward: conv-layer count normalized to [0, 1] over the allowed depth range."""
    space = space or SearchSpace()
    return (graph.conv_count - space.min_conv) / (space.max_conv - space.min_conv)


def completed(records):
    return [r for r in records if r["status"] == "ok"]
