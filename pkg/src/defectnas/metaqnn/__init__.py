"""Q-learning architecture search over sequentially chosen layers."""
from .search import (
    DEFAULT_SCHEDULE,
    EpsilonSchedule,
    MetaQNNConfig,
    QTable,
    ReplayBuffer,
    Step,
    completed,
    conv_count_reward,
    epsilon_at,
    q_update,
    run_metaqnn_search,
    sample_architecture,
)
from .space import SearchSpace, SearchState, build_graph, legal_actions, start_state, transition
