"""Shared-weight search over a fixed seven-node DAG with a recurrent controller."""
from .controller import NUM_NODES, OPS, ControllerRnn, DecisionSequence, RewardBaseline, reinforce_step
from .search import EnasConfig, child_reward, derive_final, run_enas_search, train_shared_step
from .space import (
    FINAL_LADDER,
    SharedWeightBank,
    check_search_shapes,
    ladder,
    materialize,
    op_layer,
    shared_forward,
)
