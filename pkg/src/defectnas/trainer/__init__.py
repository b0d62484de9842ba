"""Child training with warm-restart SGD, multi-target metrics, grid search."""
from .loop import (
    GRID_BATCHES,
    LR_RANGES,
    DataBundle,
    EpochRecord,
    GridCell,
    History,
    Split,
    TrainConfig,
    evaluate,
    format_grid_table,
    run_grid_search,
    select_best,
    train_child,
    with_schedule,
)
from .metrics import (
    CLASS_NAMES,
    EvalReport,
    binarize,
    evaluate_outputs,
    moving_average,
    multi_target_accuracy,
    per_class_accuracy,
)
from .schedule import SgdwrSchedule, lr_at
