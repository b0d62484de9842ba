"""Annotation ingest, background boxes, splits, balancing, patches and synthetic data."""
from .background import BACKGROUND, intersection_area, sample_background_boxes
from .patches import extract_patch, load_patches, scaled_size
from .records import (
    CLASSES,
    DEFECTS,
    AnnotationRecord,
    DataError,
    DatasetManifest,
    ImageInfo,
    canonical_class,
    label_vector,
    parse_annotations,
    parse_voc_file,
    write_voc,
)
from .splits import SplitInfeasible, SplitResult, balance_by_replication, make_splits, replicated_counts
from .stats import compute_stats, stats_records
from .synth import (
    SyntheticData,
    SyntheticSpec,
    easy_spec,
    load_arrays,
    render,
    save_arrays,
    split_arrays,
    synthesize_dataset,
    write_synthetic_corpus,
)

# published per-class box counts of the real defect dataset
PUBLISHED_COUNTS = {
    "crack": 2507,
    "spallation": 1898,
    "efflorescence": 833,
    "exposed_bars": 1507,
    "corrosion_stain": 1559,
}
