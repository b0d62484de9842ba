"""Candidate architectures as validated DAGs: shapes, parameter counts, text form, zoo."""
from .dsl import DSLError, decode_text, encode_text, from_one_line, one_line
from .graph import ArchGraph, LayerSpec, ShapeReport, SkipEdge, Violation
from .shapes import infer_shapes, input_shapes, projection_stride, validate_graph
from .zoo import ARCHITECTURES, PUBLISHED, UnknownArchitecture, predefined_architecture

__all__ = [
    "ARCHITECTURES", "PUBLISHED", "ArchGraph", "DSLError", "LayerSpec", "ShapeReport",
    "SkipEdge", "UnknownArchitecture", "Violation", "decode_text", "encode_text",
    "from_one_line", "infer_shapes", "input_shapes", "one_line", "predefined_architecture",
    "projection_stride", "validate_graph",
]
