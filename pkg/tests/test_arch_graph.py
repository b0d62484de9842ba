import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defectnas.arch_graph import (
    ARCHITECTURES,
    ArchGraph,
    DSLError,
    LayerSpec,
    SkipEdge,
    UnknownArchitecture,
    decode_text,
    encode_text,
    from_one_line,
    infer_shapes,
    one_line,
    predefined_architecture,
    validate_graph,
)
from defectnas.metaqnn import SearchSpace, sample_architecture
from defectnas.metaqnn.search import QTable

from param_oracle import ORACLES


@pytest.mark.parametrize("name", sorted(ORACLES))
def test_param_count_matches_hand_oracle(name):
    assert infer_shapes(predefined_architecture(name)).param_count == ORACLES[name]()


@pytest.mark.parametrize("name", ARCHITECTURES)
def test_zoo_graphs_are_valid(name):
    assert validate_graph(predefined_architecture(name)) == []


def test_unknown_architecture():
    with pytest.raises(UnknownArchitecture):
        predefined_architecture("resnet-9000")


def test_layer_counts():
    assert infer_shapes(predefined_architecture("metaqnn-1")).layer_count == 6
    assert infer_shapes(predefined_architecture("metaqnn-3")).layer_count == 7
    assert infer_shapes(predefined_architecture("alexnet")).layer_count == 8


def test_spp_makes_head_independent_of_patch_size():
    g = predefined_architecture("metaqnn-1")
    a = infer_shapes(g).param_count
    b = infer_shapes(g.with_patch_size(256)).param_count
    assert a == b


def _tiny(**kw):
    layers = kw.pop("layers", (
        LayerSpec("conv", kernel=3, features=4, padding=1),
        LayerSpec("conv", kernel=3, features=4, padding=1),
        LayerSpec("gap", bias=False),
        LayerSpec("classifier", features=6),
    ))
    return ArchGraph(layers, kw.pop("skips", ()), 3, 16, 6, kw.pop("space", None), "tiny")


def test_violations_are_reported():
    codes = lambda g: {v.code for v in validate_graph(g)}  # noqa: E731
    assert validate_graph(_tiny()) == []
    assert "cycle" in codes(_tiny(skips=(SkipEdge(2, 1),)))
    assert "skip" in codes(_tiny(skips=(SkipEdge(1, 2),)))
    assert "skip" in codes(_tiny(skips=(SkipEdge(0, 9),)))
    no_head = _tiny(layers=(LayerSpec("conv", kernel=3, features=4), LayerSpec("gap", bias=False)))
    assert "classifier" in codes(no_head)
    two_pools = _tiny(layers=(LayerSpec("gap", bias=False), LayerSpec("gap", bias=False),
                              LayerSpec("classifier", features=6)))
    assert "transition" in codes(two_pools)
    # add across a channel change without projection cannot be merged
    wide = _tiny(layers=(LayerSpec("conv", kernel=3, features=4, padding=1),
                         LayerSpec("conv", kernel=3, features=8, padding=1),
                         LayerSpec("gap", bias=False), LayerSpec("classifier", features=6)),
                 skips=(SkipEdge(1, 3),))
    assert "shape" in codes(wide)


def test_metaqnn_space_rules():
    g = predefined_architecture("metaqnn-1")
    bad = ArchGraph(g.layers[:1] + g.layers[4:], (), 3, 224, 6, "metaqnn")
    assert "depth" in {v.code for v in validate_graph(bad)}
    odd = ArchGraph((LayerSpec("conv", kernel=4, features=32, bn=True, relu=True),) * 3 + g.layers[4:],
                    (), 3, 224, 6, "metaqnn")
    assert "kernel" in {v.code for v in validate_graph(odd)}


@pytest.mark.parametrize("name", ARCHITECTURES)
def test_text_round_trip_on_zoo(name):
    g = predefined_architecture(name)
    assert decode_text(encode_text(g)) == g
    assert from_one_line(one_line(g)) == g


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_text_round_trip_on_sampled_graphs(seed):
    space = SearchSpace(patch_size=64)
    g, _ = sample_architecture(QTable(), 1.0, np.random.default_rng(seed), space)
    assert decode_text(encode_text(g)) == g


def test_dsl_errors_carry_position():
    with pytest.raises(DSLError) as exc:
        decode_text("conv 3x3-16\nconv 3x4-16\n")
    assert exc.value.line == 2 and exc.value.column == 6
    with pytest.raises(DSLError) as exc:
        decode_text("wobble 3\n")
    assert exc.value.token == "wobble"


def test_dsl_comments_and_defaults():
    g = decode_text("# a comment\nconv 3x3-8 p=1 bn relu\ngap\nclassifier 6\n")
    assert g.patch_size == 224 and g.layers[0].bn and g.layers[0].padding == 1
