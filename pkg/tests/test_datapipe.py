import os

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from PIL import Image

from defectnas.datapipe import (
    CLASSES,
    AnnotationRecord,
    DataError,
    DatasetManifest,
    ImageInfo,
    SplitInfeasible,
    SyntheticSpec,
    balance_by_replication,
    canonical_class,
    compute_stats,
    easy_spec,
    extract_patch,
    intersection_area,
    label_vector,
    load_arrays,
    parse_annotations,
    parse_voc_file,
    replicated_counts,
    make_splits,
    sample_background_boxes,
    save_arrays,
    scaled_size,
    split_arrays,
    stats_records,
    synthesize_dataset,
    write_synthetic_corpus,
    write_voc,
)

VOC = """<annotation>
  <filename>img7.jpg</filename>
  <size><width>200</width><height>100</height><depth>3</depth></size>
  <object><name>Crack</name><bndbox><xmin>10</xmin><ymin>5</ymin><xmax>60</xmax><ymax>50</ymax></bndbox></object>
  <object><name>Efflorescence</name><bndbox><xmin>10</xmin><ymin>5</ymin><xmax>60</xmax><ymax>50</ymax></bndbox></object>
  <object>
    <name>Defect</name>
    <bndbox><xmin>100</xmin><ymin>20</ymin><xmax>150</xmax><ymax>90</ymax></bndbox>
    <Background>0</Background><Crack>0</Crack><Spallation>1</Spallation><Efflorescence>0</Efflorescence>
    <ExposedBars>1</ExposedBars><CorrosionStain>0</CorrosionStain>
  </object>
</annotation>
"""


def test_voc_objects_sharing_a_box_merge(tmp_path):
    p = tmp_path / "img7.xml"
    p.write_text(VOC)
    info, recs = parse_voc_file(str(p), group="bridgeA")
    assert (info.image_id, info.width, info.height, info.group) == ("img7", 200, 100, "bridgeA")
    assert len(recs) == 2
    by_box = {r.box: r.labels for r in recs}
    assert by_box[(10, 5, 60, 50)] == (0, 1, 0, 1, 0, 0)
    assert by_box[(100, 20, 150, 90)] == (0, 0, 1, 0, 1, 0)


def test_voc_errors(tmp_path):
    p = tmp_path / "bad.xml"
    p.write_text(VOC.replace("<xmax>60</xmax>", "<xmax>260</xmax>"))
    with pytest.raises(DataError):
        parse_voc_file(str(p))
    p.write_text("<annotation><size>")
    with pytest.raises(DataError):
        parse_voc_file(str(p))
    with pytest.raises(DataError):
        canonical_class("graffiti")


def test_class_names_and_labels():
    assert canonical_class("Exposed Bars") == "exposed_bars"
    assert canonical_class("CorrosionStain") == "corrosion_stain"
    assert label_vector(["background", "crack"]) == (0, 1, 0, 0, 0, 0)
    with pytest.raises(DataError):
        label_vector([])


def test_write_then_parse_round_trip(tmp_path):
    boxes = [((0, 0, 10, 10), (0, 1, 1, 0, 0, 0)), ((20, 20, 40, 30), (0, 0, 0, 0, 0, 1))]
    os.makedirs(tmp_path / "g1")
    write_voc(str(tmp_path / "g1" / "a.xml"), "a.png", 64, 48, boxes)
    m = parse_annotations(str(tmp_path))
    assert [(r.box, r.labels, r.group) for r in m.records] == [(b, lab, "g1") for b, lab in boxes]


def test_empty_directory_gives_empty_manifest(tmp_path):
    m = parse_annotations(str(tmp_path))
    assert m.records == [] and m.images == {}
    st_ = compute_stats(m)
    assert st_["boxes"] == 0 and sum(st_["size_hist"]) == 0 and st_["classes_per_box_hist"] == []


def test_manifest_dump_load_round_trip(tmp_path):
    m = _manifest(np.random.default_rng(0), 6, 3)
    m.splits = {0: "val", 1: "train"}
    m.dump(str(tmp_path / "m.jsonl"))
    back = DatasetManifest.load(str(tmp_path / "m.jsonl"))
    assert back == m


# -- randomized manifests ----------------------------------------------------

def _manifest(rng, n_images, n_groups, boxes=4, size=120):
    m = DatasetManifest()
    for i in range(n_images):
        iid = f"im{i}"
        group = f"g{i % n_groups}"
        m.images[iid] = ImageInfo(iid, f"/nowhere/{iid}.png", size, size, group)
        for _ in range(int(rng.integers(1, boxes + 1))):
            w, h = (int(v) for v in rng.integers(5, 30, 2))
            x0, y0 = (int(v) for v in rng.integers(0, size - 30, 2))
            labels = [0] * 6
            labels[int(rng.integers(1, 6))] = 1
            if rng.random() < 0.3:
                labels[int(rng.integers(1, 6))] = 1
            m.records.append(AnnotationRecord(iid, (x0, y0, x0 + w, y0 + h), tuple(labels), group))
    return m


seeds = st.integers(0, 2 ** 31 - 1)


@given(seeds, st.integers(8, 40), st.integers(4, 8))
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_splits_are_exclusive(seed, n_images, n_groups):
    rng = np.random.default_rng(seed)
    for mode in ("per-image", "per-group"):
        m = _manifest(rng, n_images, n_groups)
        try:
            make_splits(m, mode, target=1, rng=rng, val_groups=1, test_groups=1)
        except SplitInfeasible:
            continue
        key = (lambda r: r.image_id) if mode == "per-image" else (lambda r: r.group)
        owner = {}
        for i, r in enumerate(m.records):
            assert owner.setdefault(key(r), m.splits[i]) == m.splits[i]
        assert set(m.splits) == set(range(len(m.records)))


@given(seeds)
@settings(max_examples=25, deadline=None)
def test_split_feasibility_matches_available_counts(seed):
    rng = np.random.default_rng(seed)
    m = _manifest(rng, 30, 5)
    counts = np.array(m.class_counts())
    target = int(rng.integers(1, 12))
    try:
        res = make_splits(m, "per-image", target=target, rng=rng, classes=range(1, 6))
    except SplitInfeasible as exc:
        rep = exc.report
        short = [c for c in range(1, 6) if min(rep["counts"]["val"][c], rep["counts"]["test"][c]) < target]
        assert short and rep["short"] == [CLASSES[c] for c in short]
        return
    # success implies every defect class has at least 2 * target boxes
    assert all(counts[c] >= 2 * target for c in range(1, 6))
    assert all(min(res.counts["val"][c], res.counts["test"][c]) >= target for c in range(1, 6))


def test_target_of_150_is_infeasible_on_a_small_manifest():
    m = _manifest(np.random.default_rng(0), 40, 4)
    with pytest.raises(SplitInfeasible) as exc:
        make_splits(m, "per-image", target=150)
    # no background boxes were sampled, so that class is short as well
    assert "background" in exc.value.report["short"]


def test_per_group_needs_enough_groups():
    m = _manifest(np.random.default_rng(0), 10, 3)
    with pytest.raises(ValueError):
        make_splits(m, "per-group", val_groups=2, test_groups=1)


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_background_boxes_never_touch_defects(seed):
    rng = np.random.default_rng(seed)
    m = _manifest(rng, 5, 2)
    defects = list(m.records)
    added = sample_background_boxes(m, rng)
    for b in added:
        assert b.labels == (1, 0, 0, 0, 0, 0)
        info = m.images[b.image_id]
        assert 0 <= b.box[0] < b.box[2] <= info.width and 0 <= b.box[1] < b.box[3] <= info.height
        for d in defects:
            if d.image_id == b.image_id:
                assert intersection_area(b.box, d.box) == 0


def test_intersection_area_by_hand():
    assert intersection_area((0, 0, 10, 10), (5, 5, 20, 20)) == 25
    assert intersection_area((0, 0, 10, 10), (10, 0, 20, 10)) == 0  # touching edges share no area


def _rec(*labels):
    return AnnotationRecord("x", (0, 0, 1, 1), tuple(labels))


def test_replication_rule_example():
    crack = _rec(0, 1, 0, 0, 0, 0)
    eff = _rec(0, 0, 0, 1, 0, 0)
    recs = [crack] * 4 + [eff]
    order = balance_by_replication(recs)
    assert order.count(4) == 4 and all(order.count(i) == 1 for i in range(4))
    assert replicated_counts(recs, order)[1] == replicated_counts(recs, order)[3] == 4


def test_balanced_single_label_data_is_unchanged():
    recs = [_rec(*np.eye(6, dtype=int)[c]) for c in range(6) for _ in range(3)]
    assert balance_by_replication(recs) == list(range(len(recs)))


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_replication_keeps_every_record_and_bounds_imbalance(seed):
    rng = np.random.default_rng(seed)
    m = _manifest(rng, 20, 4)
    order = balance_by_replication(m.records)
    assert set(order) == set(range(len(m.records)))
    counts = np.array(replicated_counts(m.records, order))[1:]
    before = np.array(m.class_counts())[1:]
    present = before > 0
    # the rarest present class never ends below the original maximum
    assert counts[present].min() >= before.max()


def test_multi_target_record_counts_toward_each_class():
    both = _rec(0, 1, 1, 0, 0, 0)
    assert replicated_counts([both], [0]) == [0, 1, 1, 0, 0, 0]


# -- patches -----------------------------------------------------------------

def test_scaled_size_arithmetic():
    assert scaled_size(100, 300, 224) == (224, 672)
    assert scaled_size(50, 50, 224) == (224, 224)


@given(st.integers(1, 150), st.integers(1, 150), seeds)
@settings(max_examples=40, deadline=None)
def test_patch_is_always_3xPxP(w, h, seed):
    rng = np.random.default_rng(seed)
    img = (rng.random((160, 160, 3)) * 255).astype(np.uint8)
    x0, y0 = int(rng.integers(0, 160 - w + 1)), int(rng.integers(0, 160 - h + 1))
    p = extract_patch(img, (x0, y0, x0 + w, y0 + h), 32, "train", rng)
    assert p.shape == (3, 32, 32) and p.dtype == np.float32
    assert 0.0 <= p.min() and p.max() <= 1.0


def test_eval_patch_is_deterministic_and_square_box_is_whole_patch():
    img = Image.fromarray((np.random.default_rng(1).random((100, 100, 3)) * 255).astype(np.uint8))
    a = extract_patch(img, (10, 10, 74, 74), 64)
    b = extract_patch(img, (10, 10, 74, 74), 64)
    np.testing.assert_array_equal(a, b)
    whole = np.asarray(img.crop((10, 10, 74, 74)), dtype=np.float32).transpose(2, 0, 1) / 255
    np.testing.assert_allclose(a, whole, atol=1e-6)


def test_degenerate_box_and_small_patch_rejected():
    img = np.zeros((50, 50, 3), np.uint8)
    with pytest.raises(ValueError):
        extract_patch(img, (10, 10, 10, 20), 32)
    with pytest.raises(ValueError):
        extract_patch(img, (0, 0, 20, 20), 16)


# -- synthetic data and stats --------------------------------------------------

def test_synthetic_determinism_and_labels():
    a = synthesize_dataset(SyntheticSpec(seed=3, counts=(5,) * 6, size=16))
    b = synthesize_dataset(SyntheticSpec(seed=3, counts=(5,) * 6, size=16))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.x.shape == (30, 3, 16, 16) and a.y.sum(axis=1).max() == 1
    np.testing.assert_array_equal(a.y.argmax(1), a.primary)


def test_cooccurrence_produces_multi_target_samples():
    d = synthesize_dataset(SyntheticSpec(seed=0, counts=(0, 40, 40, 40, 40, 40), size=16, cooccurrence=0.5))
    assert (d.y.sum(axis=1) > 1).any() and d.y[:, 0].sum() == 0


def test_split_arrays_and_npz_round_trip(tmp_path):
    d = synthesize_dataset(easy_spec(n=60, size=16))
    bundle = split_arrays(d, (0.5, 0.25, 0.25))
    assert (len(bundle.train), len(bundle.val), len(bundle.test)) == (30, 15, 15)
    save_arrays(str(tmp_path / "d.npz"), bundle)
    back = load_arrays(str(tmp_path / "d.npz"))
    np.testing.assert_array_equal(back.val.x, bundle.val.x)


def test_corpus_ingest_and_stats(tmp_path):
    written = write_synthetic_corpus(str(tmp_path), n_images=6, image_size=96, groups=2)
    m = parse_annotations(str(tmp_path))
    assert len(m.records) == written and {r.group for r in m.records} == {"bridge0", "bridge1"}
    sample_background_boxes(m, np.random.default_rng(0))
    s = compute_stats(m)
    assert sum(s["classes_per_box_hist"]) == s["boxes"] == len(m.records)
    assert sum(s["size_hist"]) <= s["boxes"]
    rows = stats_records(s)
    assert {"stat", "bin", "count"} == set(rows[0])
