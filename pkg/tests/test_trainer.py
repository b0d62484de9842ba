import itertools
import math

import numpy as np
import pytest

from defectnas.arch_graph import ArchGraph, LayerSpec
from defectnas.tensor_core import NumericError
from defectnas.trainer import (
    DataBundle,
    GridCell,
    SgdwrSchedule,
    Split,
    TrainConfig,
    binarize,
    evaluate,
    format_grid_table,
    lr_at,
    moving_average,
    multi_target_accuracy,
    per_class_accuracy,
    run_grid_search,
    select_best,
    train_child,
)


def test_restart_epochs_and_totals():
    s = SgdwrSchedule(1e-2, 1e-5, t0=10, cycles=4)
    assert s.cycle_lengths == [10, 20, 40, 80]
    assert s.restarts == [0, 10, 30, 70]
    assert s.total_epochs == 150
    assert SgdwrSchedule(cycles=5).total_epochs == 310


def test_lr_landmarks():
    s = SgdwrSchedule(1e-2, 1e-5)
    for e in s.restarts:
        assert lr_at(s, e) == pytest.approx(1e-2, rel=1e-12)
    for start, n in zip(s.restarts, s.cycle_lengths):
        assert lr_at(s, start + n // 2) == pytest.approx((1e-2 + 1e-5) / 2, rel=1e-12)
    # continuous inside a cycle: epoch 2 plus half a batch sweep = T_cur 2.5
    expected = 1e-5 + 0.5 * (1e-2 - 1e-5) * (1 + math.cos(math.pi * 2.5 / 10))
    assert lr_at(s, 2, 0.5) == pytest.approx(expected, rel=1e-12)


def test_lr_is_monotone_within_a_cycle():
    s = SgdwrSchedule(1e-2, 1e-5, t0=4, cycles=3)
    for start, n in zip(s.restarts, s.cycle_lengths):
        lrs = [lr_at(s, start + i, f) for i in range(n) for f in (0.0, 0.5)]
        assert all(a > b for a, b in zip(lrs, lrs[1:]))
        assert min(lrs) > 1e-5


def test_schedule_validation():
    with pytest.raises(ValueError):
        SgdwrSchedule(1e-5, 1e-2)
    with pytest.raises(ValueError):
        lr_at(SgdwrSchedule(), 150)
    with pytest.raises(ValueError):
        lr_at(SgdwrSchedule(), 0, 1.0)


def test_threshold_is_inclusive():
    np.testing.assert_array_equal(binarize([[0.5, 0.4999, 0.9]]), [[1, 0, 1]])


def test_multi_target_by_hand():
    out = np.array([[0.9, 0.1], [0.9, 0.9], [0.2, 0.1]])
    tgt = np.array([[1, 0], [1, 0], [0, 0]])
    assert multi_target_accuracy(out, tgt) == pytest.approx(2 / 3)
    acc, avg = per_class_accuracy(out, tgt)
    np.testing.assert_allclose(acc, [1.0, 2 / 3])
    assert avg == pytest.approx(5 / 6)


def test_multi_target_never_exceeds_per_class_on_random_batches():
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = rng.random((20, 6))
        tgt = (rng.random((20, 6)) < 0.3).astype(int)
        acc, _ = per_class_accuracy(out, tgt)
        assert multi_target_accuracy(out, tgt) <= acc.min() + 1e-12


def test_metric_validation():
    with pytest.raises(ValueError):
        multi_target_accuracy(np.zeros((2, 6)), np.zeros((2, 5)))
    with pytest.raises(ValueError):
        multi_target_accuracy(np.zeros((1, 2)), np.array([[0.5, 1]]))
    assert multi_target_accuracy(np.zeros((0, 6)), np.zeros((0, 6))) == 0.0


def test_moving_average_matches_naive_loop():
    v = np.random.default_rng(1).random(57)
    naive = [float(np.mean(v[max(0, i - 19):i + 1])) for i in range(len(v))]
    np.testing.assert_allclose(moving_average(v, 20), naive)


# -- training ------------------------------------------------------------------

def _stripes(n, rng):
    """Class 1 = horizontal stripes, class 2 = vertical stripes, both or neither."""
    y = np.zeros((n, 6), np.float32)
    x = rng.normal(0, 0.05, (n, 3, 8, 8)).astype(np.float32)
    for i in range(n):
        h, v = rng.random() < 0.5, rng.random() < 0.5
        if h:
            x[i, :, ::2, :] += 1
        if v:
            x[i, :, :, ::2] += 1
        y[i, 1], y[i, 2] = h, v
        y[i, 0] = not (h or v)
    return x, y


def _tiny_graph():
    return ArchGraph((
        LayerSpec("conv", kernel=3, features=8, padding=1, bn=True, relu=True),
        LayerSpec("gap", bias=False),
        LayerSpec("classifier", features=6),
    ), (), 3, 8, 6, None, "tiny")


@pytest.fixture(scope="module")
def stripes():
    rng = np.random.default_rng(2)
    xt, yt = _stripes(192, rng)
    xv, yv = _stripes(64, rng)
    return DataBundle(Split(xt, yt), Split(xv, yv), Split(xv, yv))


def test_training_learns_a_separable_task(stripes):
    cfg = TrainConfig(batch_size=16, patch_size=8, dropout=0.0, schedule=SgdwrSchedule(0.1, 1e-4, t0=2, cycles=3))
    hist, net = train_child(_tiny_graph(), stripes, cfg)
    assert len(hist.epochs) == 14 and not hist.early_stopped
    assert hist.best_val >= 0.9
    assert hist.bv_test == hist.epochs[hist.best_epoch].test_acc
    assert evaluate(net, stripes.val, cfg) == pytest.approx(hist.epochs[-1].val_acc)


def test_training_is_deterministic(stripes):
    cfg = TrainConfig(batch_size=16, patch_size=8, dropout=0.5, schedule=SgdwrSchedule(0.1, 1e-4, t0=1, cycles=2))
    a, _ = train_child(_tiny_graph(), stripes, cfg)
    b, _ = train_child(_tiny_graph(), stripes, cfg)
    assert [e.train_loss for e in a.epochs] == [e.train_loss for e in b.epochs]


def test_early_stop_after_first_cycle(stripes):
    cfg = TrainConfig(batch_size=16, patch_size=8, schedule=SgdwrSchedule(0.1, 1e-4, t0=2, cycles=3))
    hist, _ = train_child(_tiny_graph(), stripes, cfg, evaluate_fn=lambda net, split: 0.1)
    assert hist.early_stopped and len(hist.epochs) == 2


def test_replicated_order_is_used(stripes):
    order = np.repeat(np.arange(4), 8)
    data = DataBundle(Split(stripes.train.x, stripes.train.y, order), stripes.val)
    cfg = TrainConfig(batch_size=8, patch_size=8, schedule=SgdwrSchedule(0.1, 1e-4, t0=1, cycles=1))
    hist, _ = train_child(_tiny_graph(), data, cfg)
    assert len(hist.epochs) == 1 and hist.epochs[0].test_acc is None


def test_nan_input_raises_numeric_error(stripes):
    x = stripes.train.x.copy()
    x[:] = np.nan
    data = DataBundle(Split(x, stripes.train.y), stripes.val)
    cfg = TrainConfig(batch_size=16, patch_size=8, schedule=SgdwrSchedule(0.1, 1e-4, t0=1, cycles=1))
    with pytest.raises(NumericError):
        train_child(_tiny_graph(), data, cfg)


def test_batch_size_must_allow_batchnorm():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)


def test_grid_search_covers_every_cell(stripes):
    small = DataBundle(Split(stripes.train.x[:64], stripes.train.y[:64]), stripes.val)
    cfg = TrainConfig(patch_size=8, dropout=0.0, schedule=SgdwrSchedule(t0=1, cycles=1))
    cells = run_grid_search(_tiny_graph(), small, cfg, batches=(16, 32), ranges=((1e-1, 1e-5), (1e-2, 1e-5)))
    assert {(c.batch_size, c.eta_max) for c in cells} == set(itertools.product((16, 32), (1e-1, 1e-2)))
    table = format_grid_table(cells, "tiny")
    assert "batch 32" in table and "[1e-01, 1e-05]" in table


def test_select_best_prefers_earlier_on_ties():
    a = GridCell(16, 1e-2, 1e-5, 0.5, None, None)
    b = GridCell(32, 1e-2, 1e-5, 0.5, None, None)
    c = GridCell(64, 1e-2, 1e-5, 0.4, None, None)
    assert select_best([c, a, b]) is a
