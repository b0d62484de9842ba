"""Training a child network end to end with SGDWR and momentum SGD."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..network import Network
from ..tensor_core import NumericError, sigmoid, sigmoid_bce, step_sgd_momentum
from .metrics import EvalReport, evaluate_outputs, multi_target_accuracy
from .schedule import SgdwrSchedule, lr_at

GRID_BATCHES = (16, 32, 64, 128)


@dataclass
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 224
    momentum: float = 0.9
    dropout: float = 0.5
    bn_eps: float = 1e-4
    schedule: SgdwrSchedule = field(default_factory=SgdwrSchedule)
    seed: int = 0
    early_stop: float = 0.15
    threshold: float = 0.5
    eval_batch: int = 128

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 for batchnorm")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass
class Split:
    """Arrays for one dataset split; ``order`` optionally lists (replicated) training indices."""

    x: np.ndarray
    y: np.ndarray
    order: np.ndarray | None = None

    def __len__(self):
        return len(self.x)


@dataclass
class DataBundle:
    train: Split
    val: Split
    test: Split | None = None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float | None = None


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    early_stopped: bool = False
    final_val: EvalReport | None = None

    @property
    def best_val(self) -> float:
        return self.epochs[self.best_epoch].val_acc if self.best_epoch >= 0 else 0.0

    @property
    def bv_test(self):
        """Test accuracy at the best-validation epoch (never the best test epoch)."""
        return self.epochs[self.best_epoch].test_acc if self.best_epoch >= 0 else None

    @property
    def bv_train(self):
        return self.epochs[self.best_epoch].train_acc if self.best_epoch >= 0 else None

    def mark(self):
        vals = [e.val_acc for e in self.epochs]
        self.best_epoch = int(np.argmax(vals)) if vals else -1


def evaluate(net, split, config, with_report=False):
    outs, loss, n = [], 0.0, 0
    for i in range(0, len(split), config.eval_batch):
        logits = net.forward(split.x[i:i + config.eval_batch], train=False)
        l, _ = sigmoid_bce(logits, split.y[i:i + config.eval_batch])
        loss += l * len(logits)
        n += len(logits)
        outs.append(sigmoid(logits))
    outputs = np.concatenate(outs) if outs else np.zeros((0, split.y.shape[1]))
    if with_report:
        return evaluate_outputs(outputs, split.y, config.threshold, loss / max(n, 1))
    return multi_target_accuracy(outputs, split.y, config.threshold)


def _batches(order, batch_size, rng):
    perm = order[rng.permutation(len(order))]
    for i in range(0, len(perm), batch_size):
        b = perm[i:i + batch_size]
        if len(b) >= 2:  # a single-sample batch cannot be batch-normalized
            yield b


def train_child(graph, data: DataBundle, config: TrainConfig, net=None, evaluate_fn=None,
                on_epoch=None, epochs=None) -> tuple[History, Network]:
    """Train ``graph`` on ``data.train``; evaluate validation (and test) after every epoch.

    ``evaluate_fn(net, split)`` replaces the validation metric when given.
    The run stops early with ``history.early_stopped`` set if validation
    accuracy at the end of the first cycle is below ``config.early_stop``.
    """
    rng = np.random.default_rng(config.seed)
    if net is None:
        net = Network(graph, rng=rng, input_size=config.patch_size, dropout=config.dropout, bn_eps=config.bn_eps)
    sched = config.schedule
    total = sched.total_epochs if epochs is None else epochs
    order = data.train.order if data.train.order is not None else np.arange(len(data.train))
    n_batches = max(1, sum(1 for _ in range(0, len(order), config.batch_size)))
    hist = History()
    val_fn = evaluate_fn or (lambda n_, s_: evaluate(n_, s_, config))
    for epoch in range(total):
        loss_sum, correct, seen = 0.0, 0.0, 0
        for bi, idx in enumerate(_batches(order, config.batch_size, rng)):
            lr = lr_at(sched, epoch, bi / n_batches)
            x, y = data.train.x[idx], data.train.y[idx]
            logits = net.forward(x, train=True)
            loss, grad = sigmoid_bce(logits, y)
            if not np.isfinite(loss):
                raise NumericError(f"{graph.name or 'network'}: non-finite loss at epoch {epoch}, batch {bi}")
            net.backward(grad)
            for p in net.parameters():
                step_sgd_momentum(p, p.grads, lr, config.momentum)
            loss_sum += loss * len(idx)
            correct += multi_target_accuracy(sigmoid(logits), y, config.threshold) * len(idx)
            seen += len(idx)
        val_acc = val_fn(net, data.val)
        test_acc = evaluate(net, data.test, config) if data.test is not None else None
        rec = EpochRecord(epoch, lr_at(sched, epoch), loss_sum / max(seen, 1), correct / max(seen, 1),
                          val_acc, test_acc)
        hist.epochs.append(rec)
        hist.mark()
        if on_epoch is not None:
            on_epoch(rec)
        if epoch == sched.t0 - 1 and val_acc < config.early_stop:
            hist.early_stopped = True
            break
    return hist, net


def with_schedule(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, schedule=replace(config.schedule, **kw))


LR_RANGES = ((1e-1, 1e-5), (5e-2, 5e-4), (1e-2, 1e-5))


@dataclass
class GridCell:
    batch_size: int
    eta_max: float
    eta_min: float
    best_val: float
    bv_test: float | None
    bv_train: float | None
    early_stopped: bool = False


def run_grid_search(graph, data: DataBundle, config: TrainConfig, batches=GRID_BATCHES, ranges=LR_RANGES,
                    on_cell=None) -> list[GridCell]:
    """Train one child per (batch size, lr range) cell."""
    cells = []
    for lo_hi in ranges:
        for b in batches:
            cfg = replace(with_schedule(config, eta_max=lo_hi[0], eta_min=lo_hi[1]), batch_size=b)
            hist, _ = train_child(graph, data, cfg)
            cell = GridCell(b, lo_hi[0], lo_hi[1], hist.best_val, hist.bv_test, hist.bv_train, hist.early_stopped)
            cells.append(cell)
            if on_cell is not None:
                on_cell(cell)
    return cells


def select_best(cells) -> GridCell:
    """Cell with the highest best-validation accuracy; earlier cells win ties."""
    return max(cells, key=lambda c: c.best_val)


def _fmt(v):
    return "  -  " if v is None else f"{100 * v:5.2f}"


def format_grid_table(cells, name="") -> str:
    """Plain-text table: one row per lr range, one column group per batch size."""
    batches = sorted({c.batch_size for c in cells}, reverse=True)
    ranges = []
    for c in cells:
        if (c.eta_max, c.eta_min) not in ranges:
            ranges.append((c.eta_max, c.eta_min))
    lookup = {(c.batch_size, c.eta_max, c.eta_min): c for c in cells}
    head = f"{name:<20}" + "".join(f"| batch {b:<17}" for b in batches)
    sub = f"{'lr range':<20}" + "".join("| best-val bv-test bv-train " for _ in batches)
    lines = [head, sub]
    for hi, lo in ranges:
        row = f"[{hi:.0e}, {lo:.0e}]".ljust(20)
        for b in batches:
            c = lookup.get((b, hi, lo))
            row += "| " + (" ".join((_fmt(c.best_val), _fmt(c.bv_test), _fmt(c.bv_train))) + "  " if c else "  n/a  ")
        lines.append(row)
    return "\n".join(lines)
