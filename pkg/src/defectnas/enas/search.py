"""Alternating shared-weight training and controller policy-gradient updates."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..arch_graph import infer_shapes, one_line
from ..tensor_core import NumericError, sigmoid, sigmoid_bce, step_sgd_momentum
from ..trainer import SgdwrSchedule, lr_at, multi_target_accuracy
from .controller import ControllerRnn, RewardBaseline, reinforce_step
from .space import SharedWeightBank, materialize, shared_forward

log = logging.getLogger(__name__)


@dataclass
class EnasConfig:
    schedule: SgdwrSchedule = field(default_factory=lambda: SgdwrSchedule(5e-2, 5e-4, t0=10, cycles=5))
    batch_size: int = 16
    base_features: int = 64
    momentum: float = 0.9
    controller_lr: float = 1e-3
    entropy_weight: float = 1e-4
    baseline_decay: float = 0.95
    controller_steps: int | None = None  # default: number of validation mini-batches
    hidden: int = 64
    embed: int = 32
    threshold: float = 0.5
    seed: int = 0


def _minibatches(n, size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size) if len(perm[i:i + size]) >= 2]


def child_reward(bank, decisions, x, y, threshold=0.5, batch=256):
    outs = []
    for i in range(0, len(x), batch):
        logits, _ = shared_forward(bank, decisions, x[i:i + batch], train=False)
        outs.append(sigmoid(logits))
    return multi_target_accuracy(np.concatenate(outs), y, threshold)


def train_shared_step(bank, decisions, x, y, lr, momentum=0.9):
    """One SGD step on the sampled path; entries outside the path are not touched."""
    logits, net = shared_forward(bank, decisions, x, train=True)
    loss, grad = sigmoid_bce(logits, y)
    if not np.isfinite(loss):
        raise NumericError("non-finite shared-weight loss")
    net.backward(grad)
    for p in net.parameters():
        if p.grads:
            step_sgd_momentum(p, p.grads, lr, momentum)
    return loss


def run_enas_search(config: EnasConfig, train, val, on_epoch=None, on_record=None, clock=time.time):
    """Returns ``(controller, bank, epoch log)``.

    ``train`` and ``val`` are objects with ``x`` (N x 3 x P x P) and ``y``
    (N x 6).  Each epoch trains shared weights on one sampled child per
    training mini-batch, then runs ``controller_steps`` REINFORCE updates
    whose reward is the multi-target accuracy on one validation mini-batch.
    """
    rng = np.random.default_rng(config.seed)
    ctl = ControllerRnn(np.random.default_rng(config.seed + 1), config.hidden, config.embed)
    patch = train.x.shape[-1]
    bank = SharedWeightBank(np.random.default_rng(config.seed + 2), config.base_features, patch)
    baseline = RewardBaseline(config.baseline_decay)
    epochs = []
    sched = config.schedule
    for epoch in range(sched.total_epochs):
        batches = _minibatches(len(train.x), config.batch_size, rng)
        losses = []
        for bi, idx in enumerate(batches):
            seq, _, _ = ctl.sample(rng)
            lr = lr_at(sched, epoch, bi / len(batches))
            losses.append(train_shared_step(bank, seq, train.x[idx], train.y[idx], lr, config.momentum))
        vbatches = _minibatches(len(val.x), config.batch_size, rng)
        steps = config.controller_steps or len(vbatches)
        rewards = []
        for s in range(steps):
            idx = vbatches[s % len(vbatches)]
            seq, logp, ent, tape = ctl.run(rng)
            r = child_reward(bank, seq, val.x[idx], val.y[idx], config.threshold)
            reinforce_step(ctl, [(seq, tape)], [r], baseline, config.controller_lr, config.entropy_weight)
            rewards.append(r)
            if on_record is not None:
                graph = materialize(seq, "search", config.base_features, patch)
                rep = infer_shapes(graph)
                on_record({"epoch": epoch, "step": s, "reward": r, "log_prob": logp, "entropy": ent,
                           "params": rep.param_count, "layers": rep.layer_count, "dsl": one_line(graph),
                           "time": clock()})
        rec = {"epoch": epoch, "lr": lr_at(sched, epoch), "train_loss": float(np.mean(losses)) if losses else None,
               "mean_reward": float(np.mean(rewards)) if rewards else None, "baseline": baseline.value,
               "bank_entries": len(bank)}
        epochs.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return ctl, bank, epochs


def derive_final(controller, n, rng, bank=None, val=None, pool=100, base_features=64, patch_size=32,
                 threshold=0.5):
    """Top ``n`` distinct sampled architectures, materialized for from-scratch training.

    Candidates are ranked by shared-weight multi-target accuracy on the full
    ``val`` set when a bank is given, else by controller log-probability.
    Returns ``[(graph, score, decisions), ...]`` best first.
    """
    seen = {}
    for _ in range(pool):
        seq, logp, _ = controller.sample(rng)
        if seq.key not in seen:
            seen[seq.key] = (seq, logp)
    scored = []
    for i, (seq, logp) in enumerate(seen.values()):
        if bank is not None and val is not None:
            score = child_reward(bank, seq, val.x, val.y, threshold)
        else:
            score = logp
        scored.append((score, -i, seq))
    scored.sort(key=lambda t: (t[0], t[1]), reverse=True)
    out = []
    for rank, (score, _, seq) in enumerate(scored[:n]):
        graph = materialize(seq, "final", base_features, patch_size, name=f"enas-{rank + 1}")
        out.append((graph, float(score), seq))
    return out
