"""Image-exclusive (or group-exclusive) dataset splits and train-set balancing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .records import CLASSES

SPLITS = ("train", "val", "test")


class SplitInfeasible(ValueError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class SplitResult:
    assignment: dict  # record index -> split name
    counts: dict = field(default_factory=dict)  # split -> per-class counts
    report: dict = field(default_factory=dict)


def _by_key(records, key):
    groups: dict = {}
    for i, r in enumerate(records):
        groups.setdefault(key(r), []).append(i)
    return groups


def _counts(records, idx):
    c = np.zeros(len(CLASSES), dtype=np.int64)
    for i in idx:
        c += records[i].labels
    return c


def _tally(records, assignment):
    out = {}
    for s in SPLITS:
        out[s] = _counts(records, [i for i, a in assignment.items() if a == s]).tolist()
    return out


def make_splits(manifest, mode="per-image", target=150, rng=None, val_groups=3, test_groups=3,
                classes=None) -> SplitResult:
    """Assign every record to train/val/test without splitting an image (or group) across splits.

    ``per-image``: images are visited rarest-class first and go to whichever
    of val/test still needs more of the classes they contain; the rest is
    train.  Raises :class:`SplitInfeasible` with the achievable counts when a
    class cannot reach ``target`` in both val and test.

    ``per-group``: whole groups are assigned, ``val_groups`` and
    ``test_groups`` of them greedily by coverage; the balance is reported,
    not enforced.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    records = manifest.records
    cls = list(range(len(CLASSES))) if classes is None else list(classes)
    if mode == "per-image":
        units = _by_key(records, lambda r: r.image_id)
    elif mode == "per-group":
        if any(r.group is None for r in records):
            raise ValueError("per-group splits need a group id on every record")
        units = _by_key(records, lambda r: r.group)
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    keys = sorted(units)
    unit_counts = {k: _counts(records, units[k]) for k in keys}
    total = sum(unit_counts.values(), np.zeros(len(CLASSES), dtype=np.int64))

    if mode == "per-image":
        # rarest classes first; shuffle first so ties are broken by the seed
        order = [keys[i] for i in rng.permutation(len(keys))]
        rarity = 1.0 / np.maximum(total, 1)

        def score(k):
            return -float(np.max(np.where(unit_counts[k] > 0, rarity, 0.0)[cls]))

        order.sort(key=score)
        have = {"val": np.zeros(len(CLASSES), np.int64), "test": np.zeros(len(CLASSES), np.int64)}
        unit_split = {}
        for k in order:
            c = unit_counts[k]
            need = {s: int(np.minimum(c, np.maximum(target - have[s], 0))[cls].sum()) for s in ("val", "test")}
            if max(need.values()) > 0:
                s = "val" if need["val"] >= need["test"] else "test"
                have[s] += c
            else:
                s = "train"
            unit_split[k] = s
    else:
        n_groups = len(keys)
        if val_groups + test_groups >= n_groups:
            raise ValueError(f"{n_groups} groups cannot supply {val_groups}+{test_groups} held-out groups and a train set")
        share = total / n_groups
        remaining = [keys[i] for i in rng.permutation(n_groups)]
        unit_split = {}
        for s, n in (("val", val_groups), ("test", test_groups)):
            have = np.zeros(len(CLASSES), np.int64)
            want = share * n
            for _ in range(n):
                best = max(remaining, key=lambda k: float(np.minimum(unit_counts[k], np.maximum(want - have, 0))[cls].sum()))
                remaining.remove(best)
                unit_split[best] = s
                have += unit_counts[best]
        for k in remaining:
            unit_split[k] = "train"

    assignment = {i: unit_split[k] for k in keys for i in units[k]}
    counts = _tally(records, assignment)
    report = {"mode": mode, "target": target, "available": total.tolist(), "counts": counts,
              "units": {s: sum(1 for v in unit_split.values() if v == s) for s in SPLITS}}
    if mode == "per-image":
        short = [CLASSES[c] for c in cls if min(counts["val"][c], counts["test"][c]) < target]
        report["short"] = short
        if short:
            raise SplitInfeasible(f"cannot place {target} examples of {', '.join(short)} in both val and test", report)
    else:
        ratios = {}
        for s in ("val", "test"):
            c = np.asarray(counts[s])[cls]
            ratios[s] = float(c.max() / max(c.min(), 1))
        report["max_min_ratio"] = ratios
    manifest.splits = dict(assignment)
    return SplitResult(assignment, counts, report)


def balance_by_replication(records, indices=None) -> list[int]:
    """Training order where each record appears ceil(max class count / count of its rarest class) times.

    Multi-target records count toward every positive class; they are
    replicated according to their rarest one.
    """
    idx = list(range(len(records))) if indices is None else list(indices)
    counts = _counts(records, idx)
    top = int(counts.max()) if len(idx) else 0
    out = []
    for i in idx:
        pos = [counts[c] for c, f in enumerate(records[i].labels) if f]
        reps = math.ceil(top / min(pos))
        out.extend([i] * reps)
    return out


def replicated_counts(records, order):
    return _counts(records, order).tolist()
