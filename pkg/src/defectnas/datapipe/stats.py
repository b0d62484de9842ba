"""Histogram bundles describing an annotation manifest."""
from __future__ import annotations

import numpy as np

from .records import CLASSES

SIZE_BINS = (0, 32, 64, 128, 256, 512, 1024, 2048, 4096, 10**9)
ASPECT_BINS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 1e9)


def _hist(values, bins):
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=np.asarray(bins, dtype=np.float64))
    return counts.tolist()


def compute_stats(manifest) -> dict:
    """Counts and histograms of box size (sqrt area), aspect ratio (w/h), boxes per image, classes per box."""
    recs = manifest.records
    sizes = [float(np.sqrt(r.width * r.height)) for r in recs]
    aspects = [r.width / r.height for r in recs]
    out = {
        "boxes": len(recs),
        "images": len(manifest.images),
        "class_counts": dict(zip(CLASSES, manifest.class_counts())),
        "size_bins": list(SIZE_BINS),
        "aspect_bins": list(ASPECT_BINS),
        "size_hist": _hist(sizes, SIZE_BINS),
        "aspect_hist": _hist(aspects, ASPECT_BINS),
    }
    out["size_hist_background"] = _hist([s for s, r in zip(sizes, recs) if r.is_background], SIZE_BINS)
    out["size_hist_defect"] = _hist([s for s, r in zip(sizes, recs) if not r.is_background], SIZE_BINS)
    out["size_hist_per_class"] = {
        name: _hist([s for s, r in zip(sizes, recs) if r.labels[c]], SIZE_BINS) for c, name in enumerate(CLASSES)
    }
    per_image: dict = {i: 0 for i in manifest.images}
    for r in recs:
        per_image[r.image_id] = per_image.get(r.image_id, 0) + 1
    boxes_per_image = list(per_image.values())
    top = max(boxes_per_image, default=0)
    out["boxes_per_image_hist"] = np.bincount(boxes_per_image, minlength=top + 1).tolist() if boxes_per_image else []
    k = [sum(r.labels) for r in recs if not r.is_background]
    out["classes_per_box_hist"] = np.bincount(k, minlength=len(CLASSES)).tolist()[1:] if k else []
    if recs and any(r.is_background for r in recs):
        # background boxes carry exactly one class
        if out["classes_per_box_hist"]:
            out["classes_per_box_hist"][0] += sum(1 for r in recs if r.is_background)
        else:
            out["classes_per_box_hist"] = [sum(1 for r in recs if r.is_background)]
    return out


def stats_records(stats: dict):
    """Flatten a stats bundle into line records ``{"stat", "bin", "count"}``."""
    rows = []
    for key in ("size_hist", "size_hist_background", "size_hist_defect"):
        for b, c in zip(stats["size_bins"], stats[key]):
            rows.append({"stat": key, "bin": b, "count": c})
    for name, hist in stats["size_hist_per_class"].items():
        for b, c in zip(stats["size_bins"], hist):
            rows.append({"stat": f"size_hist_{name}", "bin": b, "count": c})
    for b, c in zip(stats["aspect_bins"], stats["aspect_hist"]):
        rows.append({"stat": "aspect_hist", "bin": b, "count": c})
    for i, c in enumerate(stats["boxes_per_image_hist"]):
        rows.append({"stat": "boxes_per_image", "bin": i, "count": c})
    for i, c in enumerate(stats["classes_per_box_hist"], start=1):
        rows.append({"stat": "classes_per_box", "bin": i, "count": c})
    for name, c in stats["class_counts"].items():
        rows.append({"stat": "class_count", "bin": name, "count": c})
    return rows
