"""Background boxes drawn to mimic the size and shape of the defect boxes."""
from __future__ import annotations

import logging

import numpy as np

from .records import CLASSES, AnnotationRecord

log = logging.getLogger(__name__)

BACKGROUND = tuple([1] + [0] * (len(CLASSES) - 1))


def intersection_area(a, b) -> int:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(0, w) * max(0, h)


def sample_background_boxes(manifest, rng, count=None, max_tries=100, add=True):
    """Sample background boxes that touch no defect box.

    Box width and height are drawn jointly from a randomly chosen defect box,
    so size and aspect-ratio distributions follow the defects'.  The default
    count is the mean number of boxes per defect class.  A draw that cannot be
    placed after ``max_tries`` positions is skipped and logged.
    """
    defects = [r for r in manifest.records if not r.is_background]
    if not defects:
        raise ValueError("background sampling needs defect boxes")
    if count is None:
        count = int(round(np.mean(manifest.class_counts()[1:])))
    by_image: dict[str, list] = {}
    for r in manifest.records:
        by_image.setdefault(r.image_id, []).append(r.box)
    image_ids = sorted(manifest.images)
    added, skipped = [], 0
    for _ in range(count):
        src = defects[rng.integers(len(defects))]
        w, h = src.width, src.height
        placed = False
        for _ in range(max_tries):
            info = manifest.images[image_ids[rng.integers(len(image_ids))]]
            if w > info.width or h > info.height:
                continue
            x0 = int(rng.integers(0, info.width - w + 1))
            y0 = int(rng.integers(0, info.height - h + 1))
            box = (x0, y0, x0 + w, y0 + h)
            if any(intersection_area(box, b) > 0 for b in by_image.get(info.image_id, ())):
                continue
            rec = AnnotationRecord(info.image_id, box, BACKGROUND, info.group)
            by_image.setdefault(info.image_id, []).append(box)  # keep background boxes disjoint too
            added.append(rec)
            placed = True
            break
        if not placed:
            skipped += 1
            log.info("no free position for a %dx%d background box after %d tries", w, h, max_tries)
    if skipped:
        log.warning("skipped %d of %d background boxes", skipped, count)
    if add:
        manifest.records.extend(added)
    return added
