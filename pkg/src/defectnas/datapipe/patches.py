"""Patch extraction: crop the box, rescale its smaller side, take a square crop."""
from __future__ import annotations

import numpy as np
from PIL import Image

MIN_PATCH = 32


def scaled_size(width, height, patch_size):
    """Size after rescaling the smaller side to ``patch_size`` (aspect ratio kept)."""
    small = min(width, height)
    return max(patch_size, round(width * patch_size / small)), max(patch_size, round(height * patch_size / small))


def extract_patch(image, box, patch_size, mode="eval", rng=None):
    """Return a float32 ``3 x P x P`` patch with values in [0, 1].

    ``image`` is a PIL image or an ``H x W x 3`` uint8 array.  Training mode
    takes a uniformly random square crop, evaluation mode the center crop.
    """
    if patch_size < MIN_PATCH:
        raise ValueError(f"patch size must be >= {MIN_PATCH}, got {patch_size}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not isinstance(image, Image.Image):
        image = Image.fromarray(np.asarray(image, dtype=np.uint8))
    x0, y0, x1, y1 = (int(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"degenerate box {box}")
    if x0 < 0 or y0 < 0 or x1 > image.width or y1 > image.height:
        raise ValueError(f"box {box} outside a {image.width}x{image.height} image")
    crop = image.convert("RGB").crop((x0, y0, x1, y1))
    w, h = scaled_size(crop.width, crop.height, patch_size)
    crop = crop.resize((w, h), Image.BILINEAR)
    if mode == "train":
        rng = rng if rng is not None else np.random.default_rng()
        left = int(rng.integers(0, w - patch_size + 1))
        top = int(rng.integers(0, h - patch_size + 1))
    else:
        left, top = (w - patch_size) // 2, (h - patch_size) // 2
    arr = np.asarray(crop, dtype=np.float32)[top:top + patch_size, left:left + patch_size] / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_patches(manifest, indices, patch_size, mode="eval", rng=None):
    """Patches and labels for the given record indices, opening each image once."""
    xs = np.zeros((len(indices), 3, patch_size, patch_size), np.float32)
    ys = np.zeros((len(indices), len(manifest.records[0].labels) if manifest.records else 6), np.float32)
    by_image: dict = {}
    for pos, i in enumerate(indices):
        by_image.setdefault(manifest.records[i].image_id, []).append((pos, i))
    for image_id, items in sorted(by_image.items()):
        with Image.open(manifest.images[image_id].path) as img:
            img = img.convert("RGB")
            for pos, i in items:
                r = manifest.records[i]
                xs[pos] = extract_patch(img, r.box, patch_size, mode, rng)
                ys[pos] = r.labels
    return xs, ys
