"""Procedural stand-in for defect imagery at desk scale.

Each defect class has its own texture drawn on a grey concrete-like base:
thin dark polylines (crack), an irregular dark blob (spallation), bright
mottling (efflorescence), straight thick bars (exposed bars) and an
orange-brown soft stain (corrosion).  Labels are exact by construction.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..trainer import DataBundle, Split
from .records import CLASSES, write_voc


@dataclass
class SyntheticSpec:
    seed: int = 0
    counts: tuple = (350, 350, 350, 350, 350, 350)  # samples whose primary class is each class
    size: int = 32
    cooccurrence: float = 0.0  # chance of adding each other defect to a defect sample
    noise: float = 0.03
    contrast: float = 1.0

    def __post_init__(self):
        if len(self.counts) != len(CLASSES) or min(self.counts) < 0:
            raise ValueError("counts needs one non-negative entry per class")
        if not 0.0 <= self.cooccurrence <= 1.0:
            raise ValueError("cooccurrence must lie in [0, 1]")
        if self.size < 8:
            raise ValueError("image size must be >= 8")


def easy_spec(n=2100, seed=0, size=32):
    """Evenly populated, single-label, low-noise spec."""
    return SyntheticSpec(seed=seed, counts=(n // len(CLASSES),) * len(CLASSES), size=size)


def _mask(size, draw_fn):
    img = Image.new("L", (size, size), 0)
    draw_fn(ImageDraw.Draw(img))
    return np.asarray(img, dtype=np.float32) / 255.0


def _blend(img, mask, color, strength):
    a = np.clip(mask * strength, 0, 1)[..., None]
    return img * (1 - a) + np.asarray(color, np.float32) * a


def _crack(img, rng, s, k):
    def draw(d):
        for _ in range(rng.integers(1, 3)):
            pts = [tuple(rng.uniform(0, s, 2))]
            for _ in range(4):
                pts.append(tuple(np.clip(np.array(pts[-1]) + rng.normal(0, s / 4, 2), 0, s - 1)))
            d.line(pts, fill=255, width=max(1, s // 32))
    return _blend(img, _mask(s, draw), (0.08, 0.08, 0.08), k)


def _spallation(img, rng, s, k):
    cx, cy = rng.uniform(0.3 * s, 0.7 * s, 2)
    r = rng.uniform(0.18, 0.3) * s
    ang = np.sort(rng.uniform(0, 2 * np.pi, 9))
    rad = r * rng.uniform(0.6, 1.2, 9)
    pts = [(cx + a * np.cos(t), cy + a * np.sin(t)) for a, t in zip(rad, ang)]
    m = _mask(s, lambda d: d.polygon(pts, fill=255))
    # rough, darker broken surface
    tex = np.clip((0.28 + 0.08 * rng.standard_normal((s, s, 1))) * np.array([0.9, 0.8, 0.75]), 0, 1)
    return _blend(img, m, tex.astype(np.float32), k)


def _efflorescence(img, rng, s, k):
    cx, cy = rng.uniform(0.25 * s, 0.75 * s, 2)

    def draw(d):
        for _ in range(rng.integers(8, 14)):
            x, y = rng.normal((cx, cy), s / 7)
            rr = rng.uniform(0.03, 0.08) * s
            d.ellipse((x - rr, y - rr, x + rr, y + rr), fill=255)
    return _blend(img, _mask(s, draw), (0.98, 0.98, 0.95), k)


def _bars(img, rng, s, k):
    vertical = rng.random() < 0.5
    width = max(2, s // 10)

    def draw(d):
        for _ in range(rng.integers(1, 3)):
            p = rng.uniform(0.15 * s, 0.85 * s)
            line = [(p, 0), (p, s)] if vertical else [(0, p), (s, p)]
            d.line(line, fill=255, width=width)
    return _blend(img, _mask(s, draw), (0.2, 0.24, 0.32), k)


def _corrosion(img, rng, s, k):
    cx, cy = rng.uniform(0.2 * s, 0.8 * s, 2)
    sig = rng.uniform(0.15, 0.25) * s
    yy, xx = np.mgrid[0:s, 0:s]
    m = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sig ** 2)).astype(np.float32)
    return _blend(img, m, (0.72, 0.36, 0.1), 0.9 * k)


_PAINTERS = (None, _crack, _spallation, _efflorescence, _bars, _corrosion)


def _base(rng, size, noise):
    tone = rng.uniform(0.5, 0.65)
    img = np.full((size, size, 3), tone, np.float32) * np.array([1.0, 0.98, 0.95], np.float32)
    return img + noise * rng.standard_normal((size, size, 1)).astype(np.float32)


def render(labels, rng, size=32, noise=0.03, contrast=1.0):
    """HxWx3 float image in [0, 1] showing every defect flagged in ``labels``."""
    img = _base(rng, size, noise)
    for c in range(1, len(CLASSES)):
        if labels[c]:
            img = _PAINTERS[c](img, rng, size, contrast)
    img = img + noise * rng.standard_normal(img.shape).astype(np.float32)
    return np.clip(img, 0, 1).astype(np.float32)


@dataclass
class SyntheticData:
    x: np.ndarray  # N x 3 x S x S float32
    y: np.ndarray  # N x 6 float32
    primary: np.ndarray


def synthesize_dataset(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    primary = np.repeat(np.arange(len(CLASSES)), spec.counts)
    primary = primary[rng.permutation(len(primary))]
    n = len(primary)
    x = np.zeros((n, 3, spec.size, spec.size), np.float32)
    y = np.zeros((n, len(CLASSES)), np.float32)
    for i, c in enumerate(primary):
        y[i, c] = 1
        if c != 0 and spec.cooccurrence > 0:
            extra = rng.random(len(CLASSES) - 1) < spec.cooccurrence
            y[i, 1:] = np.maximum(y[i, 1:], extra)
        x[i] = render(y[i], rng, spec.size, spec.noise, spec.contrast).transpose(2, 0, 1)
    return SyntheticData(x, y, primary)


def split_arrays(data, fractions=(0.7, 0.15, 0.15), seed=0) -> DataBundle:
    """Random train/val/test split of an in-memory dataset."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data.x))
    n_tr = int(round(fractions[0] * len(perm)))
    n_va = int(round(fractions[1] * len(perm)))
    parts = perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]
    sets = [Split(data.x[p], data.y[p]) for p in parts]
    return DataBundle(sets[0], sets[1], sets[2] if len(parts[2]) else None)


def save_arrays(path, bundle: DataBundle):
    arrays = {}
    for name in ("train", "val", "test"):
        s = getattr(bundle, name)
        if s is not None:
            arrays[f"{name}_x"], arrays[f"{name}_y"] = s.x, s.y
            if s.order is not None:
                arrays[f"{name}_order"] = s.order
    np.savez_compressed(path, **arrays)


def load_arrays(path) -> DataBundle:
    with np.load(path) as z:
        def get(name):
            if f"{name}_x" not in z:
                return None
            order = z[f"{name}_order"] if f"{name}_order" in z else None
            return Split(z[f"{name}_x"], z[f"{name}_y"], order)
        train, val, test = get("train"), get("val"), get("test")
    if train is None or val is None:
        raise ValueError(f"{path}: needs train and val arrays")
    return DataBundle(train, val, test)


def write_synthetic_corpus(directory, n_images=40, rng=None, image_size=160, groups=4, max_boxes=4,
                           cooccurrence=0.2):
    """Write PNG images with painted defect boxes plus one annotation XML per image.

    Images are spread over ``groups`` subdirectories that act as bridge ids.
    Returns the number of defect boxes written.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    written = 0
    for i in range(n_images):
        group = f"bridge{i % groups}"
        gdir = os.path.join(directory, group)
        os.makedirs(gdir, exist_ok=True)
        img = _base(rng, image_size, 0.03)
        boxes = []
        for _ in range(rng.integers(1, max_boxes + 1)):
            w, h = (int(v) for v in rng.integers(image_size // 8, image_size // 3, 2))
            x0 = int(rng.integers(0, image_size - w))
            y0 = int(rng.integers(0, image_size - h))
            box = (x0, y0, x0 + w, y0 + h)
            if any(min(box[2], b[2]) > max(box[0], b[0]) and min(box[3], b[3]) > max(box[1], b[1]) for b, _ in boxes):
                continue
            labels = [0] * len(CLASSES)
            labels[int(rng.integers(1, len(CLASSES)))] = 1
            for c in range(1, len(CLASSES)):
                if rng.random() < cooccurrence:
                    labels[c] = 1
            side = max(w, h)
            patch = render(labels, rng, side, 0.02)
            img[y0:y0 + h, x0:x0 + w] = patch[:h, :w]
            boxes.append((box, labels))
        name = f"img{i:04d}.png"
        Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8)).save(os.path.join(gdir, name))
        write_voc(os.path.join(gdir, f"img{i:04d}.xml"), name, image_size, image_size, boxes, group)
        written += len(boxes)
    return written
