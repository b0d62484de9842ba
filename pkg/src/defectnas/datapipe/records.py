"""Annotation records, the dataset manifest and the Pascal-VOC reader."""
from __future__ import annotations

import json
import logging
import os
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field

log = logging.getLogger(__name__)

CLASSES = ("background", "crack", "spallation", "efflorescence", "exposed_bars", "corrosion_stain")
DEFECTS = CLASSES[1:]

_ALIASES = {
    "background": "background",
    "crack": "crack",
    "cracks": "crack",
    "delamination": "crack",  # folded into crack at annotation time
    "spallation": "spallation",
    "efflorescence": "efflorescence",
    "exposedbars": "exposed_bars",
    "exposed_bars": "exposed_bars",
    "bars": "exposed_bars",
    "corrosionstain": "corrosion_stain",
    "corrosion_stain": "corrosion_stain",
    "corrosion": "corrosion_stain",
}
# object names that carry their labels in per-class child tags
_CONTAINER_NAMES = {"defect", "defects", "object", ""}


class DataError(ValueError):
    """Malformed or inconsistent annotation data."""


def canonical_class(name: str) -> str:
    key = name.strip().lower().replace(" ", "_").replace("-", "_")
    if key in _ALIASES:
        return _ALIASES[key]
    key = key.replace("_", "")
    if key in _ALIASES:
        return _ALIASES[key]
    raise DataError(f"unknown class name {name!r}")


def label_vector(names) -> tuple[int, ...]:
    """Six binary flags from a collection of class names; background excludes defects."""
    flags = [0] * len(CLASSES)
    for n in names:
        flags[CLASSES.index(canonical_class(n))] = 1
    if any(flags[1:]):
        flags[0] = 0
    if not any(flags):
        raise DataError("a label needs at least one class")
    return tuple(flags)


@dataclass
class ImageInfo:
    image_id: str
    path: str
    width: int
    height: int
    group: str | None = None


@dataclass
class AnnotationRecord:
    image_id: str
    box: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max
    labels: tuple[int, ...]
    group: str | None = None

    @property
    def width(self):
        return self.box[2] - self.box[0]

    @property
    def height(self):
        return self.box[3] - self.box[1]

    @property
    def is_background(self):
        return bool(self.labels[0])


@dataclass
class DatasetManifest:
    images: dict = field(default_factory=dict)  # image id -> ImageInfo
    records: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)  # record index -> "train" | "val" | "test"

    def class_counts(self, indices=None):
        idx = range(len(self.records)) if indices is None else indices
        counts = [0] * len(CLASSES)
        for i in idx:
            for c, f in enumerate(self.records[i].labels):
                counts[c] += f
        return counts

    def split_indices(self, name):
        return [i for i, s in sorted(self.splits.items()) if s == name]

    def dump(self, path):
        with open(path, "w") as fh:
            for info in self.images.values():
                fh.write(json.dumps({"type": "image", **asdict(info)}) + "\n")
            for i, r in enumerate(self.records):
                rec = {"type": "box", "image_id": r.image_id, "box": list(r.box), "labels": list(r.labels),
                       "group": r.group}
                if i in self.splits:
                    rec["split"] = self.splits[i]
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path):
        m = cls()
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: {exc}") from None
                kind = d.pop("type", None)
                if kind == "image":
                    m.images[d["image_id"]] = ImageInfo(**d)
                elif kind == "box":
                    split = d.pop("split", None)
                    if split is not None:
                        m.splits[len(m.records)] = split
                    m.records.append(AnnotationRecord(d["image_id"], tuple(d["box"]), tuple(d["labels"]),
                                                      d.get("group")))
                else:
                    raise DataError(f"{path}:{n}: unknown record type {kind!r}")
        return m


def _int(node, tag, where):
    el = node.find(tag)
    if el is None or el.text is None:
        raise DataError(f"{where}: missing <{tag}>")
    try:
        return int(round(float(el.text)))
    except ValueError:
        raise DataError(f"{where}: <{tag}> is not a number: {el.text!r}") from None


def _object_classes(obj, where):
    """Class names attached to one <object>: its name(s) plus any per-class 0/1 child tags."""
    names = []
    raw = (obj.findtext("name") or "").strip()
    for part in raw.replace("+", ",").split(","):
        if part.strip() and part.strip().lower() not in _CONTAINER_NAMES:
            names.append(part)
    for child in obj:
        if child.tag in ("name", "bndbox", "pose", "truncated", "difficult", "occluded"):
            continue
        try:
            cls_name = canonical_class(child.tag)
        except DataError:
            continue
        if (child.text or "").strip() in ("1", "true", "True"):
            names.append(cls_name)
    if not names:
        raise DataError(f"{where}: object without any class")
    return names


def parse_voc_file(path, group=None):
    """One image's ImageInfo and merged per-box AnnotationRecords."""
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise DataError(f"{path}: malformed XML ({exc})") from None
    filename = root.findtext("filename") or os.path.splitext(os.path.basename(path))[0] + ".jpg"
    size = root.find("size")
    if size is None:
        raise DataError(f"{path}: missing <size>")
    width, height = _int(size, "width", path), _int(size, "height", path)
    image_id = os.path.splitext(filename)[0]
    group = root.findtext("bridge") or root.findtext("group") or group
    info = ImageInfo(image_id, os.path.join(os.path.dirname(path), filename), width, height, group)
    merged: dict[tuple, set] = {}
    for k, obj in enumerate(root.iter("object")):
        where = f"{path} object {k}"
        bb = obj.find("bndbox")
        if bb is None:
            raise DataError(f"{where}: missing <bndbox>")
        box = tuple(_int(bb, t, where) for t in ("xmin", "ymin", "xmax", "ymax"))
        x0, y0, x1, y1 = box
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise DataError(f"{where}: box {box} outside a {width}x{height} image or empty")
        merged.setdefault(box, set()).update(canonical_class(n) for n in _object_classes(obj, where))
    records = [AnnotationRecord(image_id, box, label_vector(names), group) for box, names in merged.items()]
    return info, records


def parse_annotations(directory) -> DatasetManifest:
    """Read every ``*.xml`` below ``directory`` into a manifest.

    Objects sharing one box are merged into a single multi-target record.
    A top-level directory name is used as the group (bridge) id when the XML
    carries none and the annotations live in per-group subdirectories.
    """
    m = DatasetManifest()
    files = []
    for dirpath, _, names in os.walk(directory):
        files.extend(os.path.join(dirpath, n) for n in names if n.lower().endswith(".xml"))
    if not files:
        log.warning("no annotation files found in %s", directory)
        return m
    for path in sorted(files):
        rel = os.path.relpath(os.path.dirname(path), directory)
        group = rel.split(os.sep)[0] if rel != "." else None
        info, records = parse_voc_file(path, group)
        if info.image_id in m.images:
            raise DataError(f"{path}: duplicate image id {info.image_id!r}")
        m.images[info.image_id] = info
        m.records.extend(records)
    return m


def write_voc(path, filename, width, height, boxes, group=None):
    """Write one annotation file with one object per box, classes as 0/1 child tags."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = filename
    if group is not None:
        ET.SubElement(root, "bridge").text = str(group)
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(width)
    ET.SubElement(size, "height").text = str(height)
    ET.SubElement(size, "depth").text = "3"
    for box, labels in boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = "Defect"
        bb = ET.SubElement(obj, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), box):
            ET.SubElement(bb, tag).text = str(int(v))
        for name, flag in zip(CLASSES, labels):
            ET.SubElement(obj, name.title().replace("_", "")).text = str(int(flag))
    ET.ElementTree(root).write(path)
