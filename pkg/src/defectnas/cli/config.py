"""Run configuration: sectioned ``key = value`` files, flag overrides, seeds, run log."""
from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

OUT_ENV = "DEFECTNAS_OUT"


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _floats(text):
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _str(text):
    return str(text).strip()


# section -> key -> (parser, default)
SCHEMA = {
    "global": {
        "seed": (int, 0),
        "out_dir": (_str, ""),
    },
    "data": {
        "data": (_str, ""),  # .npz arrays or a manifest .jsonl with splits
        "patch": (int, 224),
        "background": (_bool, True),
        "split_mode": (_str, "per-image"),
        "target": (int, 150),
        "val_groups": (int, 3),
        "test_groups": (int, 3),
        "balance": (_bool, True),
    },
    "synth": {
        "samples": (int, 2100),
        "size": (int, 32),
        "cooccurrence": (float, 0.0),
        "noise": (float, 0.03),
        "contrast": (float, 1.0),
        "fractions": (_floats, (0.7, 0.15, 0.15)),
        "corpus_images": (int, 0),
    },
    "train": {
        "batch": (int, 16),
        "lr_max": (float, 1e-2),
        "lr_min": (float, 1e-5),
        "t0": (int, 10),
        "cycles": (int, 4),
        "momentum": (float, 0.9),
        "dropout": (float, 0.5),
        "early_stop": (float, 0.15),
        "threshold": (float, 0.5),
        "bn_eps": (float, 1e-4),
    },
    "grid": {
        "batches": (_ints, (16, 32, 64, 128)),
        "lr_ranges": (_floats, (1e-1, 1e-5, 5e-2, 5e-4, 1e-2, 1e-5)),
    },
    "metaqnn": {
        "epsilons": (_floats, ()),  # empty means the full 200-architecture schedule
        "counts": (_ints, ()),
        "kernels": (_ints, (3, 5, 7, 9, 11)),
        "features": (_ints, (32, 64, 128, 256)),
        "dense": (_ints, (32, 64, 128)),
        "spp_scales": (_ints, (3, 4, 5)),
        "min_conv": (int, 3),
        "max_conv": (int, 10),
        "alpha": (float, 0.1),
        "q_init": (float, 0.15),
        "replay": (int, 64),
        "surrogate": (_bool, False),
    },
    "enas": {
        "base_features": (int, 64),
        "enas_batch": (int, 16),
        "enas_lr_max": (float, 5e-2),
        "enas_lr_min": (float, 5e-4),
        "enas_t0": (int, 10),
        "enas_cycles": (int, 5),
        "controller_lr": (float, 1e-3),
        "entropy_weight": (float, 1e-4),
        "baseline_decay": (float, 0.95),
        "controller_steps": (int, 0),  # 0 means one step per validation mini-batch
    },
    "derive": {
        "top": (int, 3),
        "pool": (int, 100),
        "retrain": (_bool, False),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # section -> {key: value}

    def __getitem__(self, dotted):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["global"]["seed"]

    @property
    def out_dir(self) -> str:
        return self.values["global"]["out_dir"] or os.environ.get(OUT_ENV, "") or "runs"

    def as_dict(self):
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in kv.items()}
                for s, kv in self.values.items()}

    def digest(self) -> str:
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _locate(key):
    """Section owning ``key`` (bare or ``section.key``)."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {key!r}")
        return section, name
    owners = [s for s, kv in SCHEMA.items() if key in kv]
    if not owners:
        raise ConfigError(f"unknown config key {key!r}")
    return owners[0], key


def _coerce(section, key, raw):
    parser = SCHEMA[section][key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: bad value {raw!r} ({exc})") from None


def parse_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the file (if given), then ``key=value`` overrides."""
    values = {s: {k: d for k, (_, d) in kv.items()} for s, kv in SCHEMA.items()}
    if path:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, raw in cp.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown config key {section}.{key!r}")
                values[section][key] = _coerce(section, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        section, name = _locate(key.strip())
        values[section][name] = _coerce(section, name, raw.strip())
    return RunConfig(values)


def derive_seed(seed: int, component: str) -> int:
    """Independent 63-bit stream seed per component: sha256 of ``"<seed>/<component>"``."""
    digest = hashlib.sha256(f"{seed}/{component}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# -- run log ------------------------------------------------------------------

def make_record(command, config: RunConfig, metrics, clock=time.time):
    return {"time": clock(), "command": command, "config_hash": config.digest(), "seed": config.seed,
            "config": config.as_dict(), "metrics": metrics}


def append_record(path, record) -> None:
    """Append one JSON line with a single ``write`` on an O_APPEND descriptor."""
    line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        size = os.fstat(fd).st_size
        if size:
            with open(path, "rb") as fh:
                fh.seek(size - 1)
                if fh.read(1) != b"\n":
                    line = "\n" + line  # never glue onto a torn line
        data = line.encode()
        if os.write(fd, data) != len(data):
            raise OSError(f"short write to {path}")
    finally:
        os.close(fd)


def read_records(path, quarantine=True):
    """Parsed records; unparseable lines go to ``<path>.quarantine`` and are dropped from the log."""
    if not os.path.exists(path):
        return []
    with open(path, "rb") as fh:
        raw = fh.read()
    good, bad, kept = [], [], []
    for line in raw.split(b"\n"):
        if not line.strip():
            continue
        try:
            good.append(json.loads(line))
            kept.append(line)
        except (ValueError, UnicodeDecodeError):
            bad.append(line)
    if bad and quarantine:
        with open(path + ".quarantine", "ab") as fh:
            fh.write(b"".join(b + b"\n" for b in bad))
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(b"".join(k + b"\n" for k in kept))
        os.replace(tmp, path)
    return good
