"""Command-line front end: ``defectnas <command> [args] [-c config.ini] [--set key=value ...]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .. import arch_graph as ag
from .. import datapipe as dp
from ..enas import ControllerRnn, EnasConfig, derive_final, run_enas_search
from ..enas.space import SharedWeightBank
from ..metaqnn import EpsilonSchedule, MetaQNNConfig, SearchSpace, conv_count_reward, run_metaqnn_search
from ..network import Network
from ..tensor_core import NumericError
from ..trainer import (
    CLASS_NAMES,
    DataBundle,
    Split,
    SgdwrSchedule,
    TrainConfig,
    evaluate,
    format_grid_table,
    run_grid_search,
    select_best,
    train_child,
)
from . import plots
from .config import ConfigError, append_record, derive_seed, make_record, parse_config

log = logging.getLogger("defectnas")

COMMANDS = ("ingest", "stats", "splits", "synth", "train", "grid", "search-metaqnn", "search-enas",
            "derive", "eval", "params")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers ------------------------------------------------------------------

def _out(config, name):
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


def _emit(rows, path=None, header=None):
    """Tab-separated rows on stdout, optionally mirrored to a CSV file."""
    rows = list(rows)
    if header is None and rows and isinstance(rows[0], dict):
        header = list(rows[0])
    if header:
        print("\t".join(header))
    for r in rows:
        vals = [r.get(h) for h in header] if isinstance(r, dict) else list(r)
        print("\t".join("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)) for v in vals))
    if path:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if header:
                w.writerow(header)
            for r in rows:
                w.writerow([r.get(h) for h in header] if isinstance(r, dict) else list(r))


def _record(config, command, metrics):
    append_record(_out(config, "runs.jsonl"), make_record(command, config, metrics))


def resolve_architecture(name, patch_size=224):
    """A predefined architecture name or a path to a text-form graph file."""
    if os.path.exists(name):
        with open(name) as fh:
            return ag.decode_text(fh.read())
    return ag.predefined_architecture(name, patch_size)


def train_config(config, patch_size, seed_component="train") -> TrainConfig:
    t = config.values["train"]
    sched = SgdwrSchedule(t["lr_max"], t["lr_min"], t0=t["t0"], cycles=t["cycles"])
    return TrainConfig(batch_size=t["batch"], patch_size=patch_size, momentum=t["momentum"], dropout=t["dropout"],
                       bn_eps=t["bn_eps"], schedule=sched, seed=derive_seed(config.seed, seed_component),
                       early_stop=t["early_stop"], threshold=t["threshold"])


def load_data(config) -> DataBundle:
    """Arrays from a ``.npz`` bundle, or patches cut from a manifest that carries splits."""
    path = config["data.data"]
    if not path:
        raise dp.DataError("no dataset configured; set data=<bundle.npz | manifest.jsonl>")
    if not os.path.exists(path):
        raise dp.DataError(f"dataset not found: {path}")
    if path.endswith(".npz"):
        return dp.load_arrays(path)
    manifest = dp.DatasetManifest.load(path)
    if not manifest.splits:
        raise dp.DataError(f"{path}: manifest has no splits; run 'splits' first")
    patch = config["data.patch"]
    rng = np.random.default_rng(derive_seed(config.seed, "patches"))
    parts = {}
    for name in dp.splits.SPLITS:
        idx = manifest.split_indices(name)
        if not idx:
            parts[name] = None
            continue
        x, y = dp.load_patches(manifest, idx, patch, "train" if name == "train" else "eval", rng)
        order = None
        if name == "train" and config["data.balance"]:
            order = np.asarray(dp.balance_by_replication([manifest.records[i] for i in idx]))
        parts[name] = Split(x, y, order)
    if parts.get("train") is None or parts.get("val") is None:
        raise dp.DataError(f"{path}: train and val splits must be non-empty")
    return DataBundle(parts["train"], parts["val"], parts.get("test"))


def save_controller(path, ctl: ControllerRnn):
    np.savez(path, hidden=ctl.hidden, embed=ctl.embed, **{f"p.{k}": v for k, v in ctl.arrays.items()})


def load_controller(path) -> ControllerRnn:
    with np.load(path) as z:
        ctl = ControllerRnn(np.random.default_rng(0), int(z["hidden"]), int(z["embed"]))
        for k in ctl.arrays:
            ctl.arrays[k][...] = z[f"p.{k}"]
    return ctl


def save_bank(path, bank: SharedWeightBank):
    state = {"base_features": bank.base_features, "patch_size": bank.patch_size}
    for (node, op), p in bank.entries.items():
        state.update(p.state_dict(f"n{node}.o{op}."))
    state.update(bank.classifier.state_dict("classifier."))
    np.savez(path, **state)


def load_bank(path) -> SharedWeightBank:
    with np.load(path) as z:
        bank = SharedWeightBank(np.random.default_rng(0), int(z["base_features"]), int(z["patch_size"]))
        keys = {tuple(int(v[1:]) for v in k.split(".")[:2]) for k in z.files if k.startswith("n")}
        for node, op in sorted(keys):
            bank.entry(node, op).load_state_dict(z, f"n{node}.o{op}.")
        bank.classifier.load_state_dict(z, "classifier.")
    return bank


# -- commands -----------------------------------------------------------------

def cmd_ingest(args, config):
    manifest = dp.parse_annotations(args.directory)
    added = 0
    if config["data.background"] and manifest.records:
        rng = np.random.default_rng(derive_seed(config.seed, "background"))
        added = len(dp.sample_background_boxes(manifest, rng))
    path = args.output or _out(config, "manifest.jsonl")
    manifest.dump(path)
    counts = dict(zip(dp.CLASSES, manifest.class_counts()))
    _emit([{"class": k, "boxes": v} for k, v in counts.items()])
    print(f"# {len(manifest.images)} images, {len(manifest.records)} boxes ({added} background) -> {path}")
    _record(config, "ingest", {"manifest": path, "images": len(manifest.images), "boxes": len(manifest.records),
                               "class_counts": counts})


def cmd_stats(args, config):
    manifest = dp.DatasetManifest.load(args.manifest)
    stats = dp.compute_stats(manifest)
    rows = dp.stats_records(stats)
    _emit(rows, _out(config, "stats.csv"), header=["stat", "bin", "count"])
    if stats["boxes"]:
        fig = plots.plot_stats(stats, _out(config, "stats.png"))
        print(f"# figure: {fig}")
    published = [c for c in dp.DEFECTS if stats["class_counts"].get(c) != dp.PUBLISHED_COUNTS[c]]
    if not published:
        print("# per-class counts match the published dataset totals")
    _record(config, "stats", {"boxes": stats["boxes"], "images": stats["images"],
                              "class_counts": stats["class_counts"]})


def cmd_splits(args, config):
    manifest = dp.DatasetManifest.load(args.manifest)
    rng = np.random.default_rng(derive_seed(config.seed, "splits"))
    mode = args.mode or config["data.split_mode"]
    try:
        result = dp.make_splits(manifest, mode, config["data.target"], rng, config["data.val_groups"],
                                config["data.test_groups"])
    except dp.SplitInfeasible as exc:
        counts = exc.report["counts"]
        _emit([{"class": c, "available": a, "val": v, "test": t} for c, a, v, t in
               zip(dp.CLASSES, exc.report["available"], counts["val"], counts["test"])])
        raise dp.DataError(str(exc)) from None
    path = args.output or args.manifest
    manifest.dump(path)
    rows = [{"split": s, **dict(zip(dp.CLASSES, result.counts[s]))} for s in dp.splits.SPLITS]
    _emit(rows, _out(config, "splits.csv"))
    _record(config, "splits", {"mode": mode, "manifest": path, "counts": result.counts})


def cmd_synth(args, config):
    s = config.values["synth"]
    n = s["samples"]
    counts = tuple(n // 6 + (1 if i < n % 6 else 0) for i in range(6))
    spec = dp.SyntheticSpec(derive_seed(config.seed, "synth") % (2 ** 32), counts, s["size"], s["cooccurrence"],
                            s["noise"], s["contrast"])
    data = dp.synthesize_dataset(spec)
    bundle = dp.split_arrays(data, s["fractions"], derive_seed(config.seed, "synth-split") % (2 ** 32))
    path = args.output or _out(config, "synthetic.npz")
    dp.save_arrays(path, bundle)
    rows = [{"split": name, "samples": len(getattr(bundle, name)),
             **dict(zip(dp.CLASSES, getattr(bundle, name).y.sum(0).astype(int).tolist()))}
            for name in ("train", "val", "test") if getattr(bundle, name) is not None]
    _emit(rows)
    print(f"# arrays -> {path}")
    metrics = {"arrays": path, "samples": int(len(data.x))}
    if s["corpus_images"]:
        corpus = _out(config, "corpus")
        written = dp.write_synthetic_corpus(corpus, s["corpus_images"],
                                            np.random.default_rng(derive_seed(config.seed, "corpus")))
        print(f"# corpus with {written} defect boxes -> {corpus}")
        metrics["corpus"] = corpus
    _record(config, "synth", metrics)


def _history_rows(hist):
    return [{k: getattr(e, k) for k in ("epoch", "lr", "train_loss", "train_acc", "val_acc", "test_acc")}
            for e in hist.epochs]


def cmd_train(args, config):
    data = load_data(config)
    patch = data.train.x.shape[-1]
    graph = resolve_architecture(args.architecture, patch)
    tc = train_config(config, patch)
    stem = args.name or (graph.name or "model")
    hist, net = train_child(graph, data, tc, on_epoch=lambda e: log.info("epoch %d val %.4f", e.epoch, e.val_acc))
    rows = _history_rows(hist)
    _emit(rows, _out(config, f"{stem}-history.csv"))
    np.savez(_out(config, f"{stem}-weights.npz"), **net.state_dict())
    fig = plots.plot_history(rows, _out(config, f"{stem}-history.png"), stem)
    metrics = {"architecture": ag.one_line(graph), "best_val": hist.best_val, "bv_test": hist.bv_test,
               "bv_train": hist.bv_train, "best_epoch": hist.best_epoch, "early_stopped": hist.early_stopped}
    print(f"# best val {hist.best_val:.4f} at epoch {hist.best_epoch}; figure: {fig}")
    _record(config, "train", metrics)


def cmd_grid(args, config):
    data = load_data(config)
    patch = data.train.x.shape[-1]
    graph = resolve_architecture(args.architecture, patch)
    g = config.values["grid"]
    lr = g["lr_ranges"]
    if len(lr) % 2:
        raise ConfigError("grid.lr_ranges needs (max, min) pairs")
    ranges = tuple(zip(lr[0::2], lr[1::2]))
    cells = run_grid_search(graph, data, train_config(config, patch), g["batches"], ranges)
    print(format_grid_table(cells, graph.name))
    rows = [c.__dict__ for c in cells]
    _emit(rows, _out(config, "grid.csv"))
    plots.plot_grid(cells, _out(config, "grid.png"), graph.name or "grid")
    best = select_best(cells)
    _record(config, "grid", {"architecture": ag.one_line(graph), "cells": rows, "best": best.__dict__})


def metaqnn_config(config, patch_size):
    m = config.values["metaqnn"]
    if len(m["epsilons"]) != len(m["counts"]):
        raise ConfigError("metaqnn.epsilons and metaqnn.counts must have equal length")
    schedule = EpsilonSchedule(tuple(zip(m["epsilons"], m["counts"]))) if m["counts"] else EpsilonSchedule()
    space = SearchSpace(m["kernels"], m["features"], m["dense"], m["spp_scales"], m["min_conv"], m["max_conv"],
                        patch_size)
    return MetaQNNConfig(schedule, space, m["alpha"], 1.0, m["q_init"], m["replay"],
                         derive_seed(config.seed, "metaqnn"))


def cmd_search_metaqnn(args, config):
    surrogate = args.surrogate or config["metaqnn.surrogate"]
    if surrogate:
        patch = config["data.patch"]
        data = None
    else:
        data = load_data(config)
        patch = data.train.x.shape[-1]
    mc = metaqnn_config(config, patch)
    log_path = _out(config, "metaqnn-records.jsonl")
    if surrogate:
        def evaluator(graph):
            return conv_count_reward(graph, mc.space)
    else:
        tc = train_config(config, patch, "metaqnn-child")

        def evaluator(graph):
            hist, _ = train_child(graph, data, tc)
            return None if hist.early_stopped else hist.best_val

    def on_record(rec):
        append_record(log_path, rec)
        log.info("arch %d (%s): reward %s", rec["index"], rec["status"], rec["reward"])

    records, q, _ = run_metaqnn_search(mc, evaluator, on_record)
    done = [r for r in records if r["status"] == "ok"]
    _emit([{k: r[k] for k in ("index", "epsilon", "reward", "params", "layers", "dsl")} for r in done],
          _out(config, "metaqnn.csv"))
    plots.plot_rewards(done, _out(config, "metaqnn-rewards.png"), title="Q-learning search")
    top = sorted(done, key=lambda r: -r["reward"])[: config["derive.top"]]
    for i, r in enumerate(top, 1):
        graph = ag.from_one_line(r["dsl"])
        with open(_out(config, f"metaqnn-top{i}.arch"), "w") as fh:
            fh.write(ag.encode_text(graph))
    _record(config, "search-metaqnn", {"surrogate": bool(surrogate), "architectures": len(done),
                                       "samples": len(records), "q_entries": len(q.values),
                                       "top": [{"reward": r["reward"], "dsl": r["dsl"]} for r in top]})


def enas_config(config):
    e = config.values["enas"]
    sched = SgdwrSchedule(e["enas_lr_max"], e["enas_lr_min"], t0=e["enas_t0"], cycles=e["enas_cycles"])
    return EnasConfig(sched, e["enas_batch"], e["base_features"], config["train.momentum"], e["controller_lr"],
                      e["entropy_weight"], e["baseline_decay"], e["controller_steps"] or None,
                      threshold=config["train.threshold"], seed=derive_seed(config.seed, "enas") % (2 ** 32))


def cmd_search_enas(args, config):
    data = load_data(config)
    ec = enas_config(config)
    log_path = _out(config, "enas-records.jsonl")
    ctl, bank, epochs = run_enas_search(ec, data.train, data.val, on_epoch=lambda r: log.info("enas epoch %s", r),
                                        on_record=lambda r: append_record(log_path, r))
    save_controller(_out(config, "controller.npz"), ctl)
    save_bank(_out(config, "shared-weights.npz"), bank)
    _emit(epochs, _out(config, "enas-epochs.csv"))
    with open(log_path) as fh:
        steps = [json.loads(line) for line in fh if line.strip()]
    plots.plot_rewards(steps, _out(config, "enas-rewards.png"), title="shared-weight search")
    _record(config, "search-enas", {"epochs": epochs, "controller": _out(config, "controller.npz")})


def cmd_derive(args, config):
    ctl = load_controller(args.controller)
    bank = load_bank(args.bank) if args.bank else None
    data = load_data(config) if bank is not None or config["derive.retrain"] else None
    patch = data.train.x.shape[-1] if data is not None else config["data.patch"]
    rng = np.random.default_rng(derive_seed(config.seed, "derive"))
    base = bank.base_features if bank is not None else config["enas.base_features"]
    top = derive_final(ctl, config["derive.top"], rng, bank, data.val if bank is not None else None,
                       config["derive.pool"], base, patch, config["train.threshold"])
    rows = []
    for i, (graph, score, _) in enumerate(top, 1):
        path = _out(config, f"enas-top{i}.arch")
        with open(path, "w") as fh:
            fh.write(ag.encode_text(graph))
        rep = ag.infer_shapes(graph)
        row = {"rank": i, "score": score, "params": rep.param_count, "layers": rep.layer_count, "file": path}
        if config["derive.retrain"]:
            hist, _ = train_child(graph, data, train_config(config, patch, f"derive-{i}"))
            row.update(best_val=hist.best_val, bv_test=hist.bv_test)
        rows.append(row)
    _emit(rows, _out(config, "derive.csv"))
    _record(config, "derive", {"derived": rows})


def cmd_eval(args, config):
    data = load_data(config)
    patch = data.train.x.shape[-1]
    graph = resolve_architecture(args.architecture, patch)
    tc = train_config(config, patch)
    net = Network(graph, input_size=patch)
    with np.load(args.weights) as z:
        net.load_state_dict(z)
    split = getattr(data, args.split)
    if split is None:
        raise dp.DataError(f"dataset has no {args.split} split")
    rep = evaluate(net, split, tc, with_report=True)
    rows = [{"class": c, "accuracy": float(a)} for c, a in zip(CLASS_NAMES, rep.per_class)]
    rows += [{"class": "average", "accuracy": rep.average}, {"class": "multi-target", "accuracy": rep.multi_target}]
    _emit(rows, _out(config, f"eval-{args.split}.csv"))
    _record(config, "eval", {"split": args.split, **rep.as_dict()})


def cmd_params(args, config):
    graph = resolve_architecture(args.architecture, config["data.patch"])
    rep = ag.infer_shapes(graph)
    line = f"{rep.millions:.2f}M, {rep.layer_count} layers"
    published = ag.PUBLISHED.get(args.architecture.lower())
    if published is not None:
        diff = 100 * (rep.millions - published[0]) / published[0]
        line += f"  (published {published[0]:.2f}M, {published[1]} layers; {diff:+.2f}%)"
    print(line)


HANDLERS = {
    "ingest": cmd_ingest, "stats": cmd_stats, "splits": cmd_splits, "synth": cmd_synth, "train": cmd_train,
    "grid": cmd_grid, "search-metaqnn": cmd_search_metaqnn, "search-enas": cmd_search_enas,
    "derive": cmd_derive, "eval": cmd_eval, "params": cmd_params,
}


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", help="key = value config file with [section] headers")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (bare key or section.key); repeatable")
    common.add_argument("-o", "--out", help="output directory (default: $DEFECTNAS_OUT or ./runs)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="defectnas", description="Architecture search and training for multi-target defect "
                                               "classification.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    s = sub.add_parser("ingest", parents=[common], help="parse an annotation tree into a manifest")
    s.add_argument("directory")
    s.add_argument("--output")
    s = sub.add_parser("stats", parents=[common], help="box statistics and figures for a manifest")
    s.add_argument("manifest")
    s = sub.add_parser("splits", parents=[common], help="assign train/val/test splits to a manifest")
    s.add_argument("manifest")
    s.add_argument("--mode", choices=("per-image", "per-group"))
    s.add_argument("--output")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic multi-target dataset")
    s.add_argument("--output")
    for name in ("train", "grid"):
        s = sub.add_parser(name, parents=[common], help=f"{name} an architecture (name or graph file)")
        s.add_argument("architecture")
        if name == "train":
            s.add_argument("--name", help="file stem for outputs")
    s = sub.add_parser("search-metaqnn", parents=[common], help="Q-learning architecture search")
    s.add_argument("--surrogate", action="store_true", help="score by conv depth instead of training")
    sub.add_parser("search-enas", parents=[common], help="shared-weight search with an RNN controller")
    s = sub.add_parser("derive", parents=[common], help="sample final architectures from a trained controller")
    s.add_argument("controller")
    s.add_argument("--bank", help="shared weights to rank candidates on the validation split")
    s = sub.add_parser("eval", parents=[common], help="evaluate saved weights")
    s.add_argument("architecture")
    s.add_argument("weights")
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s = sub.add_parser("params", parents=[common], help="parameter and layer count of an architecture")
    s.add_argument("architecture")
    return p


def dispatch(command, config, args) -> int:
    handler = HANDLERS.get(command)
    if handler is None:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        handler(args, config)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ag.UnknownArchitecture, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (dp.DataError, ag.DSLError, FileNotFoundError, OSError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"global.out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"global.seed={args.seed}")
    try:
        config = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    start = time.time()
    status = dispatch(args.command, config, args)
    log.info("%s finished with status %d in %.1fs", args.command, status, time.time() - start)
    return status


if __name__ == "__main__":
    sys.exit(main())
