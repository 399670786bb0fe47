"""Command-line surface: generate, preprocess, train, eval, infer, vote-ablation, gradcheck.

Every command exits 0 on success. Failures print one categorized line on
stderr and exit with: 2 config error, 3 data error, 4 format error, 5 io
error. All outputs are deterministic functions of (inputs, seed).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import dataio, evaluation
from .config import load_run_config
from .das import PreprocessStats
from .errors import (ConfigError, DataIntegrityError, FormatError, StructuralError,
                     TcdFernError)
from .model import end_to_end_grad_check
from .pipeline import dataset_samples, pair_reference, star_topology
from .synth import build_datasets, pairs_for
from .training import labels_of, predict_probs, train
from .voting import PairPrediction, predict_rooms, smooth_decisions


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcdfern",
                                     description="multi-room WiFi-CSI presence detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset (train/test/manifest)")
    _common(p)
    p.add_argument("--scenario", choices=("two-room", "three-room"), required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--train-ticks", type=int, dest="train_ticks")
    p.add_argument("--test-ticks", type=int, dest="test_ticks")

    p = sub.add_parser("preprocess", help="window a dataset and report statistics")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)

    p = sub.add_parser("train", help="train one model per transmission pair")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report path prefix (.kv/.txt)")
    p.add_argument("--threads", type=int)

    p = sub.add_parser("infer", help="emit per-window room decisions")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int)
    p.add_argument("--smooth", type=int, help="majority window (0 = off)")

    p = sub.add_parser("vote-ablation", help="TX accuracy per pair vs after voting")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--threads", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _common(p)
    p.add_argument("--tiny", action="store_true",
                   help="desk-scale config (the supported profile)")
    return parser


def _load_cfg(args, extra: dict | None = None):
    overrides = {"seed": getattr(args, "seed", None)}
    if extra:
        overrides.update(extra)
    return load_run_config(getattr(args, "config", None), overrides)


def cmd_generate(args) -> int:
    cfg = _load_cfg(args, {"train_ticks": args.train_ticks, "test_ticks": args.test_ticks})
    gcfg = cfg.gen_config(pairs=pairs_for(args.scenario))
    train_ds, test_ds, manifest = build_datasets(
        args.scenario, cfg["train_ticks"], cfg["test_ticks"], gcfg)
    dataio.write_dataset(train_ds, args.out + ".train.csib")
    dataio.write_dataset(test_ds, args.out + ".test.csib")
    manifest = manifest[:2] + [("train_file", args.out + ".train.csib"),
                               ("test_file", args.out + ".test.csib")] + manifest[2:]
    dataio.write_manifest(args.out + ".manifest.txt", manifest)
    print(f"wrote {args.out}.train.csib, {args.out}.test.csib, {args.out}.manifest.txt")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_cfg(args)
    ds = dataio.read_dataset(args.data)
    stats = PreprocessStats()
    per_pair = dataset_samples(ds, cfg.preprocess_config(), stats=stats)
    entries: list[tuple[str, object]] = [
        ("data_file", args.data),
        ("n_ticks", ds.header.n_ticks), ("pairs", ds.header.p),
        ("tau", cfg["tau"]), ("stride", cfg["stride"]),
        ("degenerate_columns", stats.degenerate_columns),
        ("short_segments", stats.short_streams),
    ]
    for pid, samples in per_pair.items():
        entries.append((f"pair{pid}_windows", len(samples)))
        counts: dict[int, int] = {}
        for s in samples:
            counts[s.label] = counts.get(s.label, 0) + 1
        for case in sorted(counts):
            entries.append((f"pair{pid}_windows_case_{case}", counts[case]))
        try:
            ref = pair_reference(ds, pid, cfg["ref_count"])
            entries.append((f"pair{pid}_reference_mean", float(ref.vector.mean())))
        except StructuralError:
            entries.append((f"pair{pid}_reference_mean", "unavailable"))
    dataio.write_report(args.report, entries)
    print(f"wrote {args.report}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    ds = dataio.read_dataset(args.data)
    per_pair = dataset_samples(ds, cfg.preprocess_config())
    models = {}
    for pid in sorted(per_pair):
        ref = pair_reference(ds, pid, cfg["ref_count"])
        params, history = train(per_pair[pid], ref, cfg.model_config(), cfg.train_config())
        models[pid] = params
        status = "diverged" if history.diverged else "ok"
        best = history.val_accuracy[history.best_epoch] if history.val_accuracy else float("nan")
        print(f"pair {pid}: {status}, epochs {len(history.train_loss)}, "
              f"best val accuracy {best:.4f}")
    dataio.save_checkpoint(models, args.out, seed=cfg["seed"])
    print(f"wrote {args.out}")
    return 0


def _aligned_predictions(models, per_pair, threads):
    """Per-pair probabilities on the window ends every pair shares."""
    pair_ids = sorted(per_pair)
    tick_sets = [set(s.end_tick for s in per_pair[pid]) for pid in pair_ids]
    common = sorted(set.intersection(*tick_sets)) if tick_sets else []
    probs, labels = {}, {}
    for pid in pair_ids:
        samples = {s.end_tick: s for s in per_pair[pid]}
        aligned = [samples[t] for t in common]
        probs[pid] = predict_probs(models[pid], aligned, threads=threads)
        labels[pid] = np.array([s.label for s in aligned]) if all(
            s.label is not None for s in aligned) else None
    return common, probs, labels


def cmd_eval(args) -> int:
    cfg = _load_cfg(args, {"threads": args.threads})
    ds = dataio.read_dataset(args.data)
    models, _ = dataio.load_checkpoint(args.ckpt, cfg.model_config())
    if sorted(models) != list(range(1, ds.header.p + 1)):
        raise StructuralError(
            f"checkpoint pairs {sorted(models)} do not match dataset pairs 1..{ds.header.p}")
    per_pair = dataset_samples(ds, cfg.preprocess_config())
    common, probs, labels = _aligned_predictions(models, per_pair, cfg["threads"])

    entries: list[tuple[str, object]] = [("data_file", args.data), ("windows", len(common))]
    tables = {}
    for pid in sorted(models):
        if labels[pid] is None:
            continue
        preds4 = probs[pid].argmax(axis=1) + 1
        labels4 = labels[pid]
        for scenario in (1, 2, 3):
            p, l = evaluation.regroup_scenario(preds4, labels4, scenario)
            if len(l) == 0:
                continue
            rep = evaluation.metrics(
                evaluation.confusion(p, l, evaluation.SCENARIO_CLASSES[scenario]))
            tables[f"pair{pid} scenario{scenario}"] = rep
            prefix = f"pair{pid}.scenario{scenario}"
            entries += [(f"{prefix}.accuracy", rep.accuracy),
                        (f"{prefix}.precision", rep.macro_precision),
                        (f"{prefix}.recall", rep.macro_recall),
                        (f"{prefix}.f1", rep.macro_f1)]
        cm = evaluation.confusion(preds4 - 1, labels4 - 1, 4)
        entries.append((f"pair{pid}.confusion", " ".join(map(str, cm.counts.ravel()))))
        # RX-room binary accuracy for this pair
        rx_truth = np.isin(labels4, (3, 4)).astype(int)
        rx_pred = np.isin(preds4, (3, 4)).astype(int)
        entries.append((f"pair{pid}.rx_room_accuracy", float((rx_truth == rx_pred).mean())))
    if len(models) >= 2 and all(labels[p] is not None for p in models):
        tx_truth = np.isin(labels[1], (2, 4)).astype(int)
        rep = evaluation.voting_ablation(probs, tx_truth)
        for i, acc in enumerate(rep.per_pair_accuracy, start=1):
            entries.append((f"tx_room.pair{i}_accuracy", acc))
        entries += [("tx_room.voted_accuracy", rep.voted_accuracy),
                    ("tx_room.gain_over_mean", rep.gain_over_mean),
                    ("tx_room.gain_over_worst", rep.gain_over_worst)]
    dataio.write_report(args.report + ".kv", entries)
    with open(args.report + ".txt", "w") as f:
        f.write(evaluation.format_metric_table("evaluation", tables))
    print(f"wrote {args.report}.kv and {args.report}.txt")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args, {"threads": args.threads, "smooth": args.smooth})
    ds = dataio.read_dataset(args.data)
    models, _ = dataio.load_checkpoint(args.ckpt, cfg.model_config())
    per_pair = dataset_samples(ds, cfg.preprocess_config())
    common, probs, _ = _aligned_predictions(models, per_pair, cfg["threads"])
    topology = star_topology(ds.header.p)
    rows = []  # tick -> room decisions
    for i, tick in enumerate(common):
        preds = [PairPrediction(pid, probs[pid][i]) for pid in sorted(models)]
        rows.append((tick, predict_rooms(preds, topology)))
    window = cfg["smooth"]
    if window > 1:
        by_room: dict[int, list[bool]] = {}
        for _, decisions in rows:
            for d in decisions:
                by_room.setdefault(d.room_id, []).append(d.occupied)
        smoothed = {room: smooth_decisions(flags, window) for room, flags in by_room.items()}
    with open(args.out, "w") as f:
        for i, (tick, decisions) in enumerate(rows):
            for d in decisions:
                occupied = smoothed[d.room_id][i] if window > 1 else d.occupied
                f.write(f"{tick}, {d.room_id}, {int(occupied)}, {d.confidence:.6f}\n")
    print(f"wrote {args.out} ({len(rows)} windows x {ds.header.p + 1} rooms)")
    return 0


def cmd_vote_ablation(args) -> int:
    cfg = _load_cfg(args, {"threads": args.threads})
    ds = dataio.read_dataset(args.data)
    if ds.header.p < 2:
        raise StructuralError("the voting study needs at least 2 transmission pairs")
    models, _ = dataio.load_checkpoint(args.ckpt, cfg.model_config())
    per_pair = dataset_samples(ds, cfg.preprocess_config())
    common, probs, labels = _aligned_predictions(models, per_pair, cfg["threads"])
    if any(labels[p] is None for p in models):
        raise StructuralError("vote-ablation needs labeled data")
    tx_truth = np.isin(labels[1], (2, 4)).astype(int)
    rep = evaluation.voting_ablation(probs, tx_truth)
    entries: list[tuple[str, object]] = [("windows", len(common))]
    for i, acc in enumerate(rep.per_pair_accuracy, start=1):
        entries.append((f"pair{i}_tx_accuracy", acc))
    entries += [("voted_tx_accuracy", rep.voted_accuracy),
                ("gain_over_mean", rep.gain_over_mean),
                ("gain_over_worst", rep.gain_over_worst)]
    dataio.write_report(args.report, entries)
    pairs_text = " ".join(f"{a:.4f}" for a in rep.per_pair_accuracy)
    print(f"per-pair TX accuracy: {pairs_text}; voted: {rep.voted_accuracy:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    err = end_to_end_grad_check(seed=cfg["seed"])
    print(f"max relative error: {err:.3e}")
    if err >= 1e-3:
        print("gradcheck FAILED (threshold 1e-3)", file=sys.stderr)
        return 1
    return 0


HANDLERS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "vote-ablation": cmd_vote_ablation,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataIntegrityError, StructuralError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 5
    except TcdFernError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
