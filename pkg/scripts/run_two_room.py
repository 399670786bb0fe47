#!/usr/bin/env python3
"""End-to-end two-room experiment: generate, train, evaluate, report."""

import argparse
import time

import numpy as np

from tcdfern.evaluation import SCENARIO_CLASSES, confusion, format_metric_table, metrics, regroup_scenario
from tcdfern.model import ModelConfig
from tcdfern.pipeline import PreprocessConfig, dataset_samples, pair_reference
from tcdfern.synth import GenConfig, build_datasets
from tcdfern.training import TrainConfig, labels_of, predict_probs, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--train-ticks", type=int, default=2000)
    ap.add_argument("--test-ticks", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--learning-rate", type=float, default=2e-3)
    ap.add_argument("--stride", type=int, default=1)
    args = ap.parse_args()

    t0 = time.time()
    gcfg = GenConfig(seed=args.seed)
    train_ds, test_ds, _ = build_datasets("two-room", args.train_ticks, args.test_ticks, gcfg)
    pp = PreprocessConfig(stride=args.stride)
    train_samples = dataset_samples(train_ds, pp)[1]
    test_samples = dataset_samples(test_ds, pp)[1]
    ref = pair_reference(train_ds, 1)
    print(f"samples: {len(train_samples)} train / {len(test_samples)} test "
          f"({time.time() - t0:.1f}s to generate)")

    tcfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                       seed=args.seed, patience=0)
    t0 = time.time()
    params, history = train(train_samples, ref, ModelConfig(), tcfg)
    print(f"trained {len(history.train_loss)} epochs in {time.time() - t0:.0f}s; "
          f"val accuracy curve: {['%.3f' % a for a in history.val_accuracy]}")

    probs = predict_probs(params, test_samples)
    preds4 = probs.argmax(axis=1) + 1
    labels4 = labels_of(test_samples) + 1
    reports = {}
    for scenario in (1, 2, 3):
        p, l = regroup_scenario(preds4, labels4, scenario)
        reports[f"scenario {scenario}"] = metrics(
            confusion(p, l, SCENARIO_CLASSES[scenario]))
    print(format_metric_table("two-room test metrics", reports))
    cm = confusion(preds4 - 1, labels4 - 1, 4)
    print("4-case confusion (rows = true):")
    print(cm.counts)


if __name__ == "__main__":
    main()
