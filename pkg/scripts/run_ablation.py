#!/usr/bin/env python3
"""Architecture ablation: train every variant on the same data across seeds."""

import argparse
import time

import numpy as np

from tcdfern.model import VARIANTS, ModelConfig
from tcdfern.pipeline import PreprocessConfig, dataset_samples, pair_reference
from tcdfern.synth import GenConfig, build_datasets
from tcdfern.training import TrainConfig, labels_of, predict_probs, train


def run_seed(seed: int, args) -> dict[str, float]:
    gcfg = GenConfig(seed=seed)
    train_ds, test_ds, _ = build_datasets("two-room", args.train_ticks, args.test_ticks, gcfg)
    pp = PreprocessConfig(stride=args.stride)
    tr = dataset_samples(train_ds, pp)[1]
    te = dataset_samples(test_ds, pp)[1]
    ref = pair_reference(train_ds, 1)
    y = labels_of(te)
    out = {}
    for variant in VARIANTS:
        tcfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                           seed=seed, patience=args.patience)
        t0 = time.time()
        params, _ = train(tr, ref, ModelConfig(variant=variant), tcfg)
        probs = predict_probs(params, te)
        out[variant] = float((probs.argmax(axis=1) == y).mean())
        print(f"  seed {seed} {variant:>9}: {out[variant]:.4f} ({time.time() - t0:.0f}s)",
              flush=True)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--train-ticks", type=int, default=2000)
    ap.add_argument("--test-ticks", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--learning-rate", type=float, default=2e-3)
    ap.add_argument("--stride", type=int, default=1)
    ap.add_argument("--patience", type=int, default=0)
    args = ap.parse_args()

    rows = [run_seed(seed, args) for seed in args.seeds]
    print(f"\n{'variant':>9} " + " ".join(f"seed{s:<4}" for s in args.seeds) + "  mean")
    for variant in VARIANTS:
        accs = [r[variant] for r in rows]
        print(f"{variant:>9} " + " ".join(f"{a:.4f}  " for a in accs)
              + f"{np.mean(accs):.4f}")


if __name__ == "__main__":
    main()
