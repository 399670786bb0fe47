"""Offline training: batching, optimization, mode switching, checkpointing.

Everything is deterministic under TrainConfig.seed: parameter init, the
validation split, per-epoch shuffles, and dropout masks all consume one
seeded generator in a fixed order. The returned parameters are the
best-validation-accuracy snapshot (ties broken by lower validation loss).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .das import DasSample, ReferenceSpatial
from .errors import ConfigError, DataIntegrityError, StructuralError
from .model import (BatchTrace, ModelConfig, ModelParams, batch_loss, copy_params,
                    forward_batch, init_params)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    patience: int = 10  # epochs without validation improvement; 0 disables
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ConfigError(f"invalid training config: {self}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclass
class TrainHistory:
    """Per-epoch curves. wall_time is excluded from determinism comparisons."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    diverged: bool = False
    best_epoch: int = -1

    def numeric_state(self) -> tuple:
        return (tuple(self.train_loss), tuple(self.val_loss), tuple(self.val_accuracy),
                self.diverged, self.best_epoch)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_tensors(cls, tensors: list[Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in tensors],
                   v=[np.zeros_like(p.data) for p in tensors])


def adam_step(tensors: list[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected adaptive update; tensors with no grad are left unchanged."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for i, p in enumerate(tensors):
        g = p.grad
        if g is None:
            continue
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)


def sgd_step(tensors: list[Tensor], lr: float) -> None:
    for p in tensors:
        if p.grad is not None:
            p.data = p.data - lr * p.grad


# ---------------------------------------------------------------------------
# batching


def pack_batch(samples: list[DasSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spatial = np.stack([s.spatial.values for s in samples])
    fused = np.stack([s.fused.values for s in samples])
    static = np.stack([s.static for s in samples])
    return spatial, fused, static


def labels_of(samples: list[DasSample]) -> np.ndarray:
    if any(s.label is None for s in samples):
        raise StructuralError("training/evaluation samples must carry case labels")
    return np.array([s.label - 1 for s in samples], dtype=np.int64)  # classes 0..3


def predict_probs(params: ModelParams, samples: list[DasSample],
                  batch_size: int = 256, threads: int = 1) -> np.ndarray:
    """Inference probabilities (N, n_cases); thread-parallel across batches."""
    if not samples:
        return np.zeros((0, params.cfg.n_cases))
    ref = params.reference
    chunks = [samples[i : i + batch_size] for i in range(0, len(samples), batch_size)]

    def run(chunk: list[DasSample]) -> np.ndarray:
        with ad.no_grad():
            spatial, fused, static = pack_batch(chunk)
            trace = forward_batch(params, spatial, fused, static, ref, train=False)
            return trace.probs.data

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def evaluate_loss(params: ModelParams, samples: list[DasSample],
                  batch_size: int = 256) -> tuple[float, float]:
    """(mean total loss, accuracy) without touching gradients or BN state."""
    cfg = params.cfg
    total, correct = 0.0, 0
    with ad.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            spatial, fused, static = pack_batch(chunk)
            trace = forward_batch(params, spatial, fused, static, params.reference, train=False)
            y = labels_of(chunk)
            loss, _ = batch_loss(trace, y, cfg)
            total += loss.item() * len(chunk)
            correct += int((trace.probs.data.argmax(axis=1) == y).sum())
    n = len(samples)
    return total / n, correct / n


def stratified_split(labels: np.ndarray, fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; every present class lands in both halves."""
    train_idx, val_idx = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n_val = max(1, int(len(idx) * fraction)) if len(idx) >= 2 else 0
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.concatenate(train_idx), np.concatenate(val_idx)


# ---------------------------------------------------------------------------
# training loop


def train(samples: list[DasSample], b: ReferenceSpatial, model_cfg: ModelConfig,
          train_cfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Minimize the total loss; returns the best-validation snapshot and history.

    Aborts on a non-finite loss and returns the last finite best snapshot
    (history.diverged is set). Bitwise deterministic under train_cfg.seed
    apart from wall_time.
    """
    labels_all = labels_of(samples)
    counts = np.bincount(labels_all, minlength=model_cfg.n_cases)
    present = np.flatnonzero(counts)
    if (counts[present] < 2).any():
        raise StructuralError(f"need >= 2 samples per present class, got counts {counts.tolist()}")

    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, rng)
    params.reference = np.array(b.vector, dtype=np.float64)
    tensors = [t for _, t in params.named_parameters()]
    adam = AdamState.for_tensors(tensors) if train_cfg.optimizer == "adam" else None

    train_idx, val_idx = stratified_split(labels_all, train_cfg.val_fraction, rng)
    train_samples = [samples[i] for i in train_idx]
    val_samples = [samples[i] for i in val_idx]

    history = TrainHistory()
    best = copy_params(params)
    best_acc, best_loss = -1.0, np.inf
    since_best = 0

    for epoch in range(train_cfg.epochs):
        t_start = time.perf_counter()
        order = rng.permutation(len(train_samples))
        epoch_loss, n_seen = 0.0, 0
        diverged = False
        for lo in range(0, len(order), train_cfg.batch_size):
            chunk = [train_samples[i] for i in order[lo : lo + train_cfg.batch_size]]
            spatial, fused, static = pack_batch(chunk)
            try:
                trace = forward_batch(params, spatial, fused, static, params.reference,
                                      train=True, rng=rng)
                loss, _ = batch_loss(trace, labels_of(chunk), model_cfg)
            except DataIntegrityError:
                diverged = True
                break
            if not np.isfinite(loss.data):
                diverged = True
                break
            ad.backward(loss)
            if train_cfg.optimizer == "adam":
                adam_step(tensors, adam, train_cfg.learning_rate)
            else:
                sgd_step(tensors, train_cfg.learning_rate)
            ad.zero_grads(tensors)
            for key, stats in trace.bn_updates.items():
                params.bn[key] = stats
            epoch_loss += loss.item() * len(chunk)
            n_seen += len(chunk)
        if diverged:
            history.diverged = True
            break

        val_loss, val_acc = evaluate_loss(params, val_samples)
        history.train_loss.append(epoch_loss / max(n_seen, 1))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.wall_time.append(time.perf_counter() - t_start)

        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best = copy_params(params)
            best_acc, best_loss = val_acc, val_loss
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if train_cfg.patience and since_best >= train_cfg.patience:
                break
    return best, history


def overfit_single(sample: DasSample, b: ReferenceSpatial, model_cfg: ModelConfig,
                   steps: int = 200, lr: float = 0.03, seed: int = 0) -> list[float]:
    """Sanity oracle: Adam on one sample; returns the per-step loss curve."""
    rng = np.random.default_rng(seed)
    params = init_params(model_cfg, rng)
    params.reference = np.array(b.vector, dtype=np.float64)
    tensors = [t for _, t in params.named_parameters()]
    adam = AdamState.for_tensors(tensors)
    spatial, fused, static = pack_batch([sample])
    y = labels_of([sample])
    losses = []
    for _ in range(steps):
        trace = forward_batch(params, spatial, fused, static, params.reference,
                              train=True, rng=rng)
        loss, _ = batch_loss(trace, y, model_cfg)
        losses.append(loss.item())
        ad.backward(loss)
        adam_step(tensors, adam, lr)
        ad.zero_grads(tensors)
        for key, stats in trace.bn_updates.items():
            params.bn[key] = stats
    return losses
