"""Dynamic-and-static feature extraction.

From a stream of normalized frames this stage derives, per sliding window:
the dynamic spatial window S (tau stacked flattened frames), the fused moving
vector m (per-tick mean of first-order amplitude deltas over all subcarriers
and antenna pairs), and the static spatial vector s_n (the newest row of S).

Flattening is subcarrier-major within each antenna pair: index = k * Q + q
(0-based), i.e. column-major ravel of the Q x K frame.

The first tick of a stream has no delta predecessor and is dropped rather
than zero-padded, so a window ending at tick n needs ticks n-tau .. n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .csi import NormalizedFrame, _frozen
from .errors import StructuralError


@dataclass
class PreprocessStats:
    """Mutable counters threaded through the preprocessing pipeline."""

    degenerate_columns: int = 0
    short_streams: int = 0


@dataclass(frozen=True)
class MovingFrame:
    """First-order temporal delta of normalized amplitudes, Q x K."""

    pair_id: int
    tick: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.float64)))


@dataclass(frozen=True)
class SpatialWindow:
    """tau x (Q*K) matrix of flattened normalized amplitudes, oldest row first."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise StructuralError(f"SpatialWindow must be 2-D, got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise StructuralError("SpatialWindow entries must lie in [0, 1]")


@dataclass(frozen=True)
class FusedMoving:
    """Length-tau vector of per-tick subcarrier-fusion means."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 1:
            raise StructuralError(f"FusedMoving must be 1-D, got {v.shape}")
        if v.size and (v.min() < -1.0 or v.max() > 1.0):
            raise StructuralError("FusedMoving entries must lie in [-1, 1]")


@dataclass(frozen=True)
class ReferenceSpatial:
    """Empty-room reference spatial vector b, length Q*K."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or (v.size and (v.min() < 0.0 or v.max() > 1.0)):
            raise StructuralError("reference vector must be 1-D with entries in [0, 1]")
        object.__setattr__(self, "vector", _frozen(v))


@dataclass(frozen=True)
class DasSample:
    """One network input: spatial window S, fused moving m, static s_n."""

    spatial: SpatialWindow
    fused: FusedMoving
    static: np.ndarray
    label: int | None = None
    pair_id: int = 1
    end_tick: int = 0

    def __post_init__(self):
        if self.spatial.values.shape[0] != self.fused.values.shape[0]:
            raise StructuralError("spatial window and fused vector lengths differ")
        if not np.array_equal(self.static, self.spatial.values[-1]):
            raise StructuralError("static vector must equal the last spatial window row")
        if self.label is not None and self.label not in (1, 2, 3, 4):
            raise StructuralError(f"case label must be in 1..4, got {self.label}")


def ast(prev: NormalizedFrame, cur: NormalizedFrame) -> MovingFrame:
    """Amplitude shape trend: elementwise cur - prev."""
    if prev.values.shape != cur.values.shape:
        raise StructuralError(
            f"AST shape mismatch: {prev.values.shape} vs {cur.values.shape}"
        )
    return MovingFrame(cur.pair_id, cur.tick, cur.values - prev.values)


def flatten_frame(frame: NormalizedFrame) -> np.ndarray:
    """Q x K frame -> length Q*K vector with index k*Q + q (0-based)."""
    return frame.values.ravel(order="F")


def flatten_stream(norm: np.ndarray) -> np.ndarray:
    """(T, Q, K) normalized stack -> (T, Q*K) rows in flatten_frame order."""
    t, q, k = norm.shape
    return np.ascontiguousarray(np.transpose(norm, (0, 2, 1)).reshape(t, q * k))


def subcarrier_fusion(window_of_moving: np.ndarray) -> FusedMoving:
    """Mean over all Q*K entries of each window row."""
    w = np.asarray(window_of_moving, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] < 1:
        raise StructuralError(f"fusion expects a tau x (Q*K) matrix, got {w.shape}")
    return FusedMoving(w.mean(axis=1))


def window_samples(
    flat: np.ndarray,
    tau: int,
    stride: int = 1,
    label: int | None = None,
    pair_id: int = 1,
    start_tick: int = 0,
    stats: PreprocessStats | None = None,
) -> list[DasSample]:
    """Build samples from a (T, Q*K) flattened normalized stream.

    Window ends run n = tau, tau+stride, ... ; each sample's spatial rows are
    views into `flat`, so memory stays O(stream), not O(windows).
    """
    if tau < 1 or stride < 1:
        raise StructuralError(f"tau and stride must be >= 1, got tau={tau} stride={stride}")
    flat = _frozen(np.asarray(flat, dtype=np.float64))
    t = flat.shape[0]
    if t < tau + 1:
        if stats is not None:
            stats.short_streams += 1
        return []
    deltas = _frozen(np.diff(flat, axis=0))
    fused_all = _frozen(deltas.mean(axis=1))
    out = []
    for n in range(tau, t, stride):
        spatial = SpatialWindow(flat[n - tau + 1 : n + 1])
        fused = FusedMoving(fused_all[n - tau : n])
        out.append(
            DasSample(
                spatial=spatial,
                fused=fused,
                static=flat[n],
                label=label,
                pair_id=pair_id,
                end_tick=start_tick + n,
            )
        )
    return out


def make_samples(
    stream: Sequence[NormalizedFrame],
    tau: int,
    stride: int = 1,
    label: int | None = None,
    stats: PreprocessStats | None = None,
) -> list[DasSample]:
    """Window a sequence of NormalizedFrames into DasSamples.

    Streams shorter than tau + 1 ticks yield no samples (the AST consumes one
    leading tick) and increment stats.short_streams.
    """
    if len(stream) == 0:
        if stats is not None:
            stats.short_streams += 1
        return []
    flat = np.stack([flatten_frame(f) for f in stream])
    pair_id = stream[0].pair_id
    start = stream[0].tick
    if stats is not None:
        stats.degenerate_columns += sum(f.degenerate_columns for f in stream)
    return window_samples(
        flat, tau, stride, label=label, pair_id=pair_id, start_tick=start, stats=stats
    )


def empty_reference(vectors: np.ndarray, count: int = 100) -> ReferenceSpatial:
    """Mean of up to `count` empty-room spatial vectors (rows of `vectors`).

    Averaging over many ticks suppresses per-tick noise in the reference.
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise StructuralError("reference needs at least one empty-room spatial vector")
    return ReferenceSpatial(v[: min(count, v.shape[0])].mean(axis=0))
