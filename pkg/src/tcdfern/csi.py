"""CSI stream domain types and per-antenna-pair amplitude normalization.

Frames hold a Q x K matrix (Q subcarriers by K antenna pairs) for one
transmission pair at one tick. Phase is discarded at the ingestion boundary;
everything downstream works on amplitudes. All types are immutable after
construction and all operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataIntegrityError, StructuralError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class StreamHeader:
    """Stream geometry: Q subcarriers, K antenna pairs, P transmission pairs."""

    q: int
    k: int
    p: int
    sample_rate: float = 10.0
    n_ticks: int = 0

    def __post_init__(self):
        if min(self.q, self.k, self.p) < 1 or self.sample_rate <= 0 or self.n_ticks < 0:
            raise StructuralError(f"invalid stream header: {self}")


@dataclass(frozen=True)
class CsiFrame:
    """Raw complex channel estimate for one pair at one tick; values Q x K."""

    pair_id: int
    tick: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.ndim != 2:
            raise StructuralError(f"CsiFrame values must be Q x K, got shape {v.shape}")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True)
class AmplitudeFrame:
    """Nonnegative amplitude magnitudes, same Q x K shape as the source frame."""

    pair_id: int
    tick: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise StructuralError(f"AmplitudeFrame values must be Q x K, got shape {v.shape}")
        object.__setattr__(self, "values", _frozen(v))


@dataclass(frozen=True)
class NormalizedFrame:
    """Min-max normalized amplitudes in [0, 1], scaled per antenna-pair column.

    degenerate_columns counts columns that were constant (max == min) and were
    mapped to all-0.5 instead of dividing by zero.
    """

    pair_id: int
    tick: int
    values: np.ndarray
    degenerate_columns: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", _frozen(v))


def amplitude_of(frame: CsiFrame) -> AmplitudeFrame:
    """Complex magnitude of each entry; phase is discarded.

    Raises DataIntegrityError naming (t, q, k) of the first non-finite entry.
    """
    v = frame.values
    finite = np.isfinite(v.real) & np.isfinite(v.imag)
    if not finite.all():
        q, k = np.argwhere(~finite)[0]
        raise DataIntegrityError(
            f"non-finite CSI value at (t={frame.tick}, q={int(q) + 1}, k={int(k) + 1})"
        )
    return AmplitudeFrame(frame.pair_id, frame.tick, np.abs(v))


def normalize_columns(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Min-max normalize each column over subcarriers; constant columns -> 0.5.

    Returns (normalized array, number of degenerate columns). Shared by the
    single-frame op and the vectorized stream path so both stay bit-identical.
    """
    lo = values.min(axis=-2, keepdims=True)
    hi = values.max(axis=-2, keepdims=True)
    span = hi - lo
    degenerate = span == 0.0
    safe = np.where(degenerate, 1.0, span)
    out = (values - lo) / safe
    if degenerate.any():
        out = np.where(degenerate, 0.5, out)
    return out, int(degenerate.sum())


def normalize_frame(frame: AmplitudeFrame) -> NormalizedFrame:
    """Normalize one amplitude frame per antenna pair (column-wise min-max)."""
    v = frame.values
    if v.shape[0] < 2:
        raise StructuralError(f"normalization needs Q >= 2 subcarriers, got Q={v.shape[0]}")
    if not np.isfinite(v).all():
        q, k = np.argwhere(~np.isfinite(v))[0]
        raise DataIntegrityError(
            f"non-finite amplitude at (t={frame.tick}, q={int(q) + 1}, k={int(k) + 1})"
        )
    out, n_deg = normalize_columns(v)
    return NormalizedFrame(frame.pair_id, frame.tick, out, degenerate_columns=n_deg)


def normalize_stream(amplitudes: np.ndarray) -> tuple[np.ndarray, int]:
    """Vectorized normalization of a (T, Q, K) amplitude stack.

    Equivalent to normalize_frame applied tick by tick; returns the stacked
    result and the total degenerate-column count.
    """
    if amplitudes.ndim != 3 or amplitudes.shape[1] < 2:
        raise StructuralError(f"expected (T, Q>=2, K) amplitude stack, got {amplitudes.shape}")
    if not np.isfinite(amplitudes).all():
        t, q, k = np.argwhere(~np.isfinite(amplitudes))[0]
        raise DataIntegrityError(
            f"non-finite amplitude at (t={int(t)}, q={int(q) + 1}, k={int(k) + 1})"
        )
    return normalize_columns(amplitudes)
