"""Glue between on-disk datasets and the network: normalize, window, reference.

Windows never cross segment boundaries (occupancy changes there), and the
empty-room reference of each pair is the mean of its first `ref_count` case-1
normalized spatial vectors from the training data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csi import normalize_stream
from .das import DasSample, PreprocessStats, ReferenceSpatial, empty_reference, flatten_stream
from .dataio import Dataset
from .errors import StructuralError


@dataclass(frozen=True)
class PreprocessConfig:
    tau: int = 50
    stride: int = 1
    ref_count: int = 100

    def __post_init__(self):
        if self.tau < 1 or self.stride < 1 or self.ref_count < 1:
            raise StructuralError(f"invalid preprocess config: {self}")


def dataset_samples(ds: Dataset, pp: PreprocessConfig,
                    stats: PreprocessStats | None = None) -> dict[int, list[DasSample]]:
    """Per-pair labeled windows from every segment of the dataset."""
    from .das import window_samples  # local import keeps module load light

    out: dict[int, list[DasSample]] = {}
    for pair_id in range(1, ds.header.p + 1):
        stream = ds.pair_stream(pair_id)  # (T, Q, K)
        samples: list[DasSample] = []
        for seg in ds.pair_segments(pair_id):
            norm, n_deg = normalize_stream(stream[seg.start : seg.end])
            if stats is not None:
                stats.degenerate_columns += n_deg
            flat = flatten_stream(norm)
            samples.extend(
                window_samples(flat, pp.tau, pp.stride, label=seg.case,
                               pair_id=pair_id, start_tick=seg.start, stats=stats)
            )
        out[pair_id] = samples
    return out


def pair_reference(ds: Dataset, pair_id: int, ref_count: int = 100) -> ReferenceSpatial:
    """Empty-room reference b: mean of the first ref_count case-1 tick vectors."""
    stream = ds.pair_stream(pair_id)
    rows = []
    needed = ref_count
    for seg in ds.pair_segments(pair_id):
        if seg.case != 1 or needed <= 0:
            continue
        take = min(needed, seg.end - seg.start)
        norm, _ = normalize_stream(stream[seg.start : seg.start + take])
        rows.append(flatten_stream(norm))
        needed -= take
    if not rows:
        raise StructuralError(
            f"pair {pair_id}: no empty-room (case 1) ticks to build the reference from"
        )
    return empty_reference(np.concatenate(rows, axis=0), count=ref_count)


def star_topology(n_pairs: int) -> dict[int, tuple[int, int]]:
    """pair_id -> (tx_room, rx_room): one shared TX room 1, RX rooms 2..P+1."""
    return {pid: (1, pid + 1) for pid in range(1, n_pairs + 1)}
