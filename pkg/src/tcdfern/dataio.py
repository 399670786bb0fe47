"""Bit-exact on-disk formats: CSI datasets, model checkpoints, reports.

Dataset binary (.csib), all little-endian:
    magic 'CSIB' | u16 version=1 | u16 Q | u16 K | u16 P | f32 sample_rate |
    u32 n_ticks | f32 amplitudes laid out [tick][pair][k][q] |
    u32 n_segments | per segment: u32 start_tick, u32 end_tick (exclusive),
    u16 pair_id (1-based), u8 case_label (1..4)
A sidecar text manifest mirrors the metadata human-readably; the binary file
is authoritative.

Checkpoint binary (.tcdf):
    magic 'TCDF' | u16 version=1 | u64 config hash | i64 seed | u32 n_tensors |
    per tensor: u16 name length, utf-8 name, u8 ndim, u32 dims..., f64 payload |
    u32 CRC-32 of all prior bytes
Tensor names are 'pair<id>/<param>' plus non-trainable state ('pair<id>/bn/...',
'pair<id>/reference'), so one file carries every per-pair model of a run.

Amplitudes are stored as f32 (size) and widened to f64 in memory (precision);
this function boundary is the only conversion point.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from .csi import StreamHeader
from .errors import FormatError, StructuralError
from .model import BnStats, ModelConfig, ModelParams, init_params

DATASET_MAGIC = b"CSIB"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"TCDF"
CHECKPOINT_VERSION = 1

_HEADER = struct.Struct("<4sHHHHfI")
_SEGMENT = struct.Struct("<IIHB")


@dataclass(frozen=True)
class Segment:
    """A labeled tick range [start, end) for one transmission pair."""

    start: int
    end: int
    pair_id: int
    case: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise StructuralError(f"bad segment range [{self.start}, {self.end})")
        if self.pair_id < 1 or self.case not in (1, 2, 3, 4):
            raise StructuralError(f"bad segment pair/case: {self}")


@dataclass
class Dataset:
    header: StreamHeader
    amplitudes: np.ndarray  # (n_ticks, P, K, Q) float64
    segments: list[Segment]

    def pair_stream(self, pair_id: int) -> np.ndarray:
        """(T, Q, K) amplitude stream of one pair."""
        return np.transpose(self.amplitudes[:, pair_id - 1], (0, 2, 1))

    def pair_segments(self, pair_id: int) -> list[Segment]:
        return [s for s in self.segments if s.pair_id == pair_id]


def _validate_segments(segments: list[Segment], header: StreamHeader) -> None:
    by_pair: dict[int, list[Segment]] = {}
    for s in segments:
        if s.pair_id > header.p:
            raise StructuralError(f"segment pair {s.pair_id} exceeds P={header.p}")
        if s.end > header.n_ticks:
            raise StructuralError(f"segment end {s.end} exceeds n_ticks={header.n_ticks}")
        by_pair.setdefault(s.pair_id, []).append(s)
    for pair, segs in by_pair.items():
        segs = sorted(segs, key=lambda s: s.start)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end:
                raise StructuralError(f"overlapping segments for pair {pair}: {a} / {b}")


def write_dataset(ds: Dataset, path: str) -> None:
    h = ds.header
    if ds.amplitudes.shape != (h.n_ticks, h.p, h.k, h.q):
        raise StructuralError(
            f"amplitude array {ds.amplitudes.shape} does not match header "
            f"({h.n_ticks}, {h.p}, {h.k}, {h.q})"
        )
    _validate_segments(ds.segments, h)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, h.q, h.k, h.p,
                             h.sample_rate, h.n_ticks))
        f.write(np.ascontiguousarray(ds.amplitudes, dtype="<f4").tobytes())
        f.write(struct.pack("<I", len(ds.segments)))
        for s in ds.segments:
            f.write(_SEGMENT.pack(s.start, s.end, s.pair_id, s.case))


def read_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, q, k, p, rate, n_ticks = _HEADER.unpack_from(raw, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    n_vals = n_ticks * p * k * q
    need = off + 4 * n_vals + 4
    if len(raw) < need:
        raise FormatError(f"{path}: truncated amplitude block")
    amps = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=off)
    amps = amps.astype(np.float64).reshape(n_ticks, p, k, q)
    off += 4 * n_vals
    (n_segments,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) != off + n_segments * _SEGMENT.size:
        raise FormatError(f"{path}: size mismatch in segment table")
    segments = []
    for i in range(n_segments):
        start, end, pair_id, case = _SEGMENT.unpack_from(raw, off + i * _SEGMENT.size)
        try:
            segments.append(Segment(start, end, pair_id, case))
        except StructuralError as e:
            raise FormatError(f"{path}: invalid segment {i}: {e}") from e
    header = StreamHeader(q=q, k=k, p=p, sample_rate=rate, n_ticks=n_ticks)
    ds = Dataset(header=header, amplitudes=amps, segments=segments)
    try:
        _validate_segments(segments, header)
    except StructuralError as e:
        raise FormatError(f"{path}: {e}") from e
    return ds


# ---------------------------------------------------------------------------
# manifest (human-readable sidecar; binary is authoritative)


def write_manifest(path: str, entries: list[tuple[str, object]]) -> None:
    with open(path, "w") as f:
        for key, value in entries:
            f.write(f"{key} = {value}\n")


def read_manifest(path: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            out.setdefault(key.strip(), []).append(value.strip())
    return out


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(cfg: ModelConfig, pair_ids: tuple[int, ...]) -> int:
    text = cfg.canonical() + "|pairs=" + ",".join(str(i) for i in pair_ids)
    return int.from_bytes(blake2b(text.encode(), digest_size=8).digest(), "little")


def _named_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    out = [(name, t.data) for name, t in params.named_parameters()]
    out.extend(params.state_arrays())
    return out


def save_checkpoint(models: dict[int, ModelParams], path: str, seed: int = 0) -> None:
    """Serialize every pair-model (weights + BN stats + reference) to one file."""
    if not models:
        raise StructuralError("no models to checkpoint")
    pair_ids = tuple(sorted(models))
    cfg = models[pair_ids[0]].cfg
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<H", CHECKPOINT_VERSION)
    payload += struct.pack("<Q", config_hash(cfg, pair_ids))
    payload += struct.pack("<q", seed)
    entries = []
    for pid in pair_ids:
        for name, arr in _named_arrays(models[pid]):
            entries.append((f"pair{pid}/{name}", arr))
    payload += struct.pack("<I", len(entries))
    for name, arr in entries:
        raw = name.encode()
        payload += struct.pack("<H", len(raw)) + raw
        payload += struct.pack("<B", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as f:
        f.write(bytes(payload))


def load_checkpoint(path: str, cfg: ModelConfig) -> tuple[dict[int, ModelParams], int]:
    """Load and validate a checkpoint against the expected model config."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 + 2 + 8 + 8 + 4 + 4:
        raise FormatError(f"{path}: truncated checkpoint")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch (corrupt checkpoint)")
    (stored_hash,) = struct.unpack_from("<Q", raw, 6)
    (seed,) = struct.unpack_from("<q", raw, 14)
    (n_tensors,) = struct.unpack_from("<I", raw, 22)
    off = 26
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off)
        off += 8 * size
        tensors[name] = arr.astype(np.float64).reshape(shape)
    if off != len(raw) - 4:
        raise FormatError(f"{path}: trailing bytes after tensor table")

    pair_ids = tuple(sorted({int(n.split("/", 1)[0][4:]) for n in tensors}))
    if config_hash(cfg, pair_ids) != stored_hash:
        raise FormatError(
            f"{path}: config hash mismatch (checkpoint was written with a different model config)"
        )
    models: dict[int, ModelParams] = {}
    for pid in pair_ids:
        params = init_params(cfg, np.random.default_rng(0))
        prefix = f"pair{pid}/"
        expected = dict(_named_arrays(params))
        got = {n[len(prefix):]: a for n, a in tensors.items() if n.startswith(prefix)}
        missing = set(expected) - set(got) - {"reference"}
        extra = set(got) - set(expected) - {"reference"}
        if missing or extra:
            raise FormatError(f"{path}: tensor table mismatch (missing {missing}, extra {extra})")
        for name, t in params.named_parameters():
            if got[name].shape != t.data.shape:
                raise FormatError(f"{path}: {name} shape {got[name].shape} != {t.data.shape}")
            t.data = got[name]
        for key in params.bn:
            params.bn[key] = BnStats(got[f"bn/{key}/mean"], got[f"bn/{key}/var"])
        params.reference = got.get("reference")
        models[pid] = params
    return models, seed


# ---------------------------------------------------------------------------
# reports


def write_report(path: str, entries: list[tuple[str, object]]) -> None:
    """Machine-readable key-value report; floats fixed to 6 decimals."""
    with open(path, "w") as f:
        for key, value in entries:
            if isinstance(value, float):
                f.write(f"{key} = {value:.6f}\n")
            else:
                f.write(f"{key} = {value}\n")


def read_report(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            if "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    return out
