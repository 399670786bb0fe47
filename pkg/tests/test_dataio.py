import numpy as np
import pytest

from tcdfern import dataio
from tcdfern.csi import StreamHeader
from tcdfern.dataio import Dataset, Segment
from tcdfern.errors import FormatError, StructuralError
from tcdfern.model import init_params, tiny_config


def small_dataset(q=6, k=2, p=2, ticks=30, seed=0):
    rng = np.random.default_rng(seed)
    # f32-representable values so the on-disk round trip is exact
    amps = rng.uniform(0.5, 2.0, size=(ticks, p, k, q)).astype(np.float32).astype(np.float64)
    header = StreamHeader(q=q, k=k, p=p, sample_rate=10.0, n_ticks=ticks)
    segments = [Segment(0, 15, 1, 1), Segment(15, 30, 1, 3),
                Segment(0, 15, 2, 1), Segment(15, 30, 2, 2)]
    return Dataset(header=header, amplitudes=amps, segments=segments)


def test_dataset_round_trip(tmp_path):
    ds = small_dataset()
    path = tmp_path / "a.csib"
    dataio.write_dataset(ds, str(path))
    back = dataio.read_dataset(str(path))
    assert back.header == ds.header
    np.testing.assert_array_equal(back.amplitudes, ds.amplitudes)
    assert back.segments == ds.segments
    # writing the read-back dataset reproduces the bytes
    path2 = tmp_path / "b.csib"
    dataio.write_dataset(back, str(path2))
    assert path.read_bytes() == path2.read_bytes()


def test_dataset_floats_per_pair_tick(tmp_path):
    rng = np.random.default_rng(1)
    header = StreamHeader(q=56, k=4, p=1, n_ticks=3)
    amps = rng.uniform(0.5, 1.0, size=(3, 1, 4, 56))
    ds = Dataset(header, amps, [Segment(0, 3, 1, 1)])
    path = tmp_path / "c.csib"
    dataio.write_dataset(ds, str(path))
    raw = path.read_bytes()
    data_bytes = len(raw) - 20 - 4 - 1 * 11  # header, segment count, one segment
    assert data_bytes == 3 * 1 * 224 * 4  # 224 f32 amplitudes per pair-tick


def test_dataset_corrupt_magic(tmp_path):
    ds = small_dataset()
    path = tmp_path / "d.csib"
    dataio.write_dataset(ds, str(path))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        dataio.read_dataset(str(path))


def test_dataset_truncation(tmp_path):
    ds = small_dataset()
    path = tmp_path / "e.csib"
    dataio.write_dataset(ds, str(path))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(FormatError):
        dataio.read_dataset(str(path))


def test_dataset_rejects_bad_segments():
    with pytest.raises(StructuralError):
        Segment(5, 5, 1, 1)  # empty range
    with pytest.raises(StructuralError):
        Segment(0, 5, 1, 5)  # case out of range
    ds = small_dataset()
    ds.segments.append(Segment(10, 20, 1, 2))  # overlaps pair 1
    with pytest.raises(StructuralError):
        dataio.write_dataset(ds, "/dev/null")


def test_dataset_label_range_enforced_on_read(tmp_path):
    ds = small_dataset()
    path = tmp_path / "f.csib"
    dataio.write_dataset(ds, str(path))
    raw = bytearray(path.read_bytes())
    raw[-1] = 9  # case byte of the last segment
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="segment"):
        dataio.read_dataset(str(path))


def make_models(seed=0):
    cfg = tiny_config()
    rng = np.random.default_rng(seed)
    models = {}
    for pid in (1, 2):
        p = init_params(cfg, rng)
        p.reference = rng.uniform(size=cfg.input_dim)
        models[pid] = p
    return cfg, models


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg, models = make_models()
    path = tmp_path / "m.tcdf"
    dataio.save_checkpoint(models, str(path), seed=42)
    loaded, seed = dataio.load_checkpoint(str(path), cfg)
    assert seed == 42 and sorted(loaded) == [1, 2]
    for pid in (1, 2):
        for (n1, t1), (n2, t2) in zip(models[pid].named_parameters(),
                                      loaded[pid].named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)
        for key in models[pid].bn:
            np.testing.assert_array_equal(models[pid].bn[key].mean, loaded[pid].bn[key].mean)
            np.testing.assert_array_equal(models[pid].bn[key].var, loaded[pid].bn[key].var)
        np.testing.assert_array_equal(models[pid].reference, loaded[pid].reference)
    # save(load(x)) is byte-identical
    path2 = tmp_path / "m2.tcdf"
    dataio.save_checkpoint(loaded, str(path2), seed=42)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_flipped_byte_fails_checksum(tmp_path):
    cfg, models = make_models()
    path = tmp_path / "m.tcdf"
    dataio.save_checkpoint(models, str(path), seed=1)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="checksum"):
        dataio.load_checkpoint(str(path), cfg)


def test_checkpoint_truncated(tmp_path):
    cfg, models = make_models()
    path = tmp_path / "m.tcdf"
    dataio.save_checkpoint(models, str(path), seed=1)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 9])
    with pytest.raises(FormatError):
        dataio.load_checkpoint(str(path), cfg)


def test_checkpoint_config_hash_mismatch(tmp_path):
    cfg, models = make_models()
    path = tmp_path / "m.tcdf"
    dataio.save_checkpoint(models, str(path), seed=1)
    other = tiny_config(variant="FERN")
    with pytest.raises(FormatError, match="config hash"):
        dataio.load_checkpoint(str(path), other)


def test_checkpoint_bad_magic(tmp_path):
    cfg, models = make_models()
    path = tmp_path / "m.tcdf"
    dataio.save_checkpoint(models, str(path), seed=1)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        dataio.load_checkpoint(str(path), cfg)


def test_report_round_trip(tmp_path):
    path = tmp_path / "r.txt"
    dataio.write_report(str(path), [("alpha", 0.123456789), ("count", 7), ("name", "x")])
    back = dataio.read_report(str(path))
    assert back == {"alpha": "0.123457", "count": "7", "name": "x"}


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "m.txt"
    dataio.write_manifest(str(path), [("k", "v"), ("segment", "0:10 pair 1 case 2"),
                                      ("segment", "10:20 pair 1 case 3")])
    back = dataio.read_manifest(str(path))
    assert back["k"] == ["v"]
    assert len(back["segment"]) == 2
