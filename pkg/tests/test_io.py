import struct

import numpy as np
import pytest

from lvic import io as lio
from lvic.errors import DataError, FormatError
from lvic.fusion import init_params
from lvic.imagery import DepthMap, FeatureMap
from lvic.painter import PaintedCloud, PointCloud


def f32_params(rng, d, e):
    """Weights exactly representable in f32, so the f32 file format loses nothing."""
    p = init_params(d, e, seed=int(rng.integers(2**31)))
    return p.map(lambda k, v: v.astype(np.float32).astype(np.float64))


def payloads(rng, small=False):
    """One randomized object per headered format, keyed by format name."""
    n = int(rng.integers(0, 5 if small else 200))
    c, d = int(rng.integers(3, 9)), int(rng.integers(1, 4 if small else 33))
    h, w = int(rng.integers(1, 4 if small else 60)), int(rng.integers(1, 4 if small else 80))
    depth = rng.uniform(-1, 80, size=(h, w)).astype(np.float32)
    depth[rng.random(depth.shape) < 0.1] = np.nan
    stride = int(rng.integers(1, 9))
    feat = rng.normal(size=(d, h, w)).astype(np.float32)
    painted = rng.normal(size=(n, c + 4 + d)).astype(np.float32)
    cams = rng.integers(-1, 6, size=n).astype(np.int32)
    return {
        "depth": (DepthMap(depth), lio.depth_to_bytes, lio.depth_from_bytes),
        "feature": (FeatureMap(feat, stride), lio.feature_to_bytes, lio.feature_from_bytes),
        "painted": (PaintedCloud(painted, cams, c, d), lio.painted_to_bytes, lio.painted_from_bytes),
        "weights": (f32_params(rng, d, int(rng.integers(1, 17))), lio.weights_to_bytes, lio.weights_from_bytes),
        "embeddings": (rng.normal(size=(n, 16)).astype(np.float32), lio.embeddings_to_bytes, lio.embeddings_from_bytes),
    }


def same(a, b):
    if isinstance(a, np.ndarray):
        return a.dtype == b.dtype and a.tobytes() == b.tobytes()
    if isinstance(a, PaintedCloud):
        return (a.c, a.d) == (b.c, b.d) and same(a.values, b.values) and same(a.camera_ids, b.camera_ids)
    if isinstance(a, FeatureMap):
        return a.stride == b.stride and same(a.values, b.values)
    if isinstance(a, DepthMap):
        return same(a.values, b.values)
    return all(same(x, b.arrays()[k]) for k, x in a.arrays().items())


FORMATS = ["depth", "feature", "painted", "weights", "embeddings"]
WRITERS = {
    "depth": (lio.write_depth, lio.read_depth),
    "feature": (lio.write_feature, lio.read_feature),
    "painted": (lio.write_painted, lio.read_painted),
    "weights": (lio.write_weights, lio.read_weights),
    "embeddings": (lio.write_embeddings, lio.read_embeddings),
}


@pytest.mark.parametrize("kind", FORMATS)
class TestHeaderedFormats:
    def test_file_round_trip(self, kind, rng, tmp_path):
        write, read = WRITERS[kind]
        for i in range(5):
            obj = payloads(rng)[kind][0]
            path = tmp_path / f"{kind}{i}.bin"
            write(path, obj)
            back = read(path)
            assert same(obj, back)
            write(tmp_path / "again.bin", back)
            assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()

    def test_every_truncation_rejected(self, kind, rng):
        obj, to_bytes, from_bytes = payloads(rng, small=True)[kind]
        data = to_bytes(obj)
        for cut in range(len(data)):
            with pytest.raises(FormatError):
                from_bytes(data[:cut])

    def test_trailing_bytes_rejected(self, kind, rng):
        obj, to_bytes, from_bytes = payloads(rng, small=True)[kind]
        with pytest.raises(FormatError, match="trailing"):
            from_bytes(to_bytes(obj) + b"\0")

    def test_bad_magic_names_both(self, kind, rng):
        obj, to_bytes, from_bytes = payloads(rng, small=True)[kind]
        data = b"XXXX" + to_bytes(obj)[4:]
        with pytest.raises(FormatError, match=r"expected b'LV..'.*found b'XXXX'"):
            from_bytes(data)

    def test_unknown_version(self, kind, rng):
        obj, to_bytes, from_bytes = payloads(rng, small=True)[kind]
        data = to_bytes(obj)
        data = data[:4] + struct.pack("<I", 2) + data[8:]
        with pytest.raises(FormatError, match="version 2"):
            from_bytes(data)

    def test_read_any(self, kind, rng, tmp_path):
        write, _ = WRITERS[kind]
        obj = payloads(rng)[kind][0]
        write(tmp_path / "x", obj)
        got_kind, back = lio.read_any(tmp_path / "x")
        assert got_kind == kind and same(obj, back)


class TestSizeCap:
    def test_oversize_declaration_rejected_before_allocation(self):
        data = lio.MAGIC_DEPTH + struct.pack("<3I", 1, 2**20, 2**20)
        with pytest.raises(FormatError, match="cap"):
            lio.depth_from_bytes(data, max_bytes=1 << 30)

    def test_declared_larger_than_file(self):
        data = lio.MAGIC_EMBEDDING + struct.pack("<3I", 1, 1000, 16) + b"\0" * 64
        with pytest.raises(FormatError, match="remain"):
            lio.embeddings_from_bytes(data)

    def test_cap_is_configurable(self, tmp_path):
        lio.write_depth(tmp_path / "d", DepthMap(np.ones((10, 10))))
        lio.read_depth(tmp_path / "d", max_bytes=400)
        with pytest.raises(FormatError):
            lio.read_depth(tmp_path / "d", max_bytes=399)


class TestRawCloud:
    def test_twenty_bytes_is_one_point(self):
        cloud = lio.cloud_from_bytes(np.arange(5, dtype="<f4").tobytes(), 5)
        assert cloud.n == 1
        assert cloud.values.tolist() == [[0.0, 1.0, 2.0, 3.0, 4.0]]

    def test_twenty_one_bytes_rejected(self):
        with pytest.raises(FormatError, match="21 bytes"):
            lio.cloud_from_bytes(b"\0" * 21, 5)

    def test_round_trip(self, rng, tmp_path):
        for c in (3, 4, 5, 8):
            vals = rng.normal(scale=30, size=(int(rng.integers(0, 500)), c)).astype(np.float32)
            lio.write_cloud(tmp_path / "c.bin", PointCloud(vals))
            back = lio.read_cloud(tmp_path / "c.bin", c)
            assert back.values.tobytes() == vals.tobytes()

    def test_one_byte_short_rejected(self, rng):
        data = rng.normal(size=(7, 5)).astype("<f4").tobytes()
        with pytest.raises(FormatError):
            lio.cloud_from_bytes(data[:-1], 5)

    def test_non_finite_position(self):
        vals = np.zeros((3, 4), np.float32)
        vals[1, 2] = np.inf
        with pytest.raises(DataError, match="row 1"):
            lio.cloud_from_bytes(vals.tobytes(), 4)

    def test_too_few_channels(self):
        with pytest.raises(FormatError):
            lio.cloud_from_bytes(b"", 2)


class TestWeights:
    def test_layer_shape_mismatch(self, rng):
        data = bytearray(lio.weights_to_bytes(f32_params(rng, 4, 4)))
        # first layer rows field sits right after magic, version, d, e
        struct.pack_into("<I", data, 16, 9)
        with pytest.raises(FormatError, match="visual1"):
            lio.weights_from_bytes(bytes(data))


class TestAtomicWrite:
    def test_no_temp_files_left(self, tmp_path):
        lio.write_embeddings(tmp_path / "e.lvem", np.zeros((3, 2), np.float32))
        assert [p.name for p in tmp_path.iterdir()] == ["e.lvem"]

    def test_failed_write_leaves_target_untouched(self, tmp_path):
        target = tmp_path / "e.lvem"
        target.write_bytes(b"old")
        with pytest.raises(DataError):
            lio.write_embeddings(target, np.zeros(3))
        assert target.read_bytes() == b"old"


def test_read_any_unknown_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"ABCD" + b"\0" * 8)
    with pytest.raises(FormatError, match="unknown magic"):
        lio.read_any(tmp_path / "x")
