"""Readers and writers for every on-disk format.

All binary formats are little-endian. Artifact-produced files start with a
4-byte magic and a u32 format version, followed by u32 dimension fields and
a float32 payload:

========  ===============================================================
``LVDM``  depth map: width, height; height*width f32 row-major
``LVFM``  feature map: d, grid_h, grid_w, stride; d planes of f32
``LVPC``  painted cloud: n, c, d; n rows of (c+3+1+d) f32; n i32 camera ids
``LVFW``  fusion weights: d, e; five layers of (rows, cols, W f32, b f32)
``LVEM``  embeddings: n, e; n*e f32
========  ===============================================================

Raw input sweeps are headerless f32 with the channel count supplied by the
caller. Writers go through a temporary file and an atomic rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CalibrationError, DataError, FormatError
from .fusion import FusionParams
from .geometry import CameraRig, rig_from_dict, rig_to_dict
from .imagery import DepthMap, FeatureMap
from .painter import PaintedCloud, PointCloud

VERSION = 1
MAX_BYTES = 4 << 30

MAGIC_DEPTH = b"LVDM"
MAGIC_FEATURE = b"LVFM"
MAGIC_PAINTED = b"LVPC"
MAGIC_WEIGHTS = b"LVFW"
MAGIC_EMBEDDING = b"LVEM"
MAGICS = (MAGIC_DEPTH, MAGIC_FEATURE, MAGIC_PAINTED, MAGIC_WEIGHTS, MAGIC_EMBEDDING)

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _Reader:
    """Cursor over a byte buffer that refuses to read past its end."""

    def __init__(self, data: bytes, name: str, max_bytes: int) -> None:
        self.data = data
        self.name = name
        self.pos = 0
        self.max_bytes = max_bytes

    def _take(self, size: int, field: str) -> bytes:
        if self.pos + size > len(self.data):
            raise FormatError(
                f"{self.name}: truncated while reading {field} "
                f"(need {size} bytes at offset {self.pos}, file has {len(self.data)})"
            )
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def header(self, magic: bytes) -> None:
        found = self._take(4, "magic")
        if found != magic:
            raise FormatError(f"{self.name}: bad magic, expected {magic!r}, found {found!r}")
        version = self.u32("version")
        if version != VERSION:
            raise FormatError(f"{self.name}: unsupported version {version} (expected {VERSION})")

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self._take(4, field))[0]

    def array(self, dtype: np.dtype, count: int, field: str) -> np.ndarray:
        size = count * dtype.itemsize
        if size > self.max_bytes:
            raise FormatError(f"{self.name}: {field} declares {size} bytes, above the {self.max_bytes}-byte cap")
        remaining = len(self.data) - self.pos
        if size > remaining:
            raise FormatError(
                f"{self.name}: {field} declares {size} bytes but only {remaining} remain"
            )
        return np.frombuffer(self._take(size, field), dtype=dtype).copy()

    def done(self) -> None:
        extra = len(self.data) - self.pos
        if extra:
            raise FormatError(f"{self.name}: {extra} trailing bytes after payload")


def _header(magic: bytes, *dims: int) -> bytes:
    return magic + struct.pack(f"<{1 + len(dims)}I", VERSION, *dims)


def _load(path: str | Path) -> bytes:
    return Path(path).read_bytes()


# -- raw point clouds ---------------------------------------------------------

def cloud_from_bytes(data: bytes, c: int, name: str = "<cloud>") -> PointCloud:
    if c < 3:
        raise FormatError(f"{name}: channel count must be >= 3, got {c}")
    row = 4 * c
    if len(data) % row:
        raise FormatError(
            f"{name}: {len(data)} bytes is not a multiple of {row} bytes per point (c={c})"
        )
    values = np.frombuffer(data, dtype=_F32).reshape(-1, c).astype(np.float32)
    bad = ~np.isfinite(values[:, :3]).all(axis=1)
    if bad.any():
        raise DataError(f"{name}: non-finite position at row {int(np.argmax(bad))}")
    return PointCloud(values)


def read_cloud(path: str | Path, c: int) -> PointCloud:
    return cloud_from_bytes(_load(path), c, str(path))


def write_cloud(path: str | Path, cloud: PointCloud | np.ndarray) -> None:
    values = cloud.values if isinstance(cloud, PointCloud) else np.asarray(cloud)
    atomic_write(path, np.ascontiguousarray(values, dtype=_F32).tobytes())


# -- depth maps ---------------------------------------------------------------

def depth_to_bytes(m: DepthMap) -> bytes:
    return _header(MAGIC_DEPTH, m.width, m.height) + m.values.astype(_F32).tobytes()


def depth_from_bytes(data: bytes, name: str = "<depth>", max_bytes: int = MAX_BYTES) -> DepthMap:
    r = _Reader(data, name, max_bytes)
    r.header(MAGIC_DEPTH)
    w, h = r.u32("width"), r.u32("height")
    values = r.array(_F32, w * h, "depth values").reshape(h, w)
    r.done()
    return DepthMap(values)


def write_depth(path: str | Path, m: DepthMap) -> None:
    atomic_write(path, depth_to_bytes(m))


def read_depth(path: str | Path, max_bytes: int = MAX_BYTES) -> DepthMap:
    return depth_from_bytes(_load(path), str(path), max_bytes)


# -- feature maps -------------------------------------------------------------

def feature_to_bytes(m: FeatureMap) -> bytes:
    return _header(MAGIC_FEATURE, m.d, m.grid_h, m.grid_w, m.stride) + m.values.astype(_F32).tobytes()


def feature_from_bytes(data: bytes, name: str = "<features>", max_bytes: int = MAX_BYTES) -> FeatureMap:
    r = _Reader(data, name, max_bytes)
    r.header(MAGIC_FEATURE)
    d, gh, gw, stride = r.u32("d"), r.u32("grid_h"), r.u32("grid_w"), r.u32("stride")
    if stride < 1:
        raise FormatError(f"{name}: stride must be >= 1, found {stride}")
    values = r.array(_F32, d * gh * gw, "feature values").reshape(d, gh, gw)
    r.done()
    return FeatureMap(values, stride)


def write_feature(path: str | Path, m: FeatureMap) -> None:
    atomic_write(path, feature_to_bytes(m))


def read_feature(path: str | Path, max_bytes: int = MAX_BYTES) -> FeatureMap:
    return feature_from_bytes(_load(path), str(path), max_bytes)


# -- painted clouds -----------------------------------------------------------

def painted_to_bytes(p: PaintedCloud) -> bytes:
    return (
        _header(MAGIC_PAINTED, p.n, p.c, p.d)
        + np.ascontiguousarray(p.values, dtype=_F32).tobytes()
        + np.ascontiguousarray(p.camera_ids, dtype=_I32).tobytes()
    )


def painted_from_bytes(data: bytes, name: str = "<painted>", max_bytes: int = MAX_BYTES) -> PaintedCloud:
    r = _Reader(data, name, max_bytes)
    r.header(MAGIC_PAINTED)
    n, c, d = r.u32("n"), r.u32("c"), r.u32("d")
    if c < 3:
        raise FormatError(f"{name}: c must be >= 3, found {c}")
    width = c + 3 + 1 + d
    values = r.array(_F32, n * width, "painted rows").reshape(n, width)
    cams = r.array(_I32, n, "camera ids")
    r.done()
    return PaintedCloud(values.astype(np.float32), cams.astype(np.int32), c, d)


def write_painted(path: str | Path, p: PaintedCloud) -> None:
    atomic_write(path, painted_to_bytes(p))


def read_painted(path: str | Path, max_bytes: int = MAX_BYTES) -> PaintedCloud:
    return painted_from_bytes(_load(path), str(path), max_bytes)


# -- fusion weights -----------------------------------------------------------

def weights_to_bytes(params: FusionParams) -> bytes:
    parts = [_header(MAGIC_WEIGHTS, params.d, params.e)]
    for _, w, b in params.layers():
        parts.append(struct.pack("<2I", *w.shape))
        parts.append(w.astype(_F32).tobytes())
        parts.append(b.astype(_F32).tobytes())
    return b"".join(parts)


def weights_from_bytes(data: bytes, name: str = "<weights>", max_bytes: int = MAX_BYTES) -> FusionParams:
    r = _Reader(data, name, max_bytes)
    r.header(MAGIC_WEIGHTS)
    d, e = r.u32("d"), r.u32("e")
    expected = FusionParams.zeros(d, e)
    kw = {}
    for layer, w0, _ in expected.layers():
        rows, cols = r.u32(f"{layer} rows"), r.u32(f"{layer} cols")
        if (rows, cols) != w0.shape:
            raise FormatError(f"{name}: layer {layer} is {rows}x{cols}, expected {w0.shape[0]}x{w0.shape[1]}")
        kw[f"{layer}_w"] = r.array(_F32, rows * cols, f"{layer} weights").reshape(rows, cols).astype(np.float64)
        kw[f"{layer}_b"] = r.array(_F32, rows, f"{layer} biases").astype(np.float64)
    r.done()
    return FusionParams(**kw)


def write_weights(path: str | Path, params: FusionParams) -> None:
    atomic_write(path, weights_to_bytes(params))


def read_weights(path: str | Path, max_bytes: int = MAX_BYTES) -> FusionParams:
    return weights_from_bytes(_load(path), str(path), max_bytes)


# -- embeddings ---------------------------------------------------------------

def embeddings_to_bytes(emb: np.ndarray) -> bytes:
    emb = np.asarray(emb)
    if emb.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got shape {emb.shape}")
    return _header(MAGIC_EMBEDDING, *emb.shape) + np.ascontiguousarray(emb, dtype=_F32).tobytes()


def embeddings_from_bytes(data: bytes, name: str = "<embeddings>", max_bytes: int = MAX_BYTES) -> np.ndarray:
    r = _Reader(data, name, max_bytes)
    r.header(MAGIC_EMBEDDING)
    n, e = r.u32("n"), r.u32("e")
    values = r.array(_F32, n * e, "embedding values").reshape(n, e)
    r.done()
    return values.astype(np.float32)


def write_embeddings(path: str | Path, emb: np.ndarray) -> None:
    atomic_write(path, embeddings_to_bytes(emb))


def read_embeddings(path: str | Path, max_bytes: int = MAX_BYTES) -> np.ndarray:
    return embeddings_from_bytes(_load(path), str(path), max_bytes)


# -- calibration --------------------------------------------------------------

def read_calibration(path: str | Path) -> CameraRig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: invalid JSON ({exc})") from None
    try:
        return rig_from_dict(doc)
    except CalibrationError as exc:
        raise CalibrationError(f"{path}: {exc}") from None


def write_calibration(path: str | Path, rig: CameraRig) -> None:
    atomic_write(path, (json.dumps(rig_to_dict(rig), indent=2) + "\n").encode("utf-8"))


# -- sniffing -----------------------------------------------------------------

READERS: dict[bytes, tuple[str, Callable]] = {
    MAGIC_DEPTH: ("depth", depth_from_bytes),
    MAGIC_FEATURE: ("feature", feature_from_bytes),
    MAGIC_PAINTED: ("painted", painted_from_bytes),
    MAGIC_WEIGHTS: ("weights", weights_from_bytes),
    MAGIC_EMBEDDING: ("embeddings", embeddings_from_bytes),
}


def read_any(path: str | Path, max_bytes: int = MAX_BYTES):
    """Parse a headered artifact file, dispatching on its magic."""
    data = _load(path)
    magic = data[:4]
    if magic not in READERS:
        raise FormatError(
            f"{path}: unknown magic {magic!r}, expected one of "
            + ", ".join(m.decode() for m in MAGICS)
        )
    kind, reader = READERS[magic]
    return kind, reader(data, str(path), max_bytes)
