"""Depth and texture-feature maps produced by an external visual encoder.

Value at array index (i, j) lives at continuous pixel coordinate
(u, v) = (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .geometry import CameraIntrinsics


@dataclass(frozen=True)
class DepthMap:
    """Dense metric depth along the camera z axis.

    Non-finite or non-positive entries mark pixels without a depth estimate.
    """

    values: np.ndarray  # (height, width) float32

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ConfigurationError(f"depth map must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def check_camera(self, k: CameraIntrinsics, camera_id: int) -> None:
        if (self.width, self.height) != (k.width, k.height):
            raise ConfigurationError(
                f"camera {camera_id}: depth map is {self.width}x{self.height}, "
                f"image is {k.width}x{k.height}"
            )


@dataclass(frozen=True)
class FeatureMap:
    """``d`` texture channels on a grid of ``stride`` x ``stride`` patches."""

    values: np.ndarray  # (d, grid_h, grid_w) float32
    stride: int = 4

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ConfigurationError(f"feature map must be 3-D (d, grid_h, grid_w), got shape {v.shape}")
        if int(self.stride) < 1:
            raise ConfigurationError(f"feature stride must be >= 1, got {self.stride}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def grid_h(self) -> int:
        return self.values.shape[1]

    @property
    def grid_w(self) -> int:
        return self.values.shape[2]

    def check_camera(self, k: CameraIntrinsics, camera_id: int) -> None:
        want = (math.ceil(k.height / self.stride), math.ceil(k.width / self.stride))
        if (self.grid_h, self.grid_w) != want:
            raise ConfigurationError(
                f"camera {camera_id}: feature grid is {self.grid_h}x{self.grid_w}, "
                f"expected {want[0]}x{want[1]} for stride {self.stride}"
            )


def _valid(z: float) -> bool:
    return math.isfinite(z) and z > 0.0


def sample_depth(m: DepthMap, u: float, v: float) -> float | None:
    """Bilinear depth at (u, v), falling back to the nearest pixel.

    The 2x2 neighbourhood of pixel centers around (u, v) is clamped at the
    image border. If any of the four is invalid the containing pixel is used
    instead; ``None`` is returned when that one is invalid too.
    """
    h, w = m.height, m.width
    x = u - 0.5
    y = v - 0.5
    j0 = math.floor(x)
    i0 = math.floor(y)
    ax = x - j0
    ay = y - i0
    ja, jb = min(max(j0, 0), w - 1), min(max(j0 + 1, 0), w - 1)
    ia, ib = min(max(i0, 0), h - 1), min(max(i0 + 1, 0), h - 1)
    vals = m.values
    z00 = float(vals[ia, ja])
    z01 = float(vals[ia, jb])
    z10 = float(vals[ib, ja])
    z11 = float(vals[ib, jb])
    if _valid(z00) and _valid(z01) and _valid(z10) and _valid(z11):
        top = z00 + ax * (z01 - z00)
        bottom = z10 + ax * (z11 - z10)
        return top + ay * (bottom - top)
    zn = float(vals[min(int(math.floor(v)), h - 1), min(int(math.floor(u)), w - 1)])
    return zn if _valid(zn) else None


def sample_depths(m: DepthMap, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched :func:`sample_depth`; invalid results are NaN."""
    h, w = m.height, m.width
    x = u - 0.5
    y = v - 0.5
    fj = np.floor(x)
    fi = np.floor(y)
    ax = x - fj
    ay = y - fi
    j0 = fj.astype(np.int64)
    i0 = fi.astype(np.int64)
    ja, jb = np.clip(j0, 0, w - 1), np.clip(j0 + 1, 0, w - 1)
    ia, ib = np.clip(i0, 0, h - 1), np.clip(i0 + 1, 0, h - 1)
    vals = m.values
    z00 = vals[ia, ja].astype(np.float64)
    z01 = vals[ia, jb].astype(np.float64)
    z10 = vals[ib, ja].astype(np.float64)
    z11 = vals[ib, jb].astype(np.float64)
    with np.errstate(invalid="ignore"):
        ok = (
            (np.isfinite(z00) & (z00 > 0.0))
            & (np.isfinite(z01) & (z01 > 0.0))
            & (np.isfinite(z10) & (z10 > 0.0))
            & (np.isfinite(z11) & (z11 > 0.0))
        )
        top = z00 + ax * (z01 - z00)
        bottom = z10 + ax * (z11 - z10)
        bilinear = top + ay * (bottom - top)
        ni = np.minimum(np.floor(v).astype(np.int64), h - 1)
        nj = np.minimum(np.floor(u).astype(np.int64), w - 1)
        zn = vals[ni, nj].astype(np.float64)
        zn = np.where(np.isfinite(zn) & (zn > 0.0), zn, np.nan)
    return np.where(ok, bilinear, zn)


def feature_cell(m: FeatureMap, u: float, v: float) -> tuple[int, int]:
    return int(math.floor(v / m.stride)), int(math.floor(u / m.stride))


def sample_feature(m: FeatureMap, u: float, v: float) -> np.ndarray:
    """Texture vector of the patch containing (u, v); no interpolation."""
    r, c = feature_cell(m, u, v)
    return m.values[:, r, c].copy()


def sample_features(m: FeatureMap, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched :func:`sample_feature`, shape (n, d)."""
    r = np.floor(v / m.stride).astype(np.int64)
    c = np.floor(u / m.stride).astype(np.int64)
    return m.values[:, r, c].T
