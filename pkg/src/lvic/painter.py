"""Depth-aware point painting.

Every LiDAR point gets ``3 + 1 + d`` extra channels laid out as
``[u, v, z_c, delta_z, texture_0 .. texture_{d-1}]``:

* ``u, v``: raw pixel coordinates in the chosen camera,
* ``z_c``: the depth map's estimate at that pixel,
* ``delta_z``: the point's own camera-frame depth minus ``z_c``,
* ``texture``: the feature-map patch vector at that pixel.

A point no camera can see gets ``-1`` in every painted channel. A point that
lands in an image but on a pixel without a depth estimate keeps ``u, v`` and
texture but carries ``-1`` for ``z_c`` and ``delta_z``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .geometry import (
    CameraRig,
    in_bounds,
    points_in_bounds,
    project,
    project_points,
    transform_point,
)
from .imagery import DepthMap, FeatureMap, sample_depth, sample_depths, sample_feature, sample_features

PAD = -1.0
UNPAINTED = -1

U, V, ZC, DZ, TEX = 0, 1, 2, 3, 4  # offsets inside the painted block


@dataclass(frozen=True)
class PaintLayout:
    c: int
    d: int = 16

    def __post_init__(self) -> None:
        if self.c < 3:
            raise ConfigurationError(f"point clouds need at least 3 channels, got c={self.c}")
        if self.d < 0:
            raise ConfigurationError(f"texture dimension must be >= 0, got d={self.d}")

    @property
    def painted(self) -> int:
        return 3 + 1 + self.d

    @property
    def width(self) -> int:
        return self.c + self.painted

    def block(self, row: np.ndarray) -> np.ndarray:
        return row[..., self.c:self.c + self.painted]


@dataclass(frozen=True)
class PointCloud:
    values: np.ndarray  # (n, c) float32; x, y, z first

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[1] < 3:
            raise DataError(f"point cloud must be (n, c>=3), got shape {v.shape}")
        bad = ~np.isfinite(v[:, :3]).all(axis=1)
        if bad.any():
            raise DataError(f"non-finite position at row {int(np.argmax(bad))}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def c(self) -> int:
        return self.values.shape[1]

    @property
    def xyz(self) -> np.ndarray:
        return self.values[:, :3].astype(np.float64)


@dataclass(frozen=True)
class PaintedCloud:
    values: np.ndarray  # (n, c + 3 + 1 + d) float32
    camera_ids: np.ndarray  # (n,) int32, -1 when unpainted
    c: int
    d: int

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def layout(self) -> PaintLayout:
        return PaintLayout(self.c, self.d)

    def painted_mask(self) -> np.ndarray:
        return self.camera_ids >= 0

    def summary(self) -> dict:
        counts = np.bincount(self.camera_ids[self.camera_ids >= 0], minlength=0)
        n_painted = int((self.camera_ids >= 0).sum())
        return {
            "n": self.n,
            "painted": n_painted,
            "painted_frac": n_painted / self.n if self.n else 0.0,
            "per_camera": {str(i): int(k) for i, k in enumerate(counts)},
        }


class Candidate(NamedTuple):
    camera_id: int
    u: float
    v: float
    z_l: float
    z_c: float | None
    cx: float
    cy: float


def depth_discrepancy(z_l: float, z_c: float) -> float:
    """Signed LiDAR-minus-vision depth; positive means the point sits behind
    the surface the image shows."""
    return z_l - z_c


def choose_camera(candidates: Sequence[Candidate]) -> int:
    """Pick the camera whose depth estimate best agrees with the point.

    Cameras with a valid estimate win over those without; among those the
    smallest |delta_z| wins, otherwise the pixel closest to the principal
    point. Ties go to the lowest camera id.
    """
    if not candidates:
        raise ValueError("choose_camera needs at least one candidate")
    best_key = None
    best_id = -1
    for cand in sorted(candidates, key=lambda c: c.camera_id):
        if cand.z_c is not None:
            key = (0, abs(cand.z_l - cand.z_c))
        else:
            du = cand.u - cand.cx
            dv = cand.v - cand.cy
            key = (1, du * du + dv * dv)
        if best_key is None or key < best_key:
            best_key, best_id = key, cand.camera_id
    return best_id


def check_inputs(
    rig: CameraRig,
    depths: Sequence[DepthMap],
    feats: Sequence[FeatureMap],
    layout: PaintLayout,
) -> None:
    for name, maps in (("depth map", depths), ("feature map", feats)):
        if len(maps) < len(rig):
            raise ConfigurationError(f"camera {len(maps)}: no {name} supplied")
        if len(maps) > len(rig):
            raise ConfigurationError(f"{len(maps)} {name}s supplied for {len(rig)} cameras")
    for cam, dm, fm in zip(rig, depths, feats):
        dm.check_camera(cam.intrinsics, cam.camera_id)
        if fm.d != layout.d:
            raise ConfigurationError(
                f"camera {cam.camera_id}: feature map has d={fm.d}, layout expects d={layout.d}"
            )
        fm.check_camera(cam.intrinsics, cam.camera_id)


def paint_point(
    p: Sequence[float],
    rig: CameraRig,
    depths: Sequence[DepthMap],
    feats: Sequence[FeatureMap],
    layout: PaintLayout,
) -> tuple[np.ndarray, int | None]:
    """Paint a single LiDAR-frame point; returns the (3+1+d) block and camera id."""
    block = np.full(layout.painted, PAD, dtype=np.float32)
    candidates = []
    for cam in rig:
        pc = transform_point(cam.extrinsics, p)
        uv = project(cam.intrinsics, pc)
        if uv is None or not in_bounds(uv[0], uv[1], cam.intrinsics):
            continue
        z_c = sample_depth(depths[cam.camera_id], uv[0], uv[1])
        k = cam.intrinsics
        candidates.append(Candidate(cam.camera_id, uv[0], uv[1], float(pc[2]), z_c, k.cx, k.cy))
    if not candidates:
        return block, None
    cid = choose_camera(candidates)
    win = next(c for c in candidates if c.camera_id == cid)
    block[U] = win.u
    block[V] = win.v
    if win.z_c is not None:
        block[ZC] = win.z_c
        block[DZ] = depth_discrepancy(win.z_l, win.z_c)
    block[TEX:] = sample_feature(feats[cid], win.u, win.v)
    return block, cid


def _paint_batch(
    xyz: np.ndarray,
    rig: CameraRig,
    depths: Sequence[DepthMap],
    feats: Sequence[FeatureMap],
    d: int,
) -> tuple[np.ndarray, np.ndarray]:
    n = xyz.shape[0]
    best_tier = np.full(n, 2, dtype=np.int8)
    best_score = np.full(n, np.inf)
    best_cam = np.full(n, UNPAINTED, dtype=np.int32)
    best_u = np.zeros(n)
    best_v = np.zeros(n)
    best_zl = np.zeros(n)
    best_zc = np.full(n, np.nan)

    for cam in rig:
        k = cam.intrinsics
        pc = cam.extrinsics.apply(xyz)
        u, v, front = project_points(k, pc)
        idx = np.flatnonzero(front & points_in_bounds(u, v, k))
        if idx.size == 0:
            continue
        u, v, zl = u[idx], v[idx], pc[idx, 2]
        zc = sample_depths(depths[cam.camera_id], u, v)
        has_depth = ~np.isnan(zc)
        du = u - k.cx
        dv = v - k.cy
        tier = np.where(has_depth, 0, 1).astype(np.int8)
        with np.errstate(invalid="ignore"):
            score = np.where(has_depth, np.abs(zl - zc), du * du + dv * dv)
        bt = best_tier[idx]
        better = (tier < bt) | ((tier == bt) & (score < best_score[idx]))
        sel = idx[better]
        best_tier[sel] = tier[better]
        best_score[sel] = score[better]
        best_cam[sel] = cam.camera_id
        best_u[sel] = u[better]
        best_v[sel] = v[better]
        best_zl[sel] = zl[better]
        best_zc[sel] = zc[better]

    block = np.full((n, 3 + 1 + d), PAD, dtype=np.float32)
    painted = best_cam >= 0
    block[painted, U] = best_u[painted]
    block[painted, V] = best_v[painted]
    with_depth = painted & ~np.isnan(best_zc)
    block[with_depth, ZC] = best_zc[with_depth]
    block[with_depth, DZ] = depth_discrepancy(best_zl[with_depth], best_zc[with_depth])
    if d:
        for cam in rig:
            rows = np.flatnonzero(best_cam == cam.camera_id)
            if rows.size:
                block[rows, TEX:] = sample_features(feats[cam.camera_id], best_u[rows], best_v[rows])
    return block, best_cam


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, then ``LVIC_THREADS``, then the CPU count."""
    if threads is None:
        env = os.environ.get("LVIC_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigurationError(f"LVIC_THREADS must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {threads}")
    return threads


def paint_cloud(
    cloud: PointCloud,
    rig: CameraRig,
    depths: Sequence[DepthMap],
    feats: Sequence[FeatureMap],
    layout: PaintLayout | None = None,
    threads: int | None = None,
) -> PaintedCloud:
    """Append painted channels to every point of ``cloud``.

    Points are split into contiguous slices, one per worker. Each output row
    depends only on its own point, so the result does not depend on
    ``threads``.
    """
    if layout is None:
        layout = PaintLayout(cloud.c, feats[0].d if feats else 0)
    if layout.c != cloud.c:
        raise ConfigurationError(f"layout expects c={layout.c}, cloud has c={cloud.c}")
    check_inputs(rig, depths, feats, layout)
    threads = resolve_threads(threads)

    n = cloud.n
    out = np.empty((n, layout.width), dtype=np.float32)
    out[:, :layout.c] = cloud.values
    cam_ids = np.empty(n, dtype=np.int32)
    xyz = cloud.xyz

    def work(bounds: tuple[int, int]) -> None:
        lo, hi = bounds
        block, cams = _paint_batch(xyz[lo:hi], rig, depths, feats, layout.d)
        out[lo:hi, layout.c:] = block
        cam_ids[lo:hi] = cams

    edges = np.linspace(0, n, min(threads, max(n, 1)) + 1).astype(int)
    parts = list(zip(edges[:-1], edges[1:]))
    if len(parts) == 1:
        work(parts[0])
    else:
        with ThreadPoolExecutor(max_workers=len(parts)) as pool:
            list(pool.map(work, parts))
    return PaintedCloud(out, cam_ids, layout.c, layout.d)
