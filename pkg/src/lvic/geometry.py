"""Rigid transforms and pinhole projection between the LiDAR and camera frames.

Conventions: camera frame is z-forward, x-right, y-down. Pixel origin is the
top-left image corner with u along the width. Pixel (row i, col j) covers
[j, j+1) x [i, i+1), so its center sits at (j + 0.5, i + 0.5).

Scalar and batched routines evaluate the same expressions in the same order,
so a point pushed through either path yields bit-identical float64 results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CalibrationError

Z_EPSILON = 1e-6
"""Points with camera-frame z at or below this (meters) cannot image."""

ORTHONORMAL_TOL = 1e-9
CALIBRATION_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def orthonormality_error(rotation: np.ndarray) -> float:
    """Max-abs deviation of ``R^T R`` from identity, combined with |det R - 1|."""
    r = np.asarray(rotation, dtype=np.float64)
    gram = np.abs(r.T @ r - np.eye(3)).max()
    return float(max(gram, abs(np.linalg.det(r) - 1.0)))


@dataclass(frozen=True)
class SE3Transform:
    """Rotation plus translation: ``p -> R @ p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if r.shape != (3, 3) or t.shape != (3,):
            raise CalibrationError(
                f"SE3Transform expects a 3x3 rotation and 3-vector translation, "
                f"got {r.shape} and {t.shape}"
            )
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise CalibrationError("SE3Transform has non-finite entries")
        err = orthonormality_error(r)
        if err > ORTHONORMAL_TOL:
            raise CalibrationError(f"rotation is not orthonormal (error {err:.3e})")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> SE3Transform:
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> SE3Transform:
        rt = self.rotation.T
        return SE3Transform(rt, -(rt @ self.translation))

    def compose(self, other: SE3Transform) -> SE3Transform:
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return SE3Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (n, 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        r, t = self.rotation, self.translation
        out = np.empty((p.shape[0], 3), dtype=np.float64)
        for i in range(3):
            out[:, i] = r[i, 0] * x + r[i, 1] * y + r[i, 2] * z + t[i]
        return out


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise CalibrationError(f"intrinsic {name} is not finite")
            object.__setattr__(self, name, v)
        if int(self.width) != self.width or int(self.height) != self.height:
            raise CalibrationError("image width/height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError(f"image size must be positive, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise CalibrationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise CalibrationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Camera:
    camera_id: int
    intrinsics: CameraIntrinsics
    extrinsics: SE3Transform  # LiDAR frame -> camera frame


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[Camera, ...]

    def __post_init__(self) -> None:
        cams = tuple(self.cameras)
        ids = [c.camera_id for c in cams]
        if ids != list(range(len(cams))):
            raise CalibrationError(f"camera ids must be unique and contiguous from 0, got {ids}")
        object.__setattr__(self, "cameras", cams)

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i: int) -> Camera:
        return self.cameras[i]

    def with_extrinsics(self, extrinsics: Sequence[SE3Transform]) -> CameraRig:
        return CameraRig(
            tuple(Camera(c.camera_id, c.intrinsics, e) for c, e in zip(self.cameras, extrinsics))
        )


def transform_point(t: SE3Transform, p: Sequence[float]) -> np.ndarray:
    x, y, z = (float(v) for v in p)
    r, tr = t.rotation, t.translation
    return np.array(
        [float(r[i, 0]) * x + float(r[i, 1]) * y + float(r[i, 2]) * z + float(tr[i]) for i in range(3)]
    )


def project(k: CameraIntrinsics, p_cam: Sequence[float]) -> tuple[float, float] | None:
    """Pinhole projection; ``None`` means the point is behind the camera."""
    x, y, z = (float(v) for v in p_cam)
    if not z > Z_EPSILON:
        return None
    return k.fx * (x / z) + k.cx, k.fy * (y / z) + k.cy


def in_bounds(u: float, v: float, k: CameraIntrinsics) -> bool:
    return 0.0 <= u < k.width and 0.0 <= v < k.height


def back_project(k: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    """Camera-frame point at ``depth`` along the ray through pixel (u, v)."""
    return np.array([(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth])


def project_points(k: CameraIntrinsics, p_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched :func:`project`.

    Returns ``(u, v, front)``; entries where ``front`` is false hold NaN.
    """
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    front = z > Z_EPSILON
    safe_z = np.where(front, z, np.nan)
    u = k.fx * (x / safe_z) + k.cx
    v = k.fy * (y / safe_z) + k.cy
    return u, v, front


def points_in_bounds(u: np.ndarray, v: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return (u >= 0.0) & (u < k.width) & (v >= 0.0) & (v < k.height)


def nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    m = u @ vt
    if np.linalg.det(m) < 0:
        u[:, -1] *= -1
        m = u @ vt
    return m


def rig_from_dict(doc: dict) -> CameraRig:
    try:
        entries = doc["cameras"]
    except (KeyError, TypeError):
        raise CalibrationError("calibration document has no 'cameras' list") from None
    cams = []
    for pos, entry in enumerate(entries):
        try:
            cid = int(entry["id"])
            k = CameraIntrinsics(
                fx=entry["fx"], fy=entry["fy"], cx=entry["cx"], cy=entry["cy"],
                width=entry["width"], height=entry["height"],
            )
            r = np.array(entry["R"], dtype=np.float64)
            t = np.array(entry["t"], dtype=np.float64)
        except KeyError as exc:
            raise CalibrationError(f"camera entry {pos}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"camera entry {pos}: {exc}") from None
        if r.shape != (9,) or t.shape != (3,):
            raise CalibrationError(f"camera {cid}: R must have 9 values and t 3 values")
        r = r.reshape(3, 3)
        if not np.isfinite(r).all():
            raise CalibrationError(f"camera {cid}: R has non-finite entries")
        err = orthonormality_error(r)
        if err > CALIBRATION_TOL:
            raise CalibrationError(f"camera {cid}: R is not orthonormal (error {err:.3e})")
        if err > ORTHONORMAL_TOL:
            r = nearest_rotation(r)
        cams.append(Camera(cid, k, SE3Transform(r, t)))
    cams.sort(key=lambda c: c.camera_id)
    return CameraRig(tuple(cams))


def rig_to_dict(rig: CameraRig) -> dict:
    return {
        "cameras": [
            {
                "id": c.camera_id,
                "width": c.intrinsics.width,
                "height": c.intrinsics.height,
                "fx": c.intrinsics.fx,
                "fy": c.intrinsics.fy,
                "cx": c.intrinsics.cx,
                "cy": c.intrinsics.cy,
                "R": [float(x) for x in c.extrinsics.rotation.reshape(-1)],
                "t": [float(x) for x in c.extrinsics.translation],
            }
            for c in rig
        ]
    }

