from __future__ import annotations

import zlib

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lvic.geometry import Camera, CameraIntrinsics, CameraRig, SE3Transform
from lvic.synth import SceneConfig

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_rig(rng: np.random.Generator, n_cameras: int = 3, width: int = 64, height: int = 48) -> CameraRig:
    cams = []
    for i in range(n_cameras):
        k = CameraIntrinsics(
            fx=rng.uniform(20, 200),
            fy=rng.uniform(20, 200),
            cx=rng.uniform(0, width - 1),
            cy=rng.uniform(0, height - 1),
            width=width,
            height=height,
        )
        cams.append(Camera(i, k, SE3Transform(random_rotation(rng), rng.uniform(-2, 2, size=3))))
    return CameraRig(tuple(cams))


def small_scene_config(rng: np.random.Generator, seed: int) -> SceneConfig:
    """A randomised low-resolution scene that generates in well under a second."""
    width = int(rng.integers(80, 240))
    height = int(rng.integers(60, 160))
    return SceneConfig(
        seed=seed,
        n_points=int(rng.integers(1, 1001)),
        n_cameras=int(rng.integers(1, 7)),
        width=width,
        height=height,
        focal_px=float(rng.uniform(0.4, 1.0) * width),
        n_occluders=int(rng.integers(0, 8)),
        camera_offset_m=float(rng.choice([0.0, 0.3, 1.0])),
        feature_dim=int(rng.integers(1, 33)),
        stride=int(rng.integers(1, 9)),
        min_visible_frac=0.0,
    )


@pytest.fixture
def rng(request) -> np.random.Generator:
    return np.random.default_rng(zlib.crc32(request.node.name.encode()))


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the summary."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
