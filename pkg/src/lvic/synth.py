"""Synthetic scenes with exact depth ground truth, and the miscalibration harness.

A scene is a flat ground plane plus upright rectangular walls ("occluders").
The cloud comes from a spinning-LiDAR style scan ray-cast from the LiDAR
origin, so it only holds surfaces the sensor can actually see. Camera
depth maps are z-buffers of the cloud's own 1-pixel splats merged with the
walls rendered analytically per pixel, then quantised to
``depth_quantum_m``.

Ground-truth cameras sit at the LiDAR origin unless ``camera_offset_m`` is
set. At zero offset no point can be hidden from a camera that images it,
so with the true calibration every painted ``delta_z`` is quantisation
noise. Calibration error then shows up as growing ``|delta_z|``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, GenerationError
from .geometry import (
    Camera,
    CameraIntrinsics,
    CameraRig,
    SE3Transform,
    Z_EPSILON,
    points_in_bounds,
    project_points,
)
from .imagery import DepthMap, FeatureMap
from .painter import DZ, PaintLayout, PointCloud, paint_cloud, resolve_threads

CSV_HEADER = ("noise_rot_deg", "noise_trans_m", "mean_abs_dz", "exceed_frac", "painted_frac")

DEFAULT_NOISE = ((0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (2.0, 0.0))


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 1
    n_points: int = 50_000
    n_cameras: int = 6
    width: int = 1600
    height: int = 900
    focal_px: float = 1000.0
    extent_m: float = 40.0
    lidar_height_m: float = 1.8
    n_beams: int = 32
    beam_elevation_deg: tuple[float, float] = (-30.0, 10.0)
    n_occluders: int = 12
    occluder_width_m: tuple[float, float] = (2.0, 8.0)
    occluder_height_m: tuple[float, float] = (1.5, 4.0)
    occluder_min_range_m: float = 6.0
    camera_offset_m: float = 0.0
    yaw_jitter_deg: float = 5.0
    pitch_jitter_deg: float = 2.0
    roll_jitter_deg: float = 1.0
    depth_quantum_m: float = 0.01
    feature_dim: int = 16
    stride: int = 4
    noise: tuple[tuple[float, float], ...] = DEFAULT_NOISE
    threshold_m: float = 0.5
    min_visible_frac: float = 0.10
    max_retries: int = 20

    def __post_init__(self) -> None:
        object.__setattr__(self, "noise", tuple((float(r), float(t)) for r, t in self.noise))
        object.__setattr__(self, "beam_elevation_deg", tuple(self.beam_elevation_deg))
        object.__setattr__(self, "occluder_width_m", tuple(self.occluder_width_m))
        object.__setattr__(self, "occluder_height_m", tuple(self.occluder_height_m))
        if self.n_points <= 0:
            raise ConfigurationError(f"n_points must be positive, got {self.n_points}")
        if self.n_cameras <= 0:
            raise ConfigurationError(f"n_cameras must be positive, got {self.n_cameras}")
        if self.width <= 0 or self.height <= 0 or not self.focal_px > 0:
            raise ConfigurationError(
                f"image size and focal length must be positive, got {self.width}x{self.height}, f={self.focal_px}"
            )
        if self.feature_dim < 0 or self.stride < 1:
            raise ConfigurationError(f"need feature_dim >= 0 and stride >= 1, got {self.feature_dim}, {self.stride}")
        if self.extent_m <= 0 or self.lidar_height_m <= 0:
            raise ConfigurationError("scene extent and LiDAR height must be positive")
        if self.n_occluders < 0:
            raise ConfigurationError("occluder count must be >= 0")
        for name in ("occluder_width_m", "occluder_height_m"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigurationError(f"{name} must satisfy 0 < min <= max, got {(lo, hi)}")
        if self.depth_quantum_m < 0:
            raise ConfigurationError("depth_quantum_m must be >= 0")
        for rot, trans in self.noise:
            if rot < 0 or trans < 0:
                raise ConfigurationError(f"noise levels must be non-negative, got {(rot, trans)}")

    @property
    def focal(self) -> float:
        return self.focal_px

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class Occluder:
    """Upright rectangle standing on the ground, facing ``normal_yaw``."""

    center_x: float
    center_y: float
    normal_yaw: float
    width: float
    height: float
    base_z: float

    def corners(self) -> np.ndarray:
        tx, ty = -math.sin(self.normal_yaw), math.cos(self.normal_yaw)
        hw = self.width / 2.0
        out = []
        for s in (-hw, hw):
            for z in (self.base_z, self.base_z + self.height):
                out.append((self.center_x + s * tx, self.center_y + s * ty, z))
        return np.array(out)


@dataclass(frozen=True)
class SynthScene:
    config: SceneConfig
    cloud: PointCloud
    rig: CameraRig
    depths: tuple[DepthMap, ...]
    feats: tuple[FeatureMap, ...]
    occluders: tuple[Occluder, ...] = field(default=())

    @property
    def layout(self) -> PaintLayout:
        return PaintLayout(self.cloud.c, self.config.feature_dim)


@dataclass(frozen=True)
class ExperimentRow:
    noise_rot_deg: float
    noise_trans_m: float
    mean_abs_dz: float
    exceed_frac: float
    painted_frac: float


# -- ray casting ----------------------------------------------------------------

def _hit_occluder(origin: np.ndarray, dirs: np.ndarray, occ: Occluder) -> np.ndarray:
    """Ray parameter of the hit on ``occ`` for each ray, +inf on a miss."""
    nx, ny = math.cos(occ.normal_yaw), math.sin(occ.normal_yaw)
    tx, ty = -ny, nx
    ox, oy, oz = origin
    denom = dirs[:, 0] * nx + dirs[:, 1] * ny
    num = (occ.center_x - ox) * nx + (occ.center_y - oy) * ny
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    px = ox + t * dirs[:, 0]
    py = oy + t * dirs[:, 1]
    pz = oz + t * dirs[:, 2]
    lateral = (px - occ.center_x) * tx + (py - occ.center_y) * ty
    with np.errstate(invalid="ignore"):
        hit = (
            (np.abs(denom) > 1e-12)
            & (t > Z_EPSILON)
            & (np.abs(lateral) <= occ.width / 2.0)
            & (pz >= occ.base_z)
            & (pz <= occ.base_z + occ.height)
        )
    return np.where(hit, t, np.inf)


def make_occluders(cfg: SceneConfig, rng: np.random.Generator) -> tuple[Occluder, ...]:
    out = []
    far = max(cfg.occluder_min_range_m, 0.8 * cfg.extent_m)
    for _ in range(cfg.n_occluders):
        rng_m = rng.uniform(cfg.occluder_min_range_m, far)
        az = rng.uniform(-math.pi, math.pi)
        facing = az + math.pi + rng.uniform(-math.radians(60), math.radians(60))
        out.append(
            Occluder(
                center_x=rng_m * math.cos(az),
                center_y=rng_m * math.sin(az),
                normal_yaw=facing,
                width=rng.uniform(*cfg.occluder_width_m),
                height=rng.uniform(*cfg.occluder_height_m),
                base_z=-cfg.lidar_height_m,
            )
        )
    return tuple(out)


def _scan_hits(cfg: SceneConfig, occluders: Sequence[Occluder], n_az: int, offsets: np.ndarray):
    elev = np.radians(np.linspace(*cfg.beam_elevation_deg, cfg.n_beams))
    az = (np.arange(n_az)[None, :] + offsets[:, None]) * (2 * math.pi / n_az)
    el = np.broadcast_to(elev[:, None], az.shape)
    ring = np.broadcast_to(np.arange(cfg.n_beams, dtype=np.float64)[:, None], az.shape)
    dirs = np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
    ).reshape(-1, 3)
    ring = ring.reshape(-1)

    t = np.full(dirs.shape[0], np.inf)
    down = dirs[:, 2] < 0
    t_ground = np.where(down, -cfg.lidar_height_m / np.where(down, dirs[:, 2], -1.0), np.inf)
    horiz = t_ground * np.hypot(dirs[:, 0], dirs[:, 1])
    t = np.where(horiz <= cfg.extent_m, t_ground, t)
    origin = np.zeros(3)
    for occ in occluders:
        t = np.minimum(t, _hit_occluder(origin, dirs, occ))
    hit = np.isfinite(t)
    return dirs[hit] * t[hit, None], ring[hit]


def lidar_scan(cfg: SceneConfig, occluders: Sequence[Occluder], rng: np.random.Generator) -> PointCloud:
    """``n_points`` returns of a spinning scan; channels x, y, z, intensity, ring."""
    offsets = rng.uniform(0.0, 1.0, size=cfg.n_beams)
    n_az = max(64, math.ceil(2 * cfg.n_points / cfg.n_beams))
    while True:
        pts, ring = _scan_hits(cfg, occluders, n_az, offsets)
        if pts.shape[0] >= cfg.n_points:
            break
        if n_az > (1 << 22):
            raise GenerationError(f"scan cannot produce {cfg.n_points} returns in this scene")
        n_az *= 2
    keep = np.sort(rng.choice(pts.shape[0], size=cfg.n_points, replace=False))
    intensity = rng.uniform(0.0, 1.0, size=cfg.n_points)
    values = np.column_stack([pts[keep], intensity, ring[keep]]).astype(np.float32)
    return PointCloud(values)


# -- cameras --------------------------------------------------------------------

def _looking_along(yaw: float) -> np.ndarray:
    """LiDAR (x fwd, y left, z up) to camera (z fwd, x right, y down) at ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])


def random_rig(cfg: SceneConfig, rng: np.random.Generator) -> CameraRig:
    cams = []
    k = CameraIntrinsics(cfg.focal_px, cfg.focal_px, cfg.width / 2.0, cfg.height / 2.0, cfg.width, cfg.height)
    for i in range(cfg.n_cameras):
        yaw = 2 * math.pi * i / cfg.n_cameras + math.radians(rng.uniform(-1, 1) * cfg.yaw_jitter_deg)
        pitch = math.radians(rng.uniform(-1, 1) * cfg.pitch_jitter_deg)
        roll = math.radians(rng.uniform(-1, 1) * cfg.roll_jitter_deg)
        tilt = Rotation.from_rotvec([pitch, 0.0, roll]).as_matrix()
        r = tilt @ _looking_along(yaw)
        offset = rng.normal(size=3)
        offset *= cfg.camera_offset_m / np.linalg.norm(offset)
        cams.append(Camera(i, k, SE3Transform(r, -(r @ offset))))
    return CameraRig(tuple(cams))


def visible_fraction(cloud: PointCloud, cam: Camera) -> float:
    if cloud.n == 0:
        return 0.0
    u, v, front = project_points(cam.intrinsics, cam.extrinsics.apply(cloud.xyz))
    return float((front & points_in_bounds(u, v, cam.intrinsics)).mean())


# -- rendering --------------------------------------------------------------------

def _pixel_box(cam: Camera, occ: Occluder) -> tuple[int, int, int, int] | None:
    k = cam.intrinsics
    pc = cam.extrinsics.apply(occ.corners())
    if (pc[:, 2] <= Z_EPSILON).all():
        return None
    if (pc[:, 2] <= Z_EPSILON).any():
        return 0, k.height, 0, k.width
    u, v, _ = project_points(k, pc)
    j0 = max(int(math.floor(u.min())) - 1, 0)
    j1 = min(int(math.ceil(u.max())) + 1, k.width)
    i0 = max(int(math.floor(v.min())) - 1, 0)
    i1 = min(int(math.ceil(v.max())) + 1, k.height)
    if j0 >= j1 or i0 >= i1:
        return None
    return i0, i1, j0, j1


def render_depth(
    xyz: np.ndarray,
    cam: Camera,
    occluders: Sequence[Occluder] = (),
    quantum: float = 0.0,
) -> DepthMap:
    """Z-buffer of 1-pixel point splats and analytically rendered walls.

    Pixels nothing covers are 0 (invalid). With ``quantum > 0`` depths are
    rounded to the nearest multiple of it.
    """
    k = cam.intrinsics
    h, w = k.height, k.width
    zbuf = np.full(h * w, np.inf)

    rt = cam.extrinsics.rotation.T
    center = -(rt @ cam.extrinsics.translation)
    for occ in occluders:
        box = _pixel_box(cam, occ)
        if box is None:
            continue
        i0, i1, j0, j1 = box
        jj, ii = np.meshgrid(np.arange(j0, j1), np.arange(i0, i1))
        rays = np.stack(
            [(jj.ravel() + 0.5 - k.cx) / k.fx, (ii.ravel() + 0.5 - k.cy) / k.fy, np.ones(jj.size)], axis=1
        )
        # camera-frame rays have unit z, so the ray parameter is the depth
        t = _hit_occluder(center, rays @ rt.T, occ)
        flat = (ii.ravel() * w + jj.ravel())
        zbuf[flat] = np.minimum(zbuf[flat], t)

    if xyz.shape[0]:
        pc = cam.extrinsics.apply(xyz)
        u, v, front = project_points(k, pc)
        ok = front & points_in_bounds(u, v, k)
        flat = np.floor(v[ok]).astype(np.int64) * w + np.floor(u[ok]).astype(np.int64)
        np.minimum.at(zbuf, flat, pc[ok, 2])

    valid = np.isfinite(zbuf)
    depth = np.zeros(h * w)
    z = zbuf[valid]
    depth[valid] = np.round(z / quantum) * quantum if quantum > 0 else z
    return DepthMap(depth.reshape(h, w).astype(np.float32))


def feature_pattern(d: int, stride: int, width: int, height: int) -> FeatureMap:
    """Channel k at grid cell (r, c) holds sin(k + 0.1 r + 0.01 c)."""
    gh, gw = math.ceil(height / stride), math.ceil(width / stride)
    k = np.arange(d, dtype=np.float64)[:, None, None]
    r = np.arange(gh, dtype=np.float64)[None, :, None]
    c = np.arange(gw, dtype=np.float64)[None, None, :]
    return FeatureMap(np.sin(k + 0.1 * r + 0.01 * c).astype(np.float32), stride)


# -- scenes -----------------------------------------------------------------------

def generate_scene(cfg: SceneConfig, threads: int | None = None) -> SynthScene:
    occ_rng, scan_rng, rig_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    occluders = make_occluders(cfg, occ_rng)
    cloud = lidar_scan(cfg, occluders, scan_rng)

    for _ in range(cfg.max_retries):
        rig = random_rig(cfg, rig_rng)
        if all(visible_fraction(cloud, cam) >= cfg.min_visible_frac for cam in rig):
            break
    else:
        raise GenerationError(
            f"no rig in {cfg.max_retries} attempts lets every camera see "
            f"{cfg.min_visible_frac:.0%} of the points"
        )

    xyz = cloud.xyz
    workers = min(resolve_threads(threads), len(rig))

    def render(cam: Camera) -> DepthMap:
        return render_depth(xyz, cam, occluders, cfg.depth_quantum_m)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            depths = tuple(pool.map(render, rig))
    else:
        depths = tuple(render(cam) for cam in rig)
    fm = feature_pattern(cfg.feature_dim, cfg.stride, cfg.width, cfg.height)
    return SynthScene(cfg, cloud, rig, depths, tuple(fm for _ in rig), occluders)


def perturb_extrinsics(
    t: SE3Transform,
    rot_deg: float,
    trans_m: float,
    seed: int | Sequence[int],
) -> SE3Transform:
    """Weak calibration: left-compose ``t`` with a random rigid motion.

    The rotation turns exactly ``rot_deg`` about a uniformly random axis and
    the translation has norm exactly ``trans_m``. Directions depend only on
    ``seed``, so one seed with growing magnitudes walks along a single ray of
    miscalibration.
    """
    if rot_deg < 0 or trans_m < 0:
        raise ConfigurationError("perturbation magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    if rot_deg == 0:
        rn = np.eye(3)
    else:
        rn = Rotation.from_rotvec(axis * math.radians(rot_deg)).as_matrix()
    noise = SE3Transform(rn, direction * trans_m)
    return noise.compose(t)


def miscalibration_experiment(
    cfg: SceneConfig,
    scene: SynthScene | None = None,
    threads: int | None = None,
) -> list[ExperimentRow]:
    """Paint with ground-truth depth but perturbed calibration, per noise level.

    ``mean_abs_dz`` and ``exceed_frac`` cover points painted with a valid
    depth sample; ``painted_frac`` is the share of all points that reached
    any camera.
    """
    if len(cfg.noise) < 2 or not any(r == 0 and t == 0 for r, t in cfg.noise):
        raise ConfigurationError("noise schedule needs at least two levels including zero")
    if scene is None:
        scene = generate_scene(cfg, threads=threads)
    rows = []
    for rot, trans in cfg.noise:
        ext = [
            perturb_extrinsics(cam.extrinsics, rot, trans, seed=(cfg.seed, cam.camera_id))
            for cam in scene.rig
        ]
        painted = paint_cloud(
            scene.cloud, scene.rig.with_extrinsics(ext), scene.depths, scene.feats, scene.layout, threads
        )
        block = scene.layout.block(painted.values)
        has = painted.painted_mask() & (block[:, 2] > 0)
        dz = np.abs(block[has, DZ].astype(np.float64))
        rows.append(
            ExperimentRow(
                noise_rot_deg=rot,
                noise_trans_m=trans,
                mean_abs_dz=float(dz.mean()) if dz.size else math.nan,
                exceed_frac=float((dz > cfg.threshold_m).mean()) if dz.size else math.nan,
                painted_frac=float(painted.painted_mask().mean()) if painted.n else 0.0,
            )
        )
    return rows


def report_csv(rows: Sequence[ExperimentRow]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([repr(getattr(r, name)) for name in CSV_HEADER])
    return buf.getvalue()


def parse_noise(spec: str) -> tuple[tuple[float, float], ...]:
    """``"0,0.5,1"`` (rotation degrees) or ``"0:0,0.5:0.1"`` (degrees:meters)."""
    out = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        rot, _, trans = item.partition(":")
        try:
            out.append((float(rot), float(trans) if trans else 0.0))
        except ValueError:
            raise ConfigurationError(f"cannot parse noise level {item!r}") from None
    return tuple(out)
