"""Synthetic scene generation.

A scene is a handful of axis-aligned box obstacles in a static world, an ego
vehicle driving through it, and a ring of pinhole cameras on the ego. Per
frame we rasterize the boxes into an ego-centric class grid, ray-march every
camera ray to its first occupied voxel for depth, and record which voxels
any ray passed through as the visibility mask.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import gsdt
from .bev import EgoPose
from .evaluate import EMPTY_CLASS, N_CLASSES
from .tensor import rng_named
from .view import CameraParams, GridSpec


@dataclass(frozen=True)
class BoxObstacle:
    """Axis-aligned box in world coordinates, tagged with a class id."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    cls: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if any(s <= 0 for s in self.size):
            raise ValueError(f"box size must be positive, got {self.size}")
        if not 0 <= self.cls < N_CLASSES or self.cls == EMPTY_CLASS:
            raise ValueError(f"box class must be a non-empty class id, got {self.cls}")

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.center) - 0.5 * np.array(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.center) + 0.5 * np.array(self.size)


def camera_ring(
    n_cameras: int,
    image_size: tuple[int, int],
    feature_size: tuple[int, int],
    focal: float,
    radius: float = 0.3,
    height: float = 1.5,
) -> list[CameraParams]:
    """Evenly spaced horizontal cameras: camera i yaws 2*pi*i/n from ego +x.

    Camera frames are optical (x right, y down, z forward); camera 0 looks
    straight ahead.
    """
    if n_cameras < 1:
        raise ValueError(f"need at least one camera, got {n_cameras}")
    h_i, w_i = image_size
    k = np.array(
        [
            [focal, 0.0, w_i / 2 - 0.5],
            [0.0, focal, h_i / 2 - 0.5],
            [0.0, 0.0, 1.0],
        ]
    )
    # optical axes -> ego axes for a forward-looking camera
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    cams = []
    for i in range(n_cameras):
        yaw = 2.0 * np.pi * i / n_cameras
        c, s = np.cos(yaw), np.sin(yaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        rot = rz @ base
        t = np.array([radius * c, radius * s, height])
        cams.append(
            CameraParams(k, rot, t, image_size=image_size, feature_size=feature_size)
        )
    return cams


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to generate a scene deterministically."""

    seed: int
    grid: GridSpec
    n_frames: int
    n_boxes: int = 8
    n_cameras: int = 2
    image_size: tuple[int, int] = (256, 704)
    feature_size: tuple[int, int] = (16, 44)
    focal: float = 352.0
    d_max: float = 25.0
    march_step: float = 0.1
    speed: float = 0.4
    yaw_rate: float = 0.0
    boxes: tuple[BoxObstacle, ...] | None = None

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.n_boxes < 0:
            raise ValueError(f"n_boxes must be >= 0, got {self.n_boxes}")
        if self.march_step <= 0 or self.d_max <= 0:
            raise ValueError("march_step and d_max must be positive")
        if self.boxes is not None:
            object.__setattr__(self, "boxes", tuple(self.boxes))

    def cameras(self) -> list[CameraParams]:
        return camera_ring(
            self.n_cameras, self.image_size, self.feature_size, self.focal
        )

    def poses(self) -> list[EgoPose]:
        """Ego-to-world pose per frame: constant speed along heading with an
        optional constant yaw rate; frame 0 is the identity."""
        out = []
        for t in range(self.n_frames):
            out.append(
                EgoPose.from_yaw(self.yaw_rate * t, (self.speed * t, 0.0, 0.0))
            )
        return out

    def resolve_boxes(self) -> tuple[BoxObstacle, ...]:
        """Explicit boxes, or seeded random ones that fit the frame-0 grid."""
        if self.boxes is not None:
            self._check_boxes(self.boxes)
            return self.boxes
        rng = rng_named(self.seed, "scene/boxes")
        lo = np.array(self.grid.start)
        hi = np.array(self.grid.end)
        z_span = hi[2] - lo[2]
        boxes = []
        for _ in range(self.n_boxes):
            size_xy = rng.uniform(0.8, 3.2, size=2)
            size_z = rng.uniform(0.8, min(2.4, z_span))
            margin = np.array([size_xy[0], size_xy[1], size_z]) * 0.5
            # keep a clear bubble around the ego so cameras never start
            # inside an obstacle
            while True:
                cx = rng.uniform(lo[0] + margin[0], hi[0] - margin[0])
                cy = rng.uniform(lo[1] + margin[1], hi[1] - margin[1])
                if np.hypot(cx, cy) > 3.0:
                    break
            cz = lo[2] + size_z / 2
            cls = int(rng.integers(1, EMPTY_CLASS))
            boxes.append(
                BoxObstacle((cx, cy, cz), (size_xy[0], size_xy[1], size_z), cls)
            )
        boxes = tuple(boxes)
        self._check_boxes(boxes)
        return boxes

    def _check_boxes(self, boxes) -> None:
        lo = np.array(self.grid.start)
        hi = np.array(self.grid.end)
        for b in boxes:
            if (b.lo < lo - 1e-9).any() or (b.hi > hi + 1e-9).any():
                raise ValueError(
                    f"box at {b.center} size {b.size} lies outside grid range"
                )


@dataclass
class SceneBundle:
    """Generated scene: per-frame class grids, visibility masks, depth maps,
    and ego poses, plus the geometry needed to replay it."""

    grid: GridSpec
    occupancy: np.ndarray  # (T, X, Y, Z) uint8 class ids
    visible: np.ndarray  # (T, X, Y, Z) uint8 0/1
    depth: np.ndarray  # (T, N_c, H_F, W_F) float32, -1 where no hit
    poses: np.ndarray  # (T, 4, 4) float64 ego-to-world
    spec: SceneSpec

    @property
    def n_frames(self) -> int:
        return self.occupancy.shape[0]

    def pose(self, t: int) -> EgoPose:
        return EgoPose.from_matrix(self.poses[t])

    def cameras(self) -> list[CameraParams]:
        return self.spec.cameras()


def _rasterize(
    boxes, grid: GridSpec, pose: EgoPose
) -> np.ndarray:
    """Class grid in the ego frame; later boxes overwrite earlier ones."""
    cx = grid.centers(0)
    cy = grid.centers(1)
    cz = grid.centers(2)
    pts = np.stack(np.meshgrid(cx, cy, cz, indexing="ij"), axis=-1)
    world = pts @ pose.rotation.T + pose.translation
    out = np.full(grid.counts, EMPTY_CLASS, dtype=np.uint8)
    for b in boxes:
        inside = ((world >= b.lo) & (world < b.hi)).all(axis=-1)
        out[inside] = b.cls
    return out


def _occupied_at(points: np.ndarray, occ: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Whether each ego-frame point lies in a non-empty voxel."""
    idx = np.floor((points - np.array(grid.start)) / np.array(grid.voxel_size))
    idx = idx.astype(np.int64)
    inside = ((idx >= 0) & (idx < np.array(grid.counts))).all(axis=-1)
    idx_c = np.clip(idx, 0, np.array(grid.counts) - 1)
    hit = occ[idx_c[..., 0], idx_c[..., 1], idx_c[..., 2]] != EMPTY_CLASS
    return hit & inside


def _march_frame(
    occ: np.ndarray,
    grid: GridSpec,
    cams: list[CameraParams],
    d_max: float,
    step: float,
):
    """Depth and visibility for one frame.

    Every feature pixel casts one ray, parametrized by optical-axis depth so
    samples sit at d = (k + 0.5) * step. The first sample inside an occupied
    voxel brackets the surface; bisection then narrows the crossing to
    ~1e-7 * step. Depth error against the true first crossing is bounded by
    one step (a grazing ray can skip a sliver thinner than the step).
    Visibility marks every voxel a sample lands in up to and including the
    hit voxel.
    """
    origins = []
    dirs = []
    for cam in cams:
        h_f, w_f = cam.feature_size
        v_idx, u_idx = np.meshgrid(
            np.arange(h_f, dtype=np.float64),
            np.arange(w_f, dtype=np.float64),
            indexing="ij",
        )
        u_img, v_img = cam.feature_to_image(u_idx, v_idx)
        pix = np.stack([u_img, v_img, np.ones_like(u_img)], axis=-1).reshape(-1, 3)
        ray = pix @ np.linalg.inv(cam.intrinsics).T  # z component is exactly 1
        dirs.append(ray @ cam.rotation.T)
        origins.append(np.broadcast_to(cam.translation, ray.shape))
    origins = np.concatenate(origins)  # (R, 3)
    dirs = np.concatenate(dirs)

    n_rays = origins.shape[0]
    hit_d = np.full(n_rays, -1.0)
    active = np.ones(n_rays, dtype=bool)
    visible = np.zeros(grid.counts, dtype=bool)
    counts = np.array(grid.counts)
    start = np.array(grid.start)
    vsize = np.array(grid.voxel_size)

    n_steps = int(np.ceil(d_max / step))
    for k in range(n_steps):
        if not active.any():
            break
        d = (k + 0.5) * step
        if d > d_max:
            break
        pts = origins[active] + d * dirs[active]
        idx = np.floor((pts - start) / vsize).astype(np.int64)
        inside = ((idx >= 0) & (idx < counts)).all(axis=-1)
        idx_c = np.clip(idx, 0, counts - 1)
        visible[idx_c[inside, 0], idx_c[inside, 1], idx_c[inside, 2]] = True
        occ_hit = np.zeros(len(pts), dtype=bool)
        occ_hit[inside] = (
            occ[idx_c[inside, 0], idx_c[inside, 1], idx_c[inside, 2]] != EMPTY_CLASS
        )
        if occ_hit.any():
            ray_ids = np.nonzero(active)[0][occ_hit]
            hit_d[ray_ids] = d
            active[ray_ids] = False

    # bisect [d_hit - step, d_hit] down to the free/occupied crossing
    hit_ids = np.nonzero(hit_d > 0)[0]
    if hit_ids.size:
        lo = np.maximum(hit_d[hit_ids] - step, 1e-9)
        hi = hit_d[hit_ids].copy()
        o = origins[hit_ids]
        r = dirs[hit_ids]
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            occ_mid = _occupied_at(o + mid[:, None] * r, occ, grid)
            hi = np.where(occ_mid, mid, hi)
            lo = np.where(occ_mid, lo, mid)
        hit_d[hit_ids] = 0.5 * (lo + hi)

    h_f, w_f = cams[0].feature_size
    depth = hit_d.reshape(len(cams), h_f, w_f).astype(np.float32)
    return depth, visible


def gen_scene(spec: SceneSpec) -> SceneBundle:
    """Generate the full bundle; bit-identical for equal specs."""
    boxes = spec.resolve_boxes()
    cams = spec.cameras()
    poses = spec.poses()
    nx, ny, nz = spec.grid.counts
    t_total = spec.n_frames
    h_f, w_f = spec.feature_size

    occupancy = np.empty((t_total, nx, ny, nz), dtype=np.uint8)
    visible = np.empty((t_total, nx, ny, nz), dtype=np.uint8)
    depth = np.empty((t_total, spec.n_cameras, h_f, w_f), dtype=np.float32)
    pose_mats = np.empty((t_total, 4, 4), dtype=np.float64)

    for t in range(t_total):
        occ = _rasterize(boxes, spec.grid, poses[t])
        d, vis = _march_frame(occ, spec.grid, cams, spec.d_max, spec.march_step)
        occupancy[t] = occ
        visible[t] = vis.astype(np.uint8)
        depth[t] = d
        pose_mats[t] = poses[t].matrix()

    return SceneBundle(spec.grid, occupancy, visible, depth, pose_mats, spec)


def save_scene(bundle: SceneBundle, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    gsdt.write(os.path.join(out_dir, "occupancy.gsdt"), bundle.occupancy)
    gsdt.write(os.path.join(out_dir, "visible.gsdt"), bundle.visible)
    gsdt.write(os.path.join(out_dir, "depth.gsdt"), bundle.depth)
    gsdt.write(os.path.join(out_dir, "poses.gsdt"), bundle.poses)
    s = bundle.spec
    lines = [
        f"seed = {s.seed}",
        f"grid_start = {s.grid.start[0]!r},{s.grid.start[1]!r},{s.grid.start[2]!r}",
        f"grid_end = {s.grid.end[0]!r},{s.grid.end[1]!r},{s.grid.end[2]!r}",
        f"grid_counts = {s.grid.counts[0]},{s.grid.counts[1]},{s.grid.counts[2]}",
        f"n_frames = {s.n_frames}",
        f"n_boxes = {s.n_boxes}",
        f"n_cameras = {s.n_cameras}",
        f"image_size = {s.image_size[0]},{s.image_size[1]}",
        f"feature_size = {s.feature_size[0]},{s.feature_size[1]}",
        f"focal = {s.focal!r}",
        f"d_max = {s.d_max!r}",
        f"march_step = {s.march_step!r}",
        f"speed = {s.speed!r}",
        f"yaw_rate = {s.yaw_rate!r}",
    ]
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_scene(scene_dir: str) -> SceneBundle:
    manifest = {}
    with open(os.path.join(scene_dir, "manifest.txt")) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            manifest[key.strip()] = value.strip()

    def floats(key):
        return tuple(float(v) for v in manifest[key].split(","))

    def ints(key):
        return tuple(int(v) for v in manifest[key].split(","))

    grid = GridSpec(floats("grid_start"), floats("grid_end"), ints("grid_counts"))
    spec = SceneSpec(
        seed=int(manifest["seed"]),
        grid=grid,
        n_frames=int(manifest["n_frames"]),
        n_boxes=int(manifest["n_boxes"]),
        n_cameras=int(manifest["n_cameras"]),
        image_size=ints("image_size"),
        feature_size=ints("feature_size"),
        focal=float(manifest["focal"]),
        d_max=float(manifest["d_max"]),
        march_step=float(manifest["march_step"]),
        speed=float(manifest["speed"]),
        yaw_rate=float(manifest["yaw_rate"]),
    )
    occupancy = gsdt.read(os.path.join(scene_dir, "occupancy.gsdt"))
    visible = gsdt.read(os.path.join(scene_dir, "visible.gsdt"))
    depth = gsdt.read(os.path.join(scene_dir, "depth.gsdt"))
    poses = gsdt.read(os.path.join(scene_dir, "poses.gsdt"))
    expected = (spec.n_frames,) + grid.counts
    if occupancy.shape != expected or visible.shape != expected:
        raise ValueError(
            f"scene grids have shape {occupancy.shape}, manifest says {expected}"
        )
    if depth.shape != (spec.n_frames, spec.n_cameras) + spec.feature_size:
        raise ValueError(f"scene depth shape {depth.shape} does not match manifest")
    if poses.shape != (spec.n_frames, 4, 4):
        raise ValueError(f"scene poses shape {poses.shape} does not match manifest")
    return SceneBundle(grid, occupancy, visible, depth, poses, spec)
