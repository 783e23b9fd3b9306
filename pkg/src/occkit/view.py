"""Explicit 2D-to-3D view transformation.

Per-pixel image features are weighted by a categorical depth distribution
(outer product), unprojected through the camera frustum into ego space, and
scatter-added into a voxel grid. Pooling runs at 2x-downsampled grid
resolution, so the caller passes the already-halved grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel partition of the box [start, end) in meters.

    ``counts`` are the voxel counts per axis; voxel size per axis is
    (end - start) / count.
    """

    start: tuple[float, float, float]
    end: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "end", tuple(float(v) for v in self.end))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        if len(self.start) != 3 or len(self.end) != 3 or len(self.counts) != 3:
            raise ValueError("grid start/end/counts must each have 3 entries")
        if any(e <= s for s, e in zip(self.start, self.end)):
            raise ValueError(f"grid end must exceed start, got {self.start}..{self.end}")
        if any(c < 1 for c in self.counts):
            raise ValueError(f"voxel counts must be >= 1, got {self.counts}")

    @property
    def voxel_size(self) -> tuple[float, float, float]:
        return tuple(
            (e - s) / c for s, e, c in zip(self.start, self.end, self.counts)
        )

    def downsample(self, factor: int) -> "GridSpec":
        """Same metric range with voxel counts divided by ``factor``."""
        if any(c % factor for c in self.counts):
            raise ValueError(
                f"counts {self.counts} not divisible by downsample factor {factor}"
            )
        return GridSpec(self.start, self.end, tuple(c // factor for c in self.counts))

    def centers(self, axis: int) -> np.ndarray:
        """Metric coordinates of voxel centers along one axis (float64)."""
        size = self.voxel_size[axis]
        idx = np.arange(self.counts[axis], dtype=np.float64)
        return self.start[axis] + (idx + 0.5) * size


@dataclass(frozen=True)
class CameraParams:
    """Pinhole camera: intrinsics, camera-to-ego extrinsics, and the image /
    feature-map extents (rows, cols)."""

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple[int, int]
    feature_size: tuple[int, int]

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if k.shape != (3, 3) or r.shape != (3, 3):
            raise ValueError("intrinsics and rotation must be 3x3")
        if abs(np.linalg.det(k)) < 1e-12:
            raise ValueError("intrinsics matrix is singular")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(
            self, "feature_size", tuple(int(v) for v in self.feature_size)
        )

    def feature_to_image(self, u: np.ndarray, v: np.ndarray):
        """Map feature-map pixel indices to image-plane pixel coordinates
        (integer pixel centers), honoring the downsample ratio."""
        h_i, w_i = self.image_size
        h_f, w_f = self.feature_size
        su, sv = w_i / w_f, h_i / h_f
        return (u + 0.5) * su - 0.5, (v + 0.5) * sv - 0.5

    def image_to_feature(self, u_img: np.ndarray, v_img: np.ndarray):
        h_i, w_i = self.image_size
        h_f, w_f = self.feature_size
        su, sv = w_i / w_f, h_i / h_f
        return (u_img + 0.5) / su - 0.5, (v_img + 0.5) / sv - 0.5


@dataclass(frozen=True)
class DepthDistribution:
    """Per-camera categorical depth: probs (N_c, D_bin, H_F, W_F) over
    uniform metric bins spanning [d_min, d_max)."""

    probs: np.ndarray
    d_min: float
    d_max: float

    def __post_init__(self):
        if self.probs.ndim != 4:
            raise ValueError(f"probs must be 4D (cam, bin, v, u), got {self.probs.ndim}D")
        if not self.d_max > self.d_min > 0:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")

    @property
    def n_cameras(self) -> int:
        return self.probs.shape[0]

    @property
    def n_bins(self) -> int:
        return self.probs.shape[1]

    @property
    def bin_width(self) -> float:
        return (self.d_max - self.d_min) / self.n_bins

    def bin_centers(self) -> np.ndarray:
        idx = np.arange(self.n_bins, dtype=np.float64)
        return self.d_min + (idx + 0.5) * self.bin_width

    def validate(self, tol: float = 1e-5) -> None:
        if (self.probs < 0).any():
            raise ValueError("depth probabilities must be nonnegative")
        sums = self.probs.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > tol:
            raise ValueError("depth probabilities must sum to 1 per pixel")


@dataclass(frozen=True)
class PseudoPointCloud:
    """Flattened lifting intermediate: one point per (camera, bin, v, u).

    positions are ego-frame xyz, features are the pixel feature scaled by
    the bin probability, weights are the raw bin probabilities.
    """

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError("positions must be (P, 3)")
        if self.features.ndim != 2 or self.features.shape[0] != self.positions.shape[0]:
            raise ValueError("features must be (P, C) aligned with positions")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def build(
        cls,
        features: np.ndarray,
        depth: "DepthDistribution",
        cams: list["CameraParams"],
    ) -> "PseudoPointCloud":
        """Enumerate every pseudo point in (camera, bin, v, u) order."""
        centers = depth.bin_centers()
        pos = []
        feat = []
        for i, cam in enumerate(cams):
            pts = frustum_points(cam, centers)  # (D, H, W, 3)
            d, h, w = pts.shape[:3]
            pos.append(pts.reshape(-1, 3))
            f = features[i].astype(np.float64)  # (C, H, W)
            p = depth.probs[i].astype(np.float64)  # (D, H, W)
            scaled = f[None, :, :, :] * p[:, None, :, :]  # (D, C, H, W)
            feat.append(scaled.transpose(0, 2, 3, 1).reshape(d * h * w, -1))
        return cls(np.concatenate(pos), np.concatenate(feat))


def frustum_points(
    cam: CameraParams,
    depth_bins: np.ndarray,
    ego_pose: np.ndarray | None = None,
) -> np.ndarray:
    """Unproject every (depth bin, feature pixel) into 3D.

    Returns (D, H_F, W_F, 3) float64 points in the ego frame, or in the world
    frame when a 4x4 ego pose is given. Depth is measured along the optical
    axis, so a pixel at depth d unprojects to K^-1 [u*d, v*d, d].
    """
    h_f, w_f = cam.feature_size
    d = np.asarray(depth_bins, dtype=np.float64).reshape(-1)
    v_idx, u_idx = np.meshgrid(
        np.arange(h_f, dtype=np.float64),
        np.arange(w_f, dtype=np.float64),
        indexing="ij",
    )
    u_img, v_img = cam.feature_to_image(u_idx, v_idx)
    # rays in homogeneous pixel coords, scaled by depth
    ones = np.ones_like(u_img)
    pix = np.stack([u_img, v_img, ones], axis=-1)  # (H, W, 3)
    rays = pix[None, :, :, :] * d[:, None, None, None]  # (D, H, W, 3)
    k_inv = np.linalg.inv(cam.intrinsics)
    pts_cam = rays @ k_inv.T
    pts = pts_cam @ cam.rotation.T + cam.translation
    if ego_pose is not None:
        pose = np.asarray(ego_pose, dtype=np.float64)
        pts = pts @ pose[:3, :3].T + pose[:3, 3]
    return pts


def project_points(cam: CameraParams, points: np.ndarray):
    """Inverse of :func:`frustum_points` for ego-frame points: returns
    feature-map (u, v) coordinates and optical-axis depth."""
    pts_cam = (points - cam.translation) @ cam.rotation
    pix = pts_cam @ cam.intrinsics.T
    depth = pix[..., 2]
    u_img = pix[..., 0] / depth
    v_img = pix[..., 1] / depth
    u_f, v_f = cam.image_to_feature(u_img, v_img)
    return u_f, v_f, depth


def lift_splat(
    features: np.ndarray,
    depth: DepthDistribution,
    cams: list[CameraParams],
    grid: GridSpec,
) -> np.ndarray:
    """Lift image features into a voxel grid.

    features: (N_c, C, H_F, W_F). Every pseudo point carries its pixel's
    feature scaled by the bin probability and is scatter-added into the voxel
    containing it; points outside the grid are dropped. ``grid`` is the
    pooled (already downsampled) grid. Cell membership uses half-open
    intervals, so boundary points belong to the lower-index voxel.
    Accumulation order is fixed, so results are deterministic.
    """
    if features.ndim != 4:
        raise ValueError(f"features must be 4D (cam, C, v, u), got {features.ndim}D")
    if len(cams) != features.shape[0] or len(cams) != depth.probs.shape[0]:
        raise ValueError(
            f"camera count mismatch: {len(cams)} rigs, {features.shape[0]} feature "
            f"maps, {depth.probs.shape[0]} depth maps"
        )
    if features.shape[2:] != depth.probs.shape[2:]:
        raise ValueError(
            f"feature extents {features.shape[2:]} != depth extents "
            f"{depth.probs.shape[2:]}"
        )
    n_c, n_ch = features.shape[:2]
    counts = grid.counts
    n_vox = counts[0] * counts[1] * counts[2]
    start = np.array(grid.start)
    vsize = np.array(grid.voxel_size)
    centers = depth.bin_centers()

    out = np.zeros((n_ch, n_vox), dtype=np.float64)
    for i in range(n_c):
        pts = frustum_points(cams[i], centers)  # (D, H, W, 3)
        idx = np.floor((pts - start) / vsize).astype(np.int64)
        ok = ((idx >= 0) & (idx < np.array(counts))).all(axis=-1)
        flat = (
            idx[..., 0] * (counts[1] * counts[2])
            + idx[..., 1] * counts[2]
            + idx[..., 2]
        )[ok]
        prob = depth.probs[i].astype(np.float64)[ok]  # (n_pts,)
        feat = features[i].astype(np.float64)  # (C, H, W)
        # per-point feature = pixel feature * bin probability
        for c in range(n_ch):
            weights = prob * np.broadcast_to(feat[c], ok.shape)[ok]
            out[c] += np.bincount(flat, weights=weights, minlength=n_vox)
    return out.reshape((n_ch,) + counts).astype(features.dtype, copy=False)


def sparsity_ratio(v: np.ndarray) -> float:
    """Fraction of exactly-zero entries."""
    if v.size == 0:
        raise ValueError("empty tensor has no sparsity ratio")
    return float(v.size - np.count_nonzero(v)) / v.size
