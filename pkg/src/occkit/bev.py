"""BEV temporal fusion.

Voxel features are collapsed to a bird's-eye-view plane, past BEV maps are
warped into the current ego frame with a planar rigid transform, and the
stacked history is mixed back to the working channel width by two linear
3x3 convolutions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .tensor import ConvSpec, conv2d, rng_named, uniform_init, upsample2x_transpose2d
from .view import GridSpec


@dataclass(frozen=True)
class EgoPose:
    """Rigid ego-to-world transform: x_world = R @ x_ego + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise ValueError("rotation is not orthonormal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "EgoPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> "EgoPose":
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(r, np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "EgoPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("pose matrix must be 4x4")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "EgoPose":
        rt = self.rotation.T
        return EgoPose(rt, -rt @ self.translation)

    def compose(self, other: "EgoPose") -> "EgoPose":
        """self after other: (self o other)(x) = self(other(x))."""
        return EgoPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


class TemporalQueue:
    """Fixed-capacity FIFO of (bev, pose, timestamp); oldest entries fall off."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, bev: np.ndarray, pose: EgoPose, timestamp: float) -> None:
        if self._items and timestamp <= self._items[-1][2]:
            raise ValueError(
                f"timestamps must be strictly increasing: {timestamp} after "
                f"{self._items[-1][2]}"
            )
        self._items.append((bev, pose, float(timestamp)))

    def entries(self):
        """Newest first."""
        return list(reversed(self._items))

    def clear(self) -> None:
        self._items.clear()


def collapse_height(v: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Reduce a (C, X, Y, Z) voxel tensor over its height axis to (C, X, Y)."""
    if v.ndim != 4:
        raise ValueError(f"expected 4D voxel tensor, got {v.ndim}D")
    if mode == "mean":
        return v.mean(axis=3)
    if mode == "sum":
        return v.sum(axis=3)
    if mode == "max":
        return v.max(axis=3)
    raise ValueError(f"unknown height-collapse mode {mode!r}")


def _planar_relative(pose_hist: EgoPose, pose_now: EgoPose):
    """Current-ego -> history-ego transform restricted to the ground plane.

    Returns (c, s, tx, ty) with [c, -s; s, c] the planar rotation. The pair
    is read straight off the relative matrix and renormalized, so exact
    axis-aligned rotations stay exact.
    """
    m = pose_hist.inverse().compose(pose_now).matrix()
    c, s = m[0, 0], m[1, 0]
    norm = np.hypot(c, s)
    if norm < 1e-12:
        raise ValueError("degenerate planar rotation")
    return c / norm, s / norm, m[0, 3], m[1, 3]


def warp_bev(
    b_hist: np.ndarray,
    pose_hist: EgoPose,
    pose_now: EgoPose,
    grid: GridSpec,
) -> np.ndarray:
    """Resample a past BEV map onto the current ego frame's grid.

    For each current-frame cell center, the matching metric point in the
    history frame is found through the relative pose (yaw + planar
    translation only) and bilinearly sampled; points that fall outside the
    history map contribute zeros. b_hist is (C, X, Y) on the same grid spec.
    """
    if b_hist.ndim != 3:
        raise ValueError(f"expected 3D BEV tensor, got {b_hist.ndim}D")
    nx, ny = grid.counts[0], grid.counts[1]
    if b_hist.shape[1:] != (nx, ny):
        raise ValueError(f"BEV extents {b_hist.shape[1:]} do not match grid ({nx}, {ny})")

    c, s, tx, ty = _planar_relative(pose_hist, pose_now)
    vx, vy = grid.voxel_size[0], grid.voxel_size[1]
    xs, ys = grid.start[0], grid.start[1]

    # Source index = A @ dest index + b, derived from
    #   p_hist = R @ p_now + t  with p = start + (idx + 0.5) * vsize.
    a11 = c
    a12 = -s * (vy / vx)
    a21 = s * (vx / vy)
    a22 = c
    b_i = 0.5 * (a11 + a12) - 0.5 + ((c - 1.0) * xs - s * ys + tx) / vx
    b_j = 0.5 * (a21 + a22) - 0.5 + (s * xs + (c - 1.0) * ys + ty) / vy

    ii, jj = np.meshgrid(
        np.arange(nx, dtype=np.float64), np.arange(ny, dtype=np.float64), indexing="ij"
    )
    u = a11 * ii + a12 * jj + b_i
    v = a21 * ii + a22 * jj + b_j

    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    def gather(iu: np.ndarray, iv: np.ndarray) -> np.ndarray:
        inside = (iu >= 0) & (iu < nx) & (iv >= 0) & (iv < ny)
        iuc = np.clip(iu, 0, nx - 1)
        ivc = np.clip(iv, 0, ny - 1)
        vals = b_hist.astype(np.float64)[:, iuc, ivc]
        return vals * inside[None, :, :]

    w00 = (1.0 - fu) * (1.0 - fv)
    w01 = (1.0 - fu) * fv
    w10 = fu * (1.0 - fv)
    w11 = fu * fv
    out = (
        gather(u0, v0) * w00
        + gather(u0, v0 + 1) * w01
        + gather(u0 + 1, v0) * w10
        + gather(u0 + 1, v0 + 1) * w11
    )
    return out.astype(b_hist.dtype, copy=False)


@dataclass(frozen=True)
class FusionWeights:
    """Two linear 3x3 convs mixing stacked history down to C channels."""

    mix1_w: np.ndarray
    mix1_b: np.ndarray
    mix2_w: np.ndarray
    mix2_b: np.ndarray

    def __post_init__(self):
        if self.mix1_w.ndim != 4 or self.mix2_w.ndim != 4:
            raise ValueError("fusion conv weights must be 4D")
        if self.mix1_w.shape[2:] != (3, 3) or self.mix2_w.shape[2:] != (3, 3):
            raise ValueError("fusion convs must use 3x3 kernels")
        if self.mix2_w.shape[1] != self.mix1_w.shape[0]:
            raise ValueError("mix2 input channels must equal mix1 output channels")

    @property
    def n_channels(self) -> int:
        return self.mix2_w.shape[0]

    @property
    def n_frames(self) -> int:
        return self.mix1_w.shape[1] // self.mix2_w.shape[0]

    @classmethod
    def seeded(cls, seed: int, channels: int, frames: int, dtype=np.float32):
        c_in = channels * frames
        rng = rng_named(seed, "temporal_fusion")
        return cls(
            uniform_init(rng, (channels, c_in, 3, 3), fan_in=c_in * 9, dtype=dtype),
            uniform_init(rng, (channels,), fan_in=c_in * 9, dtype=dtype),
            uniform_init(rng, (channels, channels, 3, 3), fan_in=channels * 9, dtype=dtype),
            uniform_init(rng, (channels,), fan_in=channels * 9, dtype=dtype),
        )

    def astype(self, dtype) -> "FusionWeights":
        return FusionWeights(
            self.mix1_w.astype(dtype),
            self.mix1_b.astype(dtype),
            self.mix2_w.astype(dtype),
            self.mix2_b.astype(dtype),
        )


def temporal_fuse(
    queue: TemporalQueue,
    b_current: np.ndarray,
    pose_now: EgoPose,
    timestamp: float,
    weights: FusionWeights,
    grid: GridSpec,
) -> np.ndarray:
    """Fuse the current BEV map with warped history and push it to the queue.

    The stack is [current, newest, ..., oldest] with missing history slots
    zero-filled, giving a fixed (frames * C)-channel input; the mixing convs
    are linear (no activation). Returns the fused (C, X, Y) map. The raw
    current map (not the fused output) enters the queue, stamped with its
    pose for later warping.
    """
    n_ch = weights.n_channels
    frames = weights.n_frames
    if b_current.ndim != 3 or b_current.shape[0] != n_ch:
        raise ValueError(
            f"current BEV must be ({n_ch}, X, Y), got {b_current.shape}"
        )
    if queue.capacity != frames - 1:
        raise ValueError(
            f"queue capacity {queue.capacity} does not match fusion window "
            f"{frames} (current + {frames - 1} history)"
        )

    stack = np.zeros((frames * n_ch,) + b_current.shape[1:], dtype=b_current.dtype)
    stack[:n_ch] = b_current
    for slot, (bev, pose, _ts) in enumerate(queue.entries(), start=1):
        stack[slot * n_ch : (slot + 1) * n_ch] = warp_bev(bev, pose, pose_now, grid)

    spec = ConvSpec.same((3, 3))
    h = conv2d(stack, weights.mix1_w.astype(stack.dtype), weights.mix1_b.astype(stack.dtype), spec)
    out = conv2d(h, weights.mix2_w.astype(stack.dtype), weights.mix2_b.astype(stack.dtype), spec)
    queue.push(b_current, pose_now, timestamp)
    return out


@dataclass(frozen=True)
class SemanticEncoderWeights:
    """Small 2D encoder-decoder over the fused BEV map.

    Two stride-2 3x3 downsamples, a residual 3x3 middle block, two exact 2x
    transpose-conv upsamples with skip connections, and an optional 1x1
    projection when the output width differs from the input width.
    """

    down1_w: np.ndarray
    down1_b: np.ndarray
    down2_w: np.ndarray
    down2_b: np.ndarray
    mid_w: np.ndarray
    mid_b: np.ndarray
    up1_w: np.ndarray
    up1_b: np.ndarray
    up2_w: np.ndarray
    up2_b: np.ndarray
    skip_w: np.ndarray | None = None
    skip_b: np.ndarray | None = None

    @property
    def in_channels(self) -> int:
        return self.down1_w.shape[1]

    @property
    def out_channels(self) -> int:
        return self.up2_w.shape[1]

    @classmethod
    def seeded(cls, seed: int, channels: int, out_channels: int, dtype=np.float32):
        rng = rng_named(seed, "semantic_encoder_2d")
        c, co = channels, out_channels

        def conv_w(c_out, c_in, k):
            return uniform_init(rng, (c_out, c_in, k, k), fan_in=c_in * k * k, dtype=dtype)

        def bias(c_out, c_in, k):
            return uniform_init(rng, (c_out,), fan_in=c_in * k * k, dtype=dtype)

        up1_w = uniform_init(rng, (c, c, 2, 2), fan_in=c, dtype=dtype)
        up1_b = uniform_init(rng, (c,), fan_in=c, dtype=dtype)
        up2_w = uniform_init(rng, (c, co, 2, 2), fan_in=c, dtype=dtype)
        up2_b = uniform_init(rng, (co,), fan_in=c, dtype=dtype)
        skip_w = skip_b = None
        if co != c:
            skip_w = conv_w(co, c, 1)
            skip_b = bias(co, c, 1)
        return cls(
            conv_w(c, c, 3), bias(c, c, 3),
            conv_w(c, c, 3), bias(c, c, 3),
            conv_w(c, c, 3), bias(c, c, 3),
            up1_w, up1_b, up2_w, up2_b, skip_w, skip_b,
        )

    def astype(self, dtype) -> "SemanticEncoderWeights":
        conv = lambda a: None if a is None else a.astype(dtype)
        return SemanticEncoderWeights(*(conv(getattr(self, f)) for f in (
            "down1_w", "down1_b", "down2_w", "down2_b", "mid_w", "mid_b",
            "up1_w", "up1_b", "up2_w", "up2_b", "skip_w", "skip_b",
        )))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def semantic_encoder_2d(b_t: np.ndarray, weights: SemanticEncoderWeights) -> np.ndarray:
    """Refine a fused BEV map at multiple scales.

    b_t is (C, X, Y) with X and Y divisible by 4. Output is (C', X, Y) with
    no activation on the final layer.
    """
    if b_t.ndim != 3:
        raise ValueError(f"expected 3D BEV tensor, got {b_t.ndim}D")
    nx, ny = b_t.shape[1], b_t.shape[2]
    if nx % 4 or ny % 4:
        raise ValueError(f"BEV extents must be divisible by 4, got ({nx}, {ny})")

    dt = b_t.dtype
    w = weights.astype(dt)
    stride2 = ConvSpec(kernel=(3, 3), stride=(2, 2), padding=(1, 1))
    same3 = ConvSpec.same((3, 3))

    d1 = _relu(conv2d(b_t, w.down1_w, w.down1_b, stride2))  # (C, X/2, Y/2)
    d2 = _relu(conv2d(d1, w.down2_w, w.down2_b, stride2))  # (C, X/4, Y/4)
    m = _relu(conv2d(d2, w.mid_w, w.mid_b, same3) + d2)
    u1 = _relu(upsample2x_transpose2d(m, w.up1_w, w.up1_b) + d1)  # (C, X/2, Y/2)
    u0 = upsample2x_transpose2d(u1, w.up2_w, w.up2_b)  # (C', X, Y)
    if w.skip_w is not None:
        u0 = u0 + conv2d(b_t, w.skip_w, w.skip_b, ConvSpec.same((1, 1)))
    elif weights.out_channels == weights.in_channels:
        u0 = u0 + b_t
    return u0
