"""BEV-to-voxel lifting.

A flat BEV map is expanded back to a 3D voxel tensor by pairing a per-cell
context vector with a predicted height distribution: the voxel feature at
height z is the context feature scaled by the cell's probability of mass at
z. The height distribution is a softmax, so summing the lifted volume over
height recovers the context map exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConvSpec, conv2d, rng_named, softmax, uniform_init, upsample2x_transpose3d


@dataclass(frozen=True)
class BVLWeights:
    """1x1 context conv (C_in -> C_out) and 1x1 height conv (C_in -> Z)."""

    context_w: np.ndarray
    context_b: np.ndarray
    height_w: np.ndarray
    height_b: np.ndarray

    def __post_init__(self):
        if self.context_w.ndim != 4 or self.height_w.ndim != 4:
            raise ValueError("BVL conv weights must be 4D")
        if self.context_w.shape[2:] != (1, 1) or self.height_w.shape[2:] != (1, 1):
            raise ValueError("BVL convs must use 1x1 kernels")
        if self.context_w.shape[1] != self.height_w.shape[1]:
            raise ValueError("context and height convs must share input channels")

    @property
    def in_channels(self) -> int:
        return self.context_w.shape[1]

    @property
    def out_channels(self) -> int:
        return self.context_w.shape[0]

    @property
    def n_heights(self) -> int:
        return self.height_w.shape[0]

    @classmethod
    def seeded(cls, seed: int, name: str, c_in: int, c_out: int, n_heights: int,
               dtype=np.float32):
        rng = rng_named(seed, name)
        return cls(
            uniform_init(rng, (c_out, c_in, 1, 1), fan_in=c_in, dtype=dtype),
            uniform_init(rng, (c_out,), fan_in=c_in, dtype=dtype),
            uniform_init(rng, (n_heights, c_in, 1, 1), fan_in=c_in, dtype=dtype),
            uniform_init(rng, (n_heights,), fan_in=c_in, dtype=dtype),
        )

    def astype(self, dtype) -> "BVLWeights":
        return BVLWeights(
            self.context_w.astype(dtype),
            self.context_b.astype(dtype),
            self.height_w.astype(dtype),
            self.height_b.astype(dtype),
        )


def predict_height(b: np.ndarray, weights: BVLWeights) -> np.ndarray:
    """Per-cell height distribution: (Z, X, Y), softmax over the height axis."""
    if b.ndim != 3:
        raise ValueError(f"expected 3D BEV tensor, got {b.ndim}D")
    w = weights.astype(b.dtype)
    logits = conv2d(b, w.height_w, w.height_b, ConvSpec.same((1, 1)))
    return softmax(logits, axis=0)


def bev_to_voxel_lift(b: np.ndarray, weights: BVLWeights) -> np.ndarray:
    """Lift (C_in, X, Y) to (C_out, X, Y, Z).

    out[c, x, y, z] = context[c, x, y] * height[z, x, y]. Since the height
    distribution sums to one per cell, the volume's height-sum reproduces the
    context map.
    """
    if b.ndim != 3:
        raise ValueError(f"expected 3D BEV tensor, got {b.ndim}D")
    w = weights.astype(b.dtype)
    ctx = conv2d(b, w.context_w, w.context_b, ConvSpec.same((1, 1)))
    hgt = predict_height(b, weights)
    return np.einsum("cxy,zxy->cxyz", ctx, hgt)


@dataclass(frozen=True)
class UpsampleWeights:
    """Exact 2x voxel upsample: transpose conv, stride 2, kernel 2."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 5 or self.weight.shape[2:] != (2, 2, 2):
            raise ValueError("upsample weight must be (C_in, C_out, 2, 2, 2)")
        if self.bias.shape != (self.weight.shape[1],):
            raise ValueError("upsample bias must match output channels")

    @classmethod
    def seeded(cls, seed: int, channels: int, dtype=np.float32):
        rng = rng_named(seed, "voxel_upsample")
        return cls(
            uniform_init(rng, (channels, channels, 2, 2, 2), fan_in=channels, dtype=dtype),
            uniform_init(rng, (channels,), fan_in=channels, dtype=dtype),
        )

    def astype(self, dtype) -> "UpsampleWeights":
        return UpsampleWeights(self.weight.astype(dtype), self.bias.astype(dtype))


def fuse_and_upsample(
    v_g: np.ndarray, v_s: np.ndarray, weights: UpsampleWeights
) -> np.ndarray:
    """Sum the geometric and semantic volumes and double every spatial extent."""
    if v_g.shape != v_s.shape:
        raise ValueError(f"volume shapes differ: {v_g.shape} vs {v_s.shape}")
    if v_g.ndim != 4:
        raise ValueError(f"expected 4D voxel tensors, got {v_g.ndim}D")
    w = weights.astype(v_g.dtype)
    return upsample2x_transpose3d(v_g + v_s, w.weight, w.bias)
