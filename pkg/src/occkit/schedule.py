"""Scheduled depth mixup.

During training the depth distribution fed to the lifting step is a blend of
the network's prediction and a ground-truth one-hot distribution. The blend
weight follows a sigmoid over normalized training progress: early iterations
lean on ground truth, late iterations on the prediction, with a smooth
handoff in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixupSchedule:
    """Sigmoid ramp over training progress.

    Progress iter/total maps linearly onto x in [-half_range, +half_range];
    the blend weight is sigmoid(steepness * x), so it runs from near 0 to
    near 1 and crosses 0.5 exactly at the midpoint.
    """

    steepness: float = 5.0
    total_iters: int = 1000
    half_range: float = 5.0

    def __post_init__(self):
        if not self.steepness > 0:
            raise ValueError(f"steepness must be > 0, got {self.steepness}")
        if self.total_iters < 1:
            raise ValueError(f"total_iters must be >= 1, got {self.total_iters}")
        if not self.half_range > 0:
            raise ValueError(f"half_range must be > 0, got {self.half_range}")


def iteration_to_x(iteration: int, schedule: MixupSchedule) -> float:
    """Map an iteration index onto the symmetric schedule axis."""
    if not 0 <= iteration <= schedule.total_iters:
        raise ValueError(
            f"iteration {iteration} outside [0, {schedule.total_iters}]"
        )
    n = schedule.half_range
    return -n + 2.0 * n * iteration / schedule.total_iters


def mixup_alpha(iteration: int, schedule: MixupSchedule) -> float:
    """Blend weight on the predicted depth at a given iteration.

    Monotonically increasing in the iteration; 0.5 at the midpoint.
    """
    x = iteration_to_x(iteration, schedule)
    return float(1.0 / (1.0 + np.exp(-schedule.steepness * x)))


def mix_depth(
    pred: np.ndarray,
    gt: np.ndarray,
    alpha: float,
    valid_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Blend predicted and ground-truth depth distributions.

    pred and gt are (D, H, W) per-pixel distributions. Where valid_mask is
    False there is no trustworthy ground truth, so the prediction passes
    through unblended.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    if pred.ndim != 3:
        raise ValueError(f"expected 3D (bin, v, u) distributions, got {pred.ndim}D")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    mixed = alpha * pred + (1.0 - alpha) * gt.astype(pred.dtype)
    if valid_mask is not None:
        if valid_mask.shape != pred.shape[1:]:
            raise ValueError(
                f"valid_mask shape {valid_mask.shape} != pixel extents {pred.shape[1:]}"
            )
        mixed = np.where(valid_mask[None, :, :], mixed, pred)
    return mixed.astype(pred.dtype, copy=False)


def gt_depth_from_points(
    depth_samples: np.ndarray,
    d_min: float,
    d_max: float,
    n_bins: int,
):
    """Build a one-hot depth distribution from measured per-pixel depths.

    depth_samples is (H, W) or (S, H, W) metric depth along the optical axis;
    NaN and nonpositive entries are missing. The nearest valid sample per
    pixel wins, then snaps to its uniform bin over [d_min, d_max). Pixels
    with no sample in range get a uniform distribution and a False validity
    flag.

    Returns (one_hot (n_bins, H, W) float32, valid (H, W) bool).
    """
    if not d_max > d_min > 0:
        raise ValueError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    d = np.asarray(depth_samples, dtype=np.float64)
    if d.ndim == 2:
        d = d[None]
    if d.ndim != 3:
        raise ValueError(f"depth_samples must be 2D or 3D, got {d.ndim}D")

    usable = np.isfinite(d) & (d > 0)
    nearest = np.where(usable, d, np.inf).min(axis=0)
    width = (d_max - d_min) / n_bins
    in_range = np.isfinite(nearest) & (nearest >= d_min) & (nearest < d_max)
    offsets = np.where(in_range, nearest - d_min, 0.0)
    bin_idx = np.clip(np.floor(offsets / width).astype(np.int64), 0, n_bins - 1)

    h, w = nearest.shape
    one_hot = np.full((n_bins, h, w), 1.0 / n_bins, dtype=np.float32)
    vv, uu = np.nonzero(in_range)
    one_hot[:, vv, uu] = 0.0
    one_hot[bin_idx[vv, uu], vv, uu] = 1.0
    return one_hot, in_range
