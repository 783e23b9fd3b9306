"""End-to-end forward pipeline.

Per frame: synthesize image-plane features, produce a depth distribution
(ground-truth one-hot or a small seeded conv stub), blend the two with the
scheduled mixup weight, lift features into the half-resolution voxel grid,
collapse to BEV, and fuse with warped history. On the final frame the fused
BEV map forks into a semantic path (2D encoder then height lifting) and a
geometric path (height lifting then the large-kernel 3D convolution); the
two volumes are summed, upsampled to full resolution, and classified.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bev import (
    FusionWeights,
    SemanticEncoderWeights,
    TemporalQueue,
    collapse_height,
    semantic_encoder_2d,
    temporal_fuse,
)
from .bvl import BVLWeights, UpsampleWeights, bev_to_voxel_lift, fuse_and_upsample
from .config import PipelineConfig
from .evaluate import N_CLASSES
from .reparam import (
    MergedKernel,
    forward_deploy,
    forward_train,
    merge_branches,
    random_branch_set,
)
from .scene import SceneBundle
from .schedule import gt_depth_from_points, mix_depth
from .tensor import ConvSpec, conv2d, conv3d, rng_named, softmax, uniform_init
from .view import DepthDistribution, GridSpec, lift_splat, sparsity_ratio


class PipelineStageError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class StubDepthWeights:
    """Tiny depth head: 3x3 conv + relu, then 1x1 conv to bin logits."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray

    @classmethod
    def seeded(cls, seed: int, channels: int, n_bins: int, dtype=np.float32):
        rng = rng_named(seed, "stub_depth_head")
        return cls(
            uniform_init(rng, (channels, channels, 3, 3), fan_in=channels * 9, dtype=dtype),
            uniform_init(rng, (channels,), fan_in=channels * 9, dtype=dtype),
            uniform_init(rng, (n_bins, channels, 1, 1), fan_in=channels, dtype=dtype),
            uniform_init(rng, (n_bins,), fan_in=channels, dtype=dtype),
        )


@dataclass(frozen=True)
class PipelineWeights:
    """Every learned tensor in the forward pass, all derived from one seed."""

    fusion: FusionWeights
    encoder: SemanticEncoderWeights
    bvl_semantic: BVLWeights
    bvl_geometric: BVLWeights
    branches: tuple
    merged: MergedKernel
    upsample: UpsampleWeights
    head_w: np.ndarray
    head_b: np.ndarray
    stub: StubDepthWeights


def build_weights(config: PipelineConfig) -> PipelineWeights:
    seed = config.seed
    c = config.channels
    cr = config.refined_channels
    nz_half = config.grid.counts[2] // 2
    branches = tuple(
        random_branch_set(
            seed, c_in=cr, c_out=cr, target=config.kernel,
            extents=config.branch_extents(),
        )
    )
    merged = merge_branches(list(branches), config.kernel)
    rng = rng_named(seed, "classifier_head")
    head_w = uniform_init(rng, (N_CLASSES, cr, 1, 1, 1), fan_in=cr)
    head_b = uniform_init(rng, (N_CLASSES,), fan_in=cr)
    return PipelineWeights(
        fusion=FusionWeights.seeded(seed, c, config.queue_len + 1),
        encoder=SemanticEncoderWeights.seeded(seed, c, cr),
        bvl_semantic=BVLWeights.seeded(seed, "bvl_semantic", cr, cr, nz_half),
        bvl_geometric=BVLWeights.seeded(seed, "bvl_geometric", c, cr, nz_half),
        branches=branches,
        merged=merged,
        upsample=UpsampleWeights.seeded(seed, cr),
        head_w=head_w,
        head_b=head_b,
        stub=StubDepthWeights.seeded(seed, c, config.depth_bins),
    )


@dataclass
class PipelineReport:
    """Wall-clock seconds per stage plus the lifted volume's zero fraction."""

    timings: dict
    total: float
    lift_sparsity: float


def frame_features(
    config: PipelineConfig, frame: int, dtype=np.float32
) -> np.ndarray:
    """Seeded stand-in for the image backbone: per-camera noise features."""
    h_f, w_f = config.scene_features
    out = np.empty((config.scene_cameras, config.channels, h_f, w_f), dtype=dtype)
    for ci in range(config.scene_cameras):
        rng = rng_named(config.seed, f"features/frame{frame:03d}/cam{ci}")
        out[ci] = rng.standard_normal((config.channels, h_f, w_f)).astype(dtype)
    return out


def _stub_depth(features: np.ndarray, stub: StubDepthWeights) -> np.ndarray:
    """(N_c, C, H, W) features -> (N_c, D, H, W) depth distributions."""
    out = []
    same3 = ConvSpec.same((3, 3))
    same1 = ConvSpec.same((1, 1))
    for f in features:
        h = np.maximum(conv2d(f, stub.conv1_w, stub.conv1_b, same3), 0)
        logits = conv2d(h, stub.conv2_w, stub.conv2_b, same1)
        out.append(softmax(logits, axis=0))
    return np.stack(out)


def _gt_depth(scene_depth: np.ndarray, config: PipelineConfig):
    """Per-camera one-hot depth plus validity from scene depth samples."""
    one_hots = []
    valids = []
    for cam_depth in scene_depth:
        oh, valid = gt_depth_from_points(
            np.where(cam_depth < 0, np.nan, cam_depth.astype(np.float64)),
            config.d_min,
            config.d_max,
            config.depth_bins,
        )
        one_hots.append(oh)
        valids.append(valid)
    return np.stack(one_hots), np.stack(valids)


def _check_scene(config: PipelineConfig, scene: SceneBundle) -> None:
    if scene.spec.feature_size != config.scene_features:
        raise ValueError(
            f"scene feature extents {scene.spec.feature_size} != config "
            f"{config.scene_features}"
        )
    if scene.spec.n_cameras != config.scene_cameras:
        raise ValueError(
            f"scene has {scene.spec.n_cameras} cameras, config expects "
            f"{config.scene_cameras}"
        )
    if scene.grid.counts != config.grid.counts or not np.allclose(
        scene.grid.start + scene.grid.end, config.grid.start + config.grid.end
    ):
        raise ValueError(
            f"scene grid {scene.grid} does not match config grid {config.grid}"
        )


def run_pipeline(
    config: PipelineConfig,
    scene: SceneBundle,
    alpha: float,
    reparam_mode: str = "deploy",
    weights: PipelineWeights | None = None,
):
    """Run the forward pass over all scene frames.

    Returns (logits, report): logits are (18, X, Y, Z) at the full grid
    resolution, the report carries per-stage wall-clock timings (their sum is
    bounded by the total) and the zero fraction of the final frame's lifted
    volume. ``reparam_mode`` selects the multi-branch ("train") or merged
    single-kernel ("deploy") form of the large 3D convolution; the two agree
    to within accumulated float32 rounding.
    """
    if reparam_mode not in ("train", "deploy"):
        raise ValueError(f"reparam_mode must be 'train' or 'deploy', got {reparam_mode!r}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    _check_scene(config, scene)
    if weights is None:
        weights = build_weights(config)

    half = config.half_grid()
    cams = scene.cameras()
    queue = TemporalQueue(config.queue_len)
    timings: dict = {}
    lift_sparsity = float("nan")

    def staged(stage, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kw)
        except Exception as e:
            raise PipelineStageError(stage, e) from e
        timings[stage] = timings.get(stage, 0.0) + (time.perf_counter() - t0)
        return result

    t_start = time.perf_counter()
    b_t = None
    for t in range(scene.n_frames):
        features = frame_features(config, t)
        gt_oh, valid = staged("depth", _gt_depth, scene.depth[t], config)
        if config.depth_provider == "stub":
            pred = staged("depth", _stub_depth, features, weights.stub)
        else:
            pred = gt_oh
        mixed = np.stack(
            [
                staged("depth", mix_depth, pred[i], gt_oh[i], alpha, valid[i])
                for i in range(len(cams))
            ]
        )
        dist = DepthDistribution(mixed, config.d_min, config.d_max)
        dist.validate(tol=1e-4)

        v = staged("lift", lift_splat, features, dist, cams, half)
        if t == scene.n_frames - 1:
            lift_sparsity = sparsity_ratio(v)
        b = staged("height_collapse", collapse_height, v, "mean")
        b_t = staged(
            "temporal_fuse",
            temporal_fuse,
            queue, b, scene.pose(t), float(t), weights.fusion, half,
        )

    b_s = staged("semantic_encoder", semantic_encoder_2d, b_t, weights.encoder)
    v_s = staged("bvl", bev_to_voxel_lift, b_s, weights.bvl_semantic)
    v_g0 = staged("bvl", bev_to_voxel_lift, b_t, weights.bvl_geometric)
    if reparam_mode == "deploy":
        v_g = staged("large_kernel_conv", forward_deploy, v_g0, weights.merged)
    else:
        v_g = staged("large_kernel_conv", forward_train, v_g0, list(weights.branches))
    v_gs = staged("fuse_upsample", fuse_and_upsample, v_g, v_s, weights.upsample)
    logits = staged(
        "classifier",
        conv3d,
        v_gs,
        weights.head_w.astype(v_gs.dtype),
        weights.head_b.astype(v_gs.dtype),
    )

    total = time.perf_counter() - t_start
    return logits, PipelineReport(timings=timings, total=total, lift_sparsity=lift_sparsity)
