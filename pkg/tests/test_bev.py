import dataclasses

import numpy as np
import pytest

from occkit.bev import (
    EgoPose,
    FusionWeights,
    SemanticEncoderWeights,
    TemporalQueue,
    collapse_height,
    semantic_encoder_2d,
    temporal_fuse,
    warp_bev,
)
from occkit.tensor import ConvSpec, conv2d
from occkit.view import GridSpec

EXACT_90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def bev_grid(n=32, half=16.0):
    return GridSpec((-half, -half, 0.0), (half, half, 1.0), (n, n, 1))


class TestEgoPose:
    def test_from_yaw_matrix(self):
        p = EgoPose.from_yaw(0.3, (1.0, 2.0, 0.5))
        m = p.matrix()
        assert m[0, 0] == pytest.approx(np.cos(0.3))
        assert m[1, 0] == pytest.approx(np.sin(0.3))
        np.testing.assert_allclose(m[:3, 3], [1.0, 2.0, 0.5])
        np.testing.assert_allclose(m[3], [0, 0, 0, 1])

    def test_inverse_composes_to_identity(self):
        p = EgoPose.from_yaw(0.7, (3.0, -1.0, 0.2))
        m = p.inverse().compose(p).matrix()
        np.testing.assert_allclose(m, np.eye(4), atol=1e-12)

    def test_matrix_round_trip(self):
        p = EgoPose.from_yaw(-1.2, (0.5, 0.25, 0.0))
        q = EgoPose.from_matrix(p.matrix())
        np.testing.assert_allclose(q.rotation, p.rotation)
        np.testing.assert_allclose(q.translation, p.translation)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError, match="orthonormal"):
            EgoPose(np.eye(3) * 1.5, np.zeros(3))


class TestCollapseHeight:
    def test_constant_grid(self):
        v = np.full((2, 4, 4, 8), 3.25)
        np.testing.assert_array_equal(collapse_height(v), np.full((2, 4, 4), 3.25))

    def test_single_slice(self):
        v = np.zeros((1, 3, 3, 8))
        v[0, :, :, 5] = 2.0
        np.testing.assert_allclose(collapse_height(v), np.full((1, 3, 3), 0.25))

    def test_matches_axis_reduce(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal((3, 5, 6, 4))
        np.testing.assert_array_equal(collapse_height(v, "mean"), v.mean(axis=3))
        np.testing.assert_array_equal(collapse_height(v, "sum"), v.sum(axis=3))
        np.testing.assert_array_equal(collapse_height(v, "max"), v.max(axis=3))

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError, match="mode"):
            collapse_height(np.zeros((1, 2, 2, 2)), "median")

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError, match="4D"):
            collapse_height(np.zeros((2, 2, 2)))


class TestWarpBev:
    def test_identity_pose_is_exact(self):
        rng = np.random.default_rng(1)
        b = rng.standard_normal((3, 32, 32)).astype(np.float32)
        p = EgoPose.from_yaw(0.9, (5.0, -2.0, 0.0))
        out = warp_bev(b, p, p, bev_grid())
        np.testing.assert_array_equal(out, b)

    def test_one_cell_shift_x_is_exact(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal((2, 32, 32))
        out = warp_bev(
            b, EgoPose.identity(), EgoPose.from_yaw(0.0, (1.0, 0.0, 0.0)), bev_grid()
        )
        want = np.zeros_like(b)
        want[:, :-1, :] = b[:, 1:, :]
        np.testing.assert_array_equal(out, want)

    def test_one_cell_shift_y_is_exact(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((2, 32, 32))
        out = warp_bev(
            b, EgoPose.identity(), EgoPose.from_yaw(0.0, (0.0, 1.0, 0.0)), bev_grid()
        )
        want = np.zeros_like(b)
        want[:, :, :-1] = b[:, :, 1:]
        np.testing.assert_array_equal(out, want)

    def test_quarter_turn_is_exact_permutation(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((2, 32, 32)).astype(np.float32)
        pose_now = EgoPose(EXACT_90, np.zeros(3))
        out = warp_bev(b, EgoPose.identity(), pose_now, bev_grid())
        want = b[:, ::-1, :].transpose(0, 2, 1)
        np.testing.assert_array_equal(out, want)

    def test_quarter_turn_from_yaw_matches_permutation(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal((2, 32, 32))
        out = warp_bev(b, EgoPose.identity(), EgoPose.from_yaw(np.pi / 2), bev_grid())
        want = b[:, ::-1, :].transpose(0, 2, 1)
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_out_of_range_zero_fill(self):
        b = np.ones((1, 32, 32))
        out = warp_bev(
            b, EgoPose.identity(), EgoPose.from_yaw(0.0, (40.0, 0.0, 0.0)), bev_grid()
        )
        assert not out.any()

    def test_composition_on_smooth_field(self):
        # compactly supported bump so the double warp loses nothing at borders
        grid = bev_grid(n=128)
        xs = grid.centers(0)
        r = np.hypot(xs[:, None], xs[None, :])
        radius = 12.0
        bump = np.where(r < radius, np.cos(np.pi * r / (2 * radius)) ** 2, 0.0)
        b = bump[None]

        p0 = EgoPose.from_yaw(0.10, (0.8, -0.4, 0.0))
        p1 = EgoPose.from_yaw(0.22, (1.3, 0.5, 0.0))
        p2 = EgoPose.from_yaw(0.35, (1.8, 1.0, 0.0))
        two_step = warp_bev(warp_bev(b, p0, p1, grid), p1, p2, grid)
        one_step = warp_bev(b, p0, p2, grid)
        assert np.abs(two_step - one_step).max() <= 1e-3

    def test_rejects_extent_mismatch(self):
        with pytest.raises(ValueError, match="extents"):
            warp_bev(np.zeros((1, 8, 8)), EgoPose.identity(), EgoPose.identity(), bev_grid())


class TestTemporalQueue:
    def test_eviction_order(self):
        q = TemporalQueue(2)
        for t in range(3):
            q.push(np.full((1, 2, 2), float(t)), EgoPose.identity(), float(t))
        assert len(q) == 2
        vals = [bev[0, 0, 0] for bev, _, _ in q.entries()]
        assert vals == [2.0, 1.0]

    def test_timestamps_strictly_increasing(self):
        q = TemporalQueue(3)
        q.push(np.zeros((1, 2, 2)), EgoPose.identity(), 1.0)
        with pytest.raises(ValueError, match="increas"):
            q.push(np.zeros((1, 2, 2)), EgoPose.identity(), 1.0)
        with pytest.raises(ValueError, match="increas"):
            q.push(np.zeros((1, 2, 2)), EgoPose.identity(), 0.5)

    def test_clear(self):
        q = TemporalQueue(2)
        q.push(np.zeros((1, 2, 2)), EgoPose.identity(), 0.0)
        q.clear()
        assert len(q) == 0
        q.push(np.zeros((1, 2, 2)), EgoPose.identity(), 0.0)
        assert len(q) == 1

    def test_rejects_bad_capacity(self):
        with pytest.raises(ValueError, match="capacity"):
            TemporalQueue(0)


def averaging_weights(channels, frames):
    """Center-tap kernels: mix1 averages the frame blocks, mix2 is identity."""
    w1 = np.zeros((channels, frames * channels, 3, 3))
    w2 = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        w2[c, c, 1, 1] = 1.0
        for f in range(frames):
            w1[c, f * channels + c, 1, 1] = 1.0 / frames
    return FusionWeights(w1, np.zeros(channels), w2, np.zeros(channels))


class TestTemporalFuse:
    def test_cold_start_uses_current_only(self):
        rng = np.random.default_rng(6)
        channels, frames = 2, 4
        w1 = np.zeros((channels, frames * channels, 3, 3))
        w1[:, :channels] = rng.standard_normal((channels, channels, 3, 3))
        w2 = rng.standard_normal((channels, channels, 3, 3))
        b1 = rng.standard_normal(channels)
        b2 = rng.standard_normal(channels)
        weights = FusionWeights(w1, b1, w2, b2)

        grid = bev_grid(n=8)
        b = rng.standard_normal((channels, 8, 8))
        out = temporal_fuse(
            TemporalQueue(frames - 1), b, EgoPose.identity(), 0.0, weights, grid
        )
        same3 = ConvSpec.same((3, 3))
        want = conv2d(conv2d(b, w1[:, :channels], b1, same3), w2, b2, same3)
        np.testing.assert_allclose(out, want, atol=1e-12)

    def test_averaging_fixed_point(self):
        rng = np.random.default_rng(7)
        channels, frames = 2, 4
        weights = averaging_weights(channels, frames)
        grid = bev_grid(n=8)
        b = rng.standard_normal((channels, 8, 8))

        q = TemporalQueue(frames - 1)
        for t in range(frames - 1):
            q.push(b, EgoPose.identity(), float(t))
        out = temporal_fuse(q, b, EgoPose.identity(), float(frames), weights, grid)
        np.testing.assert_allclose(out, b, atol=1e-12)

    def test_shape_fixed_at_any_fill_level(self):
        channels, frames = 2, 4
        weights = FusionWeights.seeded(0, channels, frames)
        grid = bev_grid(n=8)
        q = TemporalQueue(frames - 1)
        rng = np.random.default_rng(8)
        for t in range(6):
            b = rng.standard_normal((channels, 8, 8)).astype(np.float32)
            out = temporal_fuse(q, b, EgoPose.identity(), float(t), weights, grid)
            assert out.shape == (channels, 8, 8)

    def test_sixteen_frame_window(self):
        weights = FusionWeights.seeded(1, 2, 16)
        assert weights.n_frames == 16
        grid = bev_grid(n=8)
        q = TemporalQueue(15)
        out = temporal_fuse(
            q, np.ones((2, 8, 8), dtype=np.float32), EgoPose.identity(), 0.0, weights, grid
        )
        assert out.shape == (2, 8, 8)
        assert len(q) == 1

    def test_pushes_raw_current(self):
        rng = np.random.default_rng(9)
        weights = FusionWeights.seeded(2, 2, 4)
        grid = bev_grid(n=8)
        q = TemporalQueue(3)
        b = rng.standard_normal((2, 8, 8)).astype(np.float32)
        temporal_fuse(q, b, EgoPose.identity(), 0.0, weights, grid)
        stored, _, ts = q.entries()[0]
        np.testing.assert_array_equal(stored, b)
        assert ts == 0.0

    def test_moving_ego_aligns_history(self):
        # history holds a one-cell-ahead impulse; after the ego advances one
        # cell the warped slot sees it at the current cell
        channels, frames = 1, 2
        w1 = np.zeros((1, 2, 3, 3))
        w1[0, 1, 1, 1] = 1.0  # read only the (warped) history slot
        w2 = np.zeros((1, 1, 3, 3))
        w2[0, 0, 1, 1] = 1.0
        weights = FusionWeights(w1, np.zeros(1), w2, np.zeros(1))

        grid = bev_grid()
        hist = np.zeros((1, 32, 32))
        hist[0, 20, 16] = 5.0
        q = TemporalQueue(1)
        q.push(hist, EgoPose.identity(), 0.0)
        pose_now = EgoPose.from_yaw(0.0, (1.0, 0.0, 0.0))
        out = temporal_fuse(q, np.zeros((1, 32, 32)), pose_now, 1.0, weights, grid)
        assert out[0, 19, 16] == 5.0
        out[0, 19, 16] = 0.0
        assert not out.any()

    def test_rejects_capacity_mismatch(self):
        weights = FusionWeights.seeded(3, 2, 4)
        with pytest.raises(ValueError, match="capacity"):
            temporal_fuse(
                TemporalQueue(5),
                np.zeros((2, 8, 8), dtype=np.float32),
                EgoPose.identity(),
                0.0,
                weights,
                bev_grid(n=8),
            )

    def test_rejects_channel_mismatch(self):
        weights = FusionWeights.seeded(4, 2, 4)
        with pytest.raises(ValueError, match="BEV"):
            temporal_fuse(
                TemporalQueue(3),
                np.zeros((3, 8, 8), dtype=np.float32),
                EgoPose.identity(),
                0.0,
                weights,
                bev_grid(n=8),
            )


class TestSemanticEncoder:
    def test_shape_contract(self):
        weights = SemanticEncoderWeights.seeded(0, channels=3, out_channels=5)
        out = semantic_encoder_2d(np.ones((3, 100, 100), dtype=np.float32), weights)
        assert out.shape == (5, 100, 100)
        assert out.dtype == np.float32

    def test_zero_input_zero_biases(self):
        weights = SemanticEncoderWeights.seeded(1, channels=3, out_channels=5)
        zeroed = dataclasses.replace(
            weights,
            down1_b=np.zeros(3),
            down2_b=np.zeros(3),
            mid_b=np.zeros(3),
            up1_b=np.zeros(3),
            up2_b=np.zeros(5),
            skip_b=np.zeros(5),
        )
        out = semantic_encoder_2d(np.zeros((3, 16, 16)), zeroed)
        assert not out.any()

    def test_residual_identity(self):
        c = 3
        z3 = np.zeros((c, c, 3, 3))
        zb = np.zeros(c)
        weights = SemanticEncoderWeights(
            z3, zb, z3, zb, z3, zb,
            np.zeros((c, c, 2, 2)), zb, np.zeros((c, c, 2, 2)), zb,
        )
        rng = np.random.default_rng(10)
        b = rng.standard_normal((c, 12, 12))
        np.testing.assert_array_equal(semantic_encoder_2d(b, weights), b)

    def test_seeded_skip_only_when_widths_differ(self):
        assert SemanticEncoderWeights.seeded(2, 4, 4).skip_w is None
        assert SemanticEncoderWeights.seeded(2, 4, 6).skip_w is not None

    def test_rejects_indivisible_extents(self):
        weights = SemanticEncoderWeights.seeded(3, 2, 2)
        with pytest.raises(ValueError, match="divisible"):
            semantic_encoder_2d(np.zeros((2, 10, 12), dtype=np.float32), weights)

    def test_deterministic_for_seed(self):
        a = SemanticEncoderWeights.seeded(4, 2, 3)
        b = SemanticEncoderWeights.seeded(4, 2, 3)
        np.testing.assert_array_equal(a.down1_w, b.down1_w)
        np.testing.assert_array_equal(a.up2_w, b.up2_w)
