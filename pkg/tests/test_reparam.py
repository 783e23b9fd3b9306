import numpy as np
import pytest

from occkit.reparam import (
    BatchNormParams,
    ConvBranchSpec,
    MergedKernel,
    apply_bn,
    default_branch_extents,
    dilate_to_sparse,
    forward_deploy,
    forward_train,
    fuse_bn,
    load_branch_set,
    load_merged,
    merge_branches,
    random_branch_set,
    save_branch_set,
    save_merged,
)
from occkit.tensor import ConvSpec, conv3d


def merged_kernel_loops(branches, target):
    """Index-mapping oracle: place every fused tap at its centered offset."""
    c_out, c_in = branches[0].weight.shape[:2]
    weight = np.zeros((c_out, c_in) + tuple(target), dtype=np.float64)
    bias = np.zeros(c_out, dtype=np.float64)
    for br in branches:
        scale = br.bn.gamma.astype(np.float64) / br.bn.std.astype(np.float64)
        off = [(t - e) // 2 for t, e in zip(target, br.effective)]
        kx, ky, kz = br.kernel
        rx, ry, rz = br.dilation
        for o in range(c_out):
            for c in range(c_in):
                for a in range(kx):
                    for b in range(ky):
                        for d in range(kz):
                            weight[o, c, off[0] + a * rx, off[1] + b * ry, off[2] + d * rz] += (
                                float(br.weight[o, c, a, b, d]) * scale[o]
                            )
        bias += br.bn.beta.astype(np.float64) - br.bn.mean.astype(np.float64) * scale
    return weight, bias


class TestDilateToSparse:
    def test_unit_dilation_identity(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((2, 2, 3, 3, 1)).astype(np.float32)
        np.testing.assert_array_equal(dilate_to_sparse(w, (1, 1, 1)), w)

    def test_extents(self):
        w = np.ones((1, 1, 3, 3, 1), dtype=np.float32)
        assert dilate_to_sparse(w, (2, 2, 1)).shape == (1, 1, 5, 5, 1)

    def test_conv_agrees_with_dense_dilation(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 10, 10, 6))
        w = rng.standard_normal((3, 2, 3, 3, 3))
        direct = conv3d(x, w, spec=ConvSpec(kernel=(3, 3, 3), dilation=(2, 2, 2)))
        sparse = dilate_to_sparse(w, (2, 2, 2))
        via_sparse = conv3d(x, sparse, spec=ConvSpec(kernel=(5, 5, 5)))
        np.testing.assert_array_equal(direct, via_sparse)


class TestFuseBn:
    def test_identity_norm(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((3, 2, 3, 3, 1)).astype(np.float32)
        fw, fb = fuse_bn(w, BatchNormParams.identity(3))
        np.testing.assert_array_equal(fw, w)
        np.testing.assert_array_equal(fb, np.zeros(3, dtype=np.float32))

    def test_scalar_hand_case(self):
        w = np.full((1, 1, 1, 1, 1), 2.0)
        bn = BatchNormParams(
            mean=np.array([1.0]),
            std=np.array([1.5]),
            gamma=np.array([3.0]),
            beta=np.array([0.5]),
        )
        fw, fb = fuse_bn(w, bn)
        assert fw[0, 0, 0, 0, 0] == pytest.approx(4.0)
        assert fb[0] == pytest.approx(-1.5)

    def test_conv_then_norm_equals_fused(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 6, 6, 4))
        w = rng.standard_normal((3, 2, 3, 3, 1))
        bn = BatchNormParams(
            mean=rng.standard_normal(3),
            std=rng.uniform(0.5, 2.0, 3),
            gamma=rng.standard_normal(3),
            beta=rng.standard_normal(3),
        )
        spec = ConvSpec.same((3, 3, 1))
        sequential = apply_bn(conv3d(x, w, spec=spec), bn)
        fw, fb = fuse_bn(w, bn)
        fused = conv3d(x, fw, fb, spec)
        np.testing.assert_allclose(sequential, fused, atol=1e-12)

    def test_rejects_nonpositive_std(self):
        with pytest.raises(ValueError, match="strictly positive"):
            BatchNormParams(
                mean=np.zeros(2),
                std=np.array([1.0, 0.0]),
                gamma=np.ones(2),
                beta=np.zeros(2),
            )


class TestMergeBranches:
    def test_singleton_identity_merge(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((2, 2, 5, 5, 1)).astype(np.float32)
        branch = ConvBranchSpec(w, (1, 1, 1), BatchNormParams.identity(2))
        merged = merge_branches([branch], (5, 5, 1))
        np.testing.assert_array_equal(merged.weight, w)
        np.testing.assert_array_equal(merged.bias, np.zeros(2, dtype=np.float32))

    def test_three_branch_layout(self):
        branches = random_branch_set(0, c_in=2, c_out=2, target=(11, 11, 1))
        assert [b.kernel for b in branches] == [(11, 11, 1), (5, 5, 1), (3, 3, 1)]
        assert [b.effective for b in branches] == [(11, 11, 1), (9, 9, 1), (7, 7, 1)]
        merged = merge_branches(branches, (11, 11, 1))
        assert merged.extents == (11, 11, 1)

    def test_matches_index_mapping_oracle(self):
        for seed in range(3):
            branches = [
                b.astype(np.float64)
                for b in random_branch_set(seed, c_in=2, c_out=3, target=(7, 7, 3))
            ]
            merged = merge_branches(branches, (7, 7, 3))
            want_w, want_b = merged_kernel_loops(branches, (7, 7, 3))
            np.testing.assert_allclose(merged.weight, want_w, atol=1e-12)
            np.testing.assert_allclose(merged.bias, want_b, atol=1e-12)

    def test_permutation_invariant(self):
        branches = [
            b.astype(np.float64)
            for b in random_branch_set(5, c_in=2, c_out=2, target=(9, 9, 1))
        ]
        a = merge_branches(branches, (9, 9, 1))
        b = merge_branches(branches[::-1], (9, 9, 1))
        np.testing.assert_allclose(a.weight, b.weight, atol=1e-12)
        np.testing.assert_allclose(a.bias, b.bias, atol=1e-12)

    def test_linear_in_branch_weight(self):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((2, 2, 3, 3, 1))
        bn = BatchNormParams.identity(2, dtype=np.float64)
        one = merge_branches([ConvBranchSpec(w, (1, 1, 1), bn)], (5, 5, 1))
        two = merge_branches([ConvBranchSpec(2.0 * w, (1, 1, 1), bn)], (5, 5, 1))
        np.testing.assert_allclose(two.weight, 2.0 * one.weight, atol=1e-12)

    def test_rejects_oversized_branch(self):
        w = np.zeros((1, 1, 7, 7, 1), dtype=np.float32)
        branch = ConvBranchSpec(w, (1, 1, 1), BatchNormParams.identity(1))
        with pytest.raises(ValueError, match="exceeds target"):
            merge_branches([branch], (5, 5, 1))

    def test_rejects_parity_mismatch(self):
        w = np.zeros((1, 1, 2, 3, 1), dtype=np.float32)
        branch = ConvBranchSpec(w, (1, 1, 1), BatchNormParams.identity(1))
        with pytest.raises(ValueError, match="parity"):
            merge_branches([branch], (5, 5, 1))

    def test_even_extents_matching_parity_allowed(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((1, 1, 2, 2, 2))
        branch = ConvBranchSpec(w, (1, 1, 1), BatchNormParams.identity(1, np.float64))
        merged = merge_branches([branch], (4, 4, 2))
        assert merged.extents == (4, 4, 2)
        x = rng.standard_normal((1, 6, 6, 4))
        np.testing.assert_allclose(
            forward_train(x, [branch]), forward_deploy(x, merged), atol=1e-12
        )


class TestEquivalence:
    @pytest.mark.parametrize("seed", range(5))
    def test_f32(self, seed):
        branches = random_branch_set(seed, c_in=4, c_out=4, target=(7, 7, 3))
        merged = merge_branches(branches, (7, 7, 3))
        rng = np.random.default_rng(seed + 100)
        x = rng.uniform(-1, 1, (4, 10, 10, 6)).astype(np.float32)
        diff = np.abs(forward_train(x, branches) - forward_deploy(x, merged))
        assert float(diff.max()) <= 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_f64(self, seed):
        branches = [
            b.astype(np.float64)
            for b in random_branch_set(seed, c_in=4, c_out=4, target=(7, 7, 3))
        ]
        merged = merge_branches(branches, (7, 7, 3))
        rng = np.random.default_rng(seed + 200)
        x = rng.uniform(-1, 1, (4, 10, 10, 6))
        diff = np.abs(forward_train(x, branches) - forward_deploy(x, merged))
        assert float(diff.max()) <= 1e-10

    def test_full_kernel_config(self):
        branches = [
            b.astype(np.float64)
            for b in random_branch_set(9, c_in=3, c_out=3, target=(11, 11, 1))
        ]
        merged = merge_branches(branches, (11, 11, 1))
        rng = np.random.default_rng(300)
        x = rng.uniform(-1, 1, (3, 16, 16, 4))
        diff = np.abs(forward_train(x, branches) - forward_deploy(x, merged))
        assert float(diff.max()) <= 1e-10

    def test_output_extents_preserved(self):
        branches = random_branch_set(1, c_in=2, c_out=5, target=(11, 11, 1))
        x = np.zeros((2, 9, 13, 4), dtype=np.float32)
        assert forward_train(x, branches).shape == (5, 9, 13, 4)
        assert forward_deploy(x, merge_branches(branches, (11, 11, 1))).shape == (
            5,
            9,
            13,
            4,
        )


class TestDefaultBranchExtents:
    def test_standard_target(self):
        assert default_branch_extents((11, 11, 1)) == [
            ((11, 11, 1), (1, 1, 1)),
            ((5, 5, 1), (2, 2, 1)),
            ((3, 3, 1), (3, 3, 1)),
        ]

    def test_small_target_deduplicates(self):
        layouts = default_branch_extents((3, 3, 1))
        assert layouts[0] == ((3, 3, 1), (1, 1, 1))
        assert len(layouts) == len(set(layouts))

    def test_all_layouts_fit(self):
        for target in [(11, 11, 1), (7, 7, 7), (5, 5, 3), (9, 3, 1)]:
            for kernel, dilation in default_branch_extents(target):
                eff = tuple((k - 1) * r + 1 for k, r in zip(kernel, dilation))
                assert all(e <= t for e, t in zip(eff, target))
                assert all((t - e) % 2 == 0 for e, t in zip(eff, target))


class TestSerialization:
    def test_branch_set_round_trip(self, tmp_path):
        branches = random_branch_set(11, c_in=2, c_out=3, target=(5, 5, 1))
        save_branch_set(tmp_path, branches, target=(5, 5, 1))
        loaded, target = load_branch_set(tmp_path)
        assert target == (5, 5, 1)
        assert len(loaded) == len(branches)
        for a, b in zip(branches, loaded):
            np.testing.assert_array_equal(a.weight, b.weight)
            assert a.dilation == b.dilation
            np.testing.assert_array_equal(a.bn.mean, b.bn.mean)
            np.testing.assert_array_equal(a.bn.std, b.bn.std)
            np.testing.assert_array_equal(a.bn.gamma, b.bn.gamma)
            np.testing.assert_array_equal(a.bn.beta, b.bn.beta)

    def test_merged_round_trip(self, tmp_path):
        branches = random_branch_set(12, c_in=2, c_out=2, target=(5, 5, 1))
        merged = merge_branches(branches, (5, 5, 1))
        save_merged(tmp_path, merged)
        loaded = load_merged(tmp_path)
        np.testing.assert_array_equal(loaded.weight, merged.weight)
        np.testing.assert_array_equal(loaded.bias, merged.bias)

    def test_loaded_set_still_equivalent(self, tmp_path):
        branches = random_branch_set(13, c_in=3, c_out=3, target=(7, 7, 1))
        save_branch_set(tmp_path, branches)
        loaded, _ = load_branch_set(tmp_path)
        merged = merge_branches(loaded, (7, 7, 1))
        rng = np.random.default_rng(14)
        x = rng.uniform(-1, 1, (3, 8, 8, 2)).astype(np.float32)
        diff = np.abs(forward_train(x, loaded) - forward_deploy(x, merged))
        assert float(diff.max()) <= 1e-4


class TestValidation:
    def test_branch_rejects_bad_dilation(self):
        w = np.zeros((1, 1, 3, 3, 1), dtype=np.float32)
        with pytest.raises(ValueError, match="dilation"):
            ConvBranchSpec(w, (0, 1, 1), BatchNormParams.identity(1))

    def test_branch_rejects_channel_mismatch(self):
        w = np.zeros((2, 1, 3, 3, 1), dtype=np.float32)
        with pytest.raises(ValueError, match="channels"):
            ConvBranchSpec(w, (1, 1, 1), BatchNormParams.identity(3))

    def test_merged_rejects_bias_shape(self):
        with pytest.raises(ValueError, match="bias"):
            MergedKernel(np.zeros((2, 2, 3, 3, 1)), np.zeros(3))

    def test_empty_branch_list(self):
        with pytest.raises(ValueError, match="at least one"):
            merge_branches([], (3, 3, 1))
        with pytest.raises(ValueError, match="at least one"):
            forward_train(np.zeros((1, 2, 2, 2)), [])
