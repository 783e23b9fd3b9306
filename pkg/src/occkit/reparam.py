"""Large-kernel 3D convolution re-parameterization.

A train-form block is a set of parallel branches, each a (possibly dilated)
small-kernel 3D convolution followed by an inference-mode batch norm. The
deploy form is a single large-kernel convolution with a bias. Merging is
exact: dilation becomes zero-insertion, batch norm folds into a per-channel
scale and shift, and the sparse kernels are zero-padded to the target extents
and summed. ``forward_train`` and ``forward_deploy`` agree elementwise up to
floating-point rounding.

All branches and the merged kernel use centered "same" padding, so every
forward preserves spatial extents.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gsdt
from .tensor import ConvSpec, conv3d, conv_transpose3d, rng_named, uniform_init


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-mode batch norm: accumulated mean/std plus learned affine.

    ``std`` is the standard deviation (eps already folded in), strictly
    positive per channel.
    """

    mean: np.ndarray
    std: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        c = self.mean.shape
        for name in ("std", "gamma", "beta"):
            if getattr(self, name).shape != c:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {c}")
        if self.mean.ndim != 1:
            raise ValueError("batch norm parameters must be per-channel vectors")
        if not (self.std > 0).all():
            raise ValueError("std must be strictly positive for every channel")

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(
            mean=np.zeros(channels, dtype=dtype),
            std=np.ones(channels, dtype=dtype),
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
        )

    def astype(self, dtype) -> "BatchNormParams":
        return BatchNormParams(
            self.mean.astype(dtype),
            self.std.astype(dtype),
            self.gamma.astype(dtype),
            self.beta.astype(dtype),
        )


@dataclass(frozen=True)
class ConvBranchSpec:
    """One parallel branch: conv weight (C_out, C_in, kx, ky, kz), per-axis
    dilation, and the batch norm that follows the convolution."""

    weight: np.ndarray
    dilation: tuple[int, int, int]
    bn: BatchNormParams

    def __post_init__(self):
        if self.weight.ndim != 5:
            raise ValueError(f"branch weight must be 5D, got {self.weight.ndim}D")
        object.__setattr__(self, "dilation", tuple(int(d) for d in self.dilation))
        if len(self.dilation) != 3 or any(d < 1 for d in self.dilation):
            raise ValueError(f"dilation must be 3 entries >= 1, got {self.dilation}")
        if self.bn.mean.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"batch norm has {self.bn.mean.shape[0]} channels, "
                f"branch outputs {self.weight.shape[0]}"
            )

    @property
    def kernel(self) -> tuple[int, int, int]:
        return tuple(self.weight.shape[2:])

    @property
    def effective(self) -> tuple[int, int, int]:
        return tuple((k - 1) * d + 1 for k, d in zip(self.kernel, self.dilation))

    def astype(self, dtype) -> "ConvBranchSpec":
        return ConvBranchSpec(
            self.weight.astype(dtype), self.dilation, self.bn.astype(dtype)
        )


@dataclass(frozen=True)
class MergedKernel:
    """Deploy form: one large kernel (C_out, C_in, K_X, K_Y, K_Z) plus bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 5:
            raise ValueError(f"merged weight must be 5D, got {self.weight.ndim}D")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} != ({self.weight.shape[0]},)"
            )

    @property
    def extents(self) -> tuple[int, int, int]:
        return tuple(self.weight.shape[2:])

    def astype(self, dtype) -> "MergedKernel":
        return MergedKernel(self.weight.astype(dtype), self.bias.astype(dtype))


_IDENTITY_1x1x1 = np.ones((1, 1, 1))


def dilate_to_sparse(weight: np.ndarray, dilation: tuple[int, int, int]) -> np.ndarray:
    """Expand a dilated kernel into its non-dilated sparse equivalent by
    inserting (r - 1) zeros between taps per axis."""
    ident = _IDENTITY_1x1x1.astype(weight.dtype)
    return conv_transpose3d(weight, ident, dilation)


def fuse_bn(weight: np.ndarray, bn: BatchNormParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold batch norm into the convolution: scale the kernel per output
    channel by gamma/std and return the matching bias."""
    scale = bn.gamma / bn.std
    fused_w = weight * scale[:, None, None, None, None]
    fused_b = bn.beta - bn.mean * scale
    return fused_w, fused_b


def _check_fit(eff: tuple[int, ...], target: tuple[int, ...]) -> None:
    for axis, (e, t) in enumerate(zip(eff, target)):
        if e > t:
            raise ValueError(
                f"branch effective extent {eff} exceeds target {target} on axis {axis}"
            )
        if (t - e) % 2 != 0:
            raise ValueError(
                f"parity mismatch on axis {axis}: effective extent {e} cannot be "
                f"centered inside target extent {t}"
            )


def merge_branches(
    branches: list[ConvBranchSpec], target_extents: tuple[int, int, int]
) -> MergedKernel:
    """Collapse parallel conv+BN branches into one large-kernel conv.

    Each branch kernel is dilated to sparse form, BN-folded, zero-padded
    centered to ``target_extents``, and summed; biases sum directly.
    """
    if not branches:
        raise ValueError("need at least one branch")
    target = tuple(int(t) for t in target_extents)
    if len(target) != 3 or any(t < 1 for t in target):
        raise ValueError(f"target extents must be 3 entries >= 1, got {target}")
    c_out, c_in = branches[0].weight.shape[:2]
    dtype = branches[0].weight.dtype

    weight = np.zeros((c_out, c_in) + target, dtype=dtype)
    bias = np.zeros(c_out, dtype=dtype)
    for branch in branches:
        if branch.weight.shape[:2] != (c_out, c_in):
            raise ValueError("branches disagree on channel counts")
        if branch.weight.dtype != dtype:
            raise ValueError("branches disagree on dtype")
        _check_fit(branch.effective, target)
        sparse = dilate_to_sparse(branch.weight, branch.dilation)
        fused_w, fused_b = fuse_bn(sparse, branch.bn)
        off = tuple((t - e) // 2 for t, e in zip(target, branch.effective))
        region = (slice(None), slice(None)) + tuple(
            slice(o, o + e) for o, e in zip(off, branch.effective)
        )
        weight[region] += fused_w
        bias += fused_b
    return MergedKernel(weight=weight, bias=bias)


def _same_conv3d(
    x: np.ndarray,
    weight: np.ndarray,
    dilation: tuple[int, int, int],
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Conv3d with centered zero padding so output extents equal input's.

    Pads floor((eff-1)/2) low / remainder high per axis, which keeps the
    branch and merged forwards aligned for any agreeing parity.
    """
    eff = tuple((k - 1) * d + 1 for k, d in zip(weight.shape[2:], dilation))
    lo = tuple((e - 1) // 2 for e in eff)
    hi = tuple(e - 1 - l for e, l in zip(eff, lo))
    xp = np.pad(x, [(0, 0)] + list(zip(lo, hi)))
    spec = ConvSpec(kernel=tuple(weight.shape[2:]), dilation=dilation)
    return conv3d(xp, weight, bias, spec)


def apply_bn(y: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    """Inference-mode batch norm over channel-first voxel features."""
    scale = (bn.gamma / bn.std).reshape(-1, 1, 1, 1)
    shift = (bn.beta - bn.mean * bn.gamma / bn.std).reshape(-1, 1, 1, 1)
    return y * scale + shift


def forward_train(x: np.ndarray, branches: list[ConvBranchSpec]) -> np.ndarray:
    """Train-form forward: sum of per-branch conv3d + batch norm outputs."""
    if not branches:
        raise ValueError("need at least one branch")
    out = None
    for branch in branches:
        y = apply_bn(_same_conv3d(x, branch.weight, branch.dilation), branch.bn)
        out = y if out is None else out + y
    return out


def forward_deploy(x: np.ndarray, merged: MergedKernel) -> np.ndarray:
    """Deploy-form forward: one large-kernel conv3d with centered padding."""
    return _same_conv3d(x, merged.weight, (1, 1, 1), bias=merged.bias)


def default_branch_extents(
    target: tuple[int, int, int],
) -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    """Default branch layout for a target kernel: the full-size non-dilated
    kernel plus dilated 5-tap (r=2) and 3-tap (r=3) branches, clipped per
    axis so effective extents fit inside the target with matching parity.
    """

    def clip(k: int, r: int, extent: int) -> tuple[int, int]:
        if extent == 1:
            return 1, 1
        for kk in range(k, 0, -1):
            eff = (kk - 1) * r + 1
            if eff <= extent and (extent - eff) % 2 == 0:
                return kk, r
        return 1, 1

    target = tuple(int(t) for t in target)
    layouts = [(target, (1, 1, 1))]
    for k, r in ((5, 2), (3, 3)):
        kernel, dilation = zip(*(clip(k, r, t) for t in target))
        cand = (tuple(kernel), tuple(dilation))
        if cand not in layouts:
            layouts.append(cand)
    return layouts


def random_branch_set(
    seed: int,
    c_in: int,
    c_out: int,
    target: tuple[int, int, int],
    extents: list[tuple[tuple[int, int, int], tuple[int, int, int]]] | None = None,
    dtype=np.float32,
) -> list[ConvBranchSpec]:
    """Seeded branch set over the default (or given) layouts, with random
    batch norm statistics. Reproducible per (seed, layout)."""
    if extents is None:
        extents = default_branch_extents(target)
    branches = []
    for i, (kernel, dilation) in enumerate(extents):
        rng = rng_named(seed, f"reparam/branch{i}")
        fan_in = c_in * int(np.prod(kernel))
        weight = uniform_init(rng, (c_out, c_in) + tuple(kernel), fan_in, dtype)
        bn = BatchNormParams(
            mean=rng.normal(0.0, 0.3, c_out).astype(dtype),
            std=rng.uniform(0.5, 1.5, c_out).astype(dtype),
            gamma=(
                rng.uniform(0.3, 1.5, c_out) * rng.choice([-1.0, 1.0], c_out)
            ).astype(dtype),
            beta=rng.normal(0.0, 0.3, c_out).astype(dtype),
        )
        branches.append(ConvBranchSpec(weight=weight, dilation=tuple(dilation), bn=bn))
    return branches


def _fmt_vec(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_vec(text: str, dtype) -> np.ndarray:
    return np.array([float(v) for v in text.split()], dtype=dtype)


def save_branch_set(
    directory: str | Path,
    branches: list[ConvBranchSpec],
    target: tuple[int, int, int] | None = None,
) -> None:
    """Write branch weights as GSDT tensors plus a key=value manifest with
    dilations and batch norm parameters."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"count = {len(branches)}"]
    if target is not None:
        lines.append("target = " + " ".join(str(t) for t in target))
    for i, branch in enumerate(branches):
        gsdt.write(directory / f"branch{i}.gsdt", branch.weight)
        lines.append(f"branch{i}.dilation = " + " ".join(map(str, branch.dilation)))
        lines.append(f"branch{i}.mean = " + _fmt_vec(branch.bn.mean))
        lines.append(f"branch{i}.std = " + _fmt_vec(branch.bn.std))
        lines.append(f"branch{i}.gamma = " + _fmt_vec(branch.bn.gamma))
        lines.append(f"branch{i}.beta = " + _fmt_vec(branch.bn.beta))
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_manifest(path: Path) -> dict[str, str]:
    entries = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_branch_set(
    directory: str | Path,
) -> tuple[list[ConvBranchSpec], tuple[int, int, int] | None]:
    directory = Path(directory)
    entries = _read_manifest(directory / "manifest.txt")
    count = int(entries["count"])
    target = None
    if "target" in entries:
        target = tuple(int(v) for v in entries["target"].split())
    branches = []
    for i in range(count):
        weight = gsdt.read(directory / f"branch{i}.gsdt")
        dtype = weight.dtype
        branches.append(
            ConvBranchSpec(
                weight=weight,
                dilation=tuple(int(v) for v in entries[f"branch{i}.dilation"].split()),
                bn=BatchNormParams(
                    mean=_parse_vec(entries[f"branch{i}.mean"], dtype),
                    std=_parse_vec(entries[f"branch{i}.std"], dtype),
                    gamma=_parse_vec(entries[f"branch{i}.gamma"], dtype),
                    beta=_parse_vec(entries[f"branch{i}.beta"], dtype),
                ),
            )
        )
    return branches, target


def save_merged(directory: str | Path, merged: MergedKernel) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gsdt.write(directory / "weight.gsdt", merged.weight)
    gsdt.write(directory / "bias.gsdt", merged.bias)
    (directory / "manifest.txt").write_text(
        "extents = " + " ".join(map(str, merged.extents)) + "\n"
    )


def load_merged(directory: str | Path) -> MergedKernel:
    directory = Path(directory)
    return MergedKernel(
        weight=gsdt.read(directory / "weight.gsdt"),
        bias=gsdt.read(directory / "bias.gsdt"),
    )
