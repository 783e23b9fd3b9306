"""Dense tensor primitives: reference convolutions, zero-insertion transpose
convolution, softmax, and exact 2x transpose-conv upsampling.

All operations are pure functions on numpy arrays in channel-first, row-major
layout. Float tensors are float32 by default; float64 is supported everywhere
for high-precision oracle runs. Every operation is deterministic for fixed
inputs (single-threaded accumulation order, no unordered reductions).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from math import prod, sqrt

import numpy as np

F32 = np.dtype(np.float32)
F64 = np.dtype(np.float64)
FLOAT_DTYPES = (F32, F64)


def _check_float_dtype(arr: np.ndarray, name: str) -> None:
    if arr.dtype not in FLOAT_DTYPES:
        raise ValueError(f"{name} must be float32 or float64, got {arr.dtype}")


def assert_finite(arr: np.ndarray, what: str = "tensor") -> None:
    """Raise if the array contains NaN or Inf."""
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")


def _as_axes(value, rank: int, name: str) -> tuple[int, ...]:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * rank
    out = tuple(int(v) for v in value)
    if len(out) != rank:
        raise ValueError(f"{name} must have {rank} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a direct convolution: kernel extents plus per-axis
    dilation, stride, and symmetric zero padding.

    Effective extent per axis is (k-1)*dilation + 1.
    """

    kernel: tuple[int, ...]
    dilation: tuple[int, ...] = ()
    stride: tuple[int, ...] = ()
    padding: tuple[int, ...] = ()

    def __post_init__(self):
        rank = len(self.kernel)
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(
            self, "dilation", _as_axes(self.dilation or 1, rank, "dilation")
        )
        object.__setattr__(self, "stride", _as_axes(self.stride or 1, rank, "stride"))
        object.__setattr__(
            self, "padding", _as_axes(self.padding or 0, rank, "padding")
        )
        if any(k < 1 for k in self.kernel):
            raise ValueError(f"kernel extents must be >= 1, got {self.kernel}")
        if any(d < 1 for d in self.dilation):
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if any(s < 1 for s in self.stride):
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def rank(self) -> int:
        return len(self.kernel)

    @property
    def effective(self) -> tuple[int, ...]:
        """Extent each kernel axis covers once dilation spreads its taps."""
        return tuple((k - 1) * d + 1 for k, d in zip(self.kernel, self.dilation))

    @classmethod
    def same(cls, kernel, dilation=1) -> "ConvSpec":
        """Stride-1 spec with centered padding so output extents equal input.

        Requires odd effective extents; even ones have no center.
        """
        kernel = tuple(int(k) for k in kernel)
        spec = cls(kernel=kernel, dilation=_as_axes(dilation, len(kernel), "dilation"))
        eff = spec.effective
        if any(e % 2 == 0 for e in eff):
            raise ValueError(f"centered padding needs odd effective extents, got {eff}")
        return cls(
            kernel=kernel,
            dilation=spec.dilation,
            stride=(1,) * len(kernel),
            padding=tuple((e - 1) // 2 for e in eff),
        )

    def output_extents(self, spatial: tuple[int, ...]) -> tuple[int, ...]:
        eff = self.effective
        out = tuple(
            (spatial[a] + 2 * self.padding[a] - eff[a]) // self.stride[a] + 1
            for a in range(self.rank)
        )
        if any(o < 1 for o in out):
            raise ValueError(
                f"kernel {self.kernel} (dilation {self.dilation}) does not fit "
                f"input extents {spatial} with padding {self.padding}"
            )
        return out


def _conv_nd(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, spec: ConvSpec
) -> np.ndarray:
    """Direct cross-correlation over the trailing spatial axes of ``x``.

    x: (C_in, *spatial); weight: (C_out, C_in, *kernel). No kernel flip,
    zero padding. Accumulates one GEMM per kernel tap so arbitrary dilation
    and stride reduce to shifted slices of the padded input.
    """
    rank = spec.rank
    if x.ndim != rank + 1:
        raise ValueError(f"input must have rank {rank + 1}, got {x.ndim}")
    if weight.ndim != rank + 2:
        raise ValueError(f"weight must have rank {rank + 2}, got {weight.ndim}")
    _check_float_dtype(x, "input")
    if weight.dtype != x.dtype:
        raise ValueError(f"weight dtype {weight.dtype} != input dtype {x.dtype}")
    c_out, c_in = weight.shape[:2]
    if c_in != x.shape[0]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, weight expects {c_in}"
        )
    if tuple(weight.shape[2:]) != spec.kernel:
        raise ValueError(
            f"weight extents {weight.shape[2:]} != spec kernel {spec.kernel}"
        )
    if bias is not None:
        if bias.shape != (c_out,):
            raise ValueError(f"bias must have shape ({c_out},), got {bias.shape}")
        if bias.dtype != x.dtype:
            raise ValueError(f"bias dtype {bias.dtype} != input dtype {x.dtype}")

    spatial = tuple(x.shape[1:])
    out_sp = spec.output_extents(spatial)
    n_out = prod(out_sp)

    pad = [(0, 0)] + [(p, p) for p in spec.padding]
    xp = np.pad(x, pad) if any(spec.padding) else x

    w2 = np.ascontiguousarray(weight.reshape(c_out, c_in, -1))
    acc = np.zeros((c_out, n_out), dtype=x.dtype)
    patch = np.empty((c_in, n_out), dtype=x.dtype)
    tmp = np.empty((c_out, n_out), dtype=x.dtype)
    patch_nd = patch.reshape((c_in,) + out_sp)

    for tap_idx, tap in enumerate(np.ndindex(*spec.kernel)):
        sl = tuple(
            slice(
                tap[a] * spec.dilation[a],
                tap[a] * spec.dilation[a] + spec.stride[a] * (out_sp[a] - 1) + 1,
                spec.stride[a],
            )
            for a in range(rank)
        )
        np.copyto(patch_nd, xp[(slice(None),) + sl])
        np.matmul(w2[:, :, tap_idx], patch, out=tmp)
        acc += tmp

    if bias is not None:
        acc += bias[:, None]
    return acc.reshape((c_out,) + out_sp)


def conv3d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    spec: ConvSpec | None = None,
) -> np.ndarray:
    """3D cross-correlation of (C_in, X, Y, Z) with (C_out, C_in, kx, ky, kz)."""
    if weight.ndim != 5:
        raise ValueError(f"conv3d weight must be 5D, got {weight.ndim}D")
    if spec is None:
        spec = ConvSpec(kernel=tuple(weight.shape[2:]))
    if spec.rank != 3:
        raise ValueError("conv3d needs a rank-3 ConvSpec")
    return _conv_nd(x, weight, bias, spec)


def conv2d(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray | None = None,
    spec: ConvSpec | None = None,
) -> np.ndarray:
    """2D cross-correlation of (C_in, H, W) with (C_out, C_in, kh, kw)."""
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4D, got {weight.ndim}D")
    if spec is None:
        spec = ConvSpec(kernel=tuple(weight.shape[2:]))
    if spec.rank != 2:
        raise ValueError("conv2d needs a rank-2 ConvSpec")
    return _conv_nd(x, weight, bias, spec)


def conv_transpose3d(
    weight: np.ndarray, kernel: np.ndarray, stride: tuple[int, int, int]
) -> np.ndarray:
    """Transpose convolution of ``weight`` with a 1x1x1 kernel: pure
    zero-insertion over the trailing three axes.

    Entry [i, j, k] lands at [i*sx, j*sy, k*sz]; output extent per axis is
    (n-1)*s + 1. Leading (channel) axes pass through untouched.
    """
    if kernel.shape != (1, 1, 1):
        raise ValueError(f"kernel must have shape (1, 1, 1), got {kernel.shape}")
    if weight.ndim < 3:
        raise ValueError("weight needs at least 3 trailing spatial axes")
    stride = _as_axes(stride, 3, "stride")
    if any(s < 1 for s in stride):
        raise ValueError(f"stride must be >= 1, got {stride}")
    lead = weight.shape[:-3]
    sp = weight.shape[-3:]
    out_sp = tuple((n - 1) * s + 1 for n, s in zip(sp, stride))
    out = np.zeros(lead + out_sp, dtype=weight.dtype)
    out[..., :: stride[0], :: stride[1], :: stride[2]] = weight * kernel.reshape(())
    return out


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    """Numerically stable softmax along one axis; output sums to 1 there."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _upsample2x(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None, rank: int):
    if x.ndim != rank + 1:
        raise ValueError(f"input must have rank {rank + 1}, got {x.ndim}")
    if weight.ndim != rank + 2:
        raise ValueError(f"weight must have rank {rank + 2}, got {weight.ndim}")
    if weight.shape[0] != x.shape[0]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]}, weight expects {weight.shape[0]}"
        )
    if tuple(weight.shape[2:]) != (2,) * rank:
        raise ValueError(f"kernel extents must all be 2, got {weight.shape[2:]}")
    if weight.dtype != x.dtype:
        raise ValueError(f"weight dtype {weight.dtype} != input dtype {x.dtype}")
    c_out = weight.shape[1]
    # Stride equals kernel, so output blocks never overlap: each input cell
    # expands into an independent 2^rank block. Contract over C_in with a
    # single GEMM, then interleave the per-cell blocks.
    sp = x.shape[1:]
    w2 = weight.reshape(weight.shape[0], -1)  # (C_in, C_out * 2^rank)
    y = np.matmul(w2.T, x.reshape(x.shape[0], -1))  # (C_out*2^rank, prod(sp))
    if rank == 3:
        y = y.reshape((c_out, 2, 2, 2) + sp)
        y = y.transpose(0, 4, 1, 5, 2, 6, 3)
    else:
        y = y.reshape((c_out, 2, 2) + sp)
        y = y.transpose(0, 3, 1, 4, 2)
    out_sp = tuple(2 * n for n in sp)
    y = np.ascontiguousarray(y).reshape((c_out,) + out_sp)
    if bias is not None:
        y += bias.reshape((c_out,) + (1,) * rank)
    return y.astype(x.dtype, copy=False)


def upsample2x_transpose3d(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None
) -> np.ndarray:
    """Stride-2, kernel-2 transpose 3D convolution: doubles every spatial
    extent exactly. weight layout (C_in, C_out, 2, 2, 2)."""
    return _upsample2x(x, weight, bias, 3)


def upsample2x_transpose2d(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None
) -> np.ndarray:
    """2D analogue of :func:`upsample2x_transpose3d`; weight (C_in, C_out, 2, 2)."""
    return _upsample2x(x, weight, bias, 2)


def rng_named(seed: int, name: str) -> np.random.Generator:
    """Generator derived from a master seed and a label.

    The label is hashed so independent weight tensors get decorrelated
    streams that are stable across runs and platforms.
    """
    tag = int.from_bytes(
        hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little"
    )
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def uniform_init(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=F32
) -> np.ndarray:
    """Uniform weights in +-1/sqrt(fan_in), the usual conv init range."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
