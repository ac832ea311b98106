"""Dense float64 tensor helpers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The functions here add the shape checks and finiteness guarantees the
rest of the package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError

Tensor = np.ndarray


def tensor(values, shape: Optional[Sequence[int]] = None) -> Tensor:
    """Build a float64 row-major tensor, optionally reshaping flat ``values``."""
    t = np.array(values, dtype=np.float64, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise DimensionError(f"negative extent in shape {shape}")
        if t.size != math.prod(shape):
            raise DimensionError(f"{t.size} values do not fill shape {shape}")
        t = t.reshape(shape)
    _check_finite(t)
    return t


def _check_finite(t: Tensor) -> None:
    bad = ~np.isfinite(t)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericError(f"non-finite value {t[idx]!r} at index {idx}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """(before, after) padding so the output extent is ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-d cross-correlation (no kernel flip).

    ``x`` is C_in x H x W, or N x C_in x H x W for a batch; ``kernel`` is
    C_out x C_in x kh x kw.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d shapes {x.shape[1:]} / {kernel.shape} not supported")
    if stride < 1:
        raise DimensionError(f"stride must be positive, got {stride}")
    n, c_in, h, w = x.shape
    c_out, k_in, kh, kw = kernel.shape
    if k_in != c_in:
        raise DimensionError(f"kernel expects {k_in} input channels, input has {c_in}")
    if padding == "same":
        ph, pw = same_padding(h, kh, stride), same_padding(w, kw, stride)
        x = np.pad(x, ((0, 0), (0, 0), ph, pw))
    elif padding != "valid":
        raise DimensionError(f"unknown padding {padding!r}")
    hp, wp = x.shape[2], x.shape[3]
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
            out += np.einsum("nchw,oc->nohw", patch, kernel[:, :, i, j])
    return out[0] if single else out


def map_values(t: Tensor, f: Callable[[float], float]) -> Tensor:
    """Apply a scalar function elementwise; numpy ufuncs are applied directly."""
    t = np.asarray(t, dtype=np.float64)
    if isinstance(f, np.ufunc):
        out = f(t)
    else:
        out = np.array([f(float(v)) for v in t.ravel()], dtype=np.float64).reshape(t.shape)
    bad = ~np.isfinite(out)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericError(f"function produced {out[idx]!r} at index {idx}")
    return np.asarray(out, dtype=np.float64)


def abs_max(t: Tensor, axis: Optional[int] = None) -> Tensor:
    """Max magnitude over the whole tensor, or one value per index of ``axis``."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise DomainError("abs_max of an empty tensor")
    if axis is None:
        return np.array(np.max(np.abs(t)))
    if not 0 <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {t.ndim}")
    other = tuple(i for i in range(t.ndim) if i != axis)
    return np.max(np.abs(t), axis=other) if other else np.abs(t)


@dataclass(frozen=True)
class Moments:
    mean: float
    std: float
    # None when the variance is zero
    skewness: Optional[float]
    kurtosis: Optional[float]


def moments(t: Tensor) -> Moments:
    """Population moments; kurtosis is the plain (non-excess) fourth moment ratio."""
    x = np.asarray(t, dtype=np.float64).ravel()
    if x.size < 2:
        raise DomainError("moments need at least two elements")
    mu = float(x.mean())
    d = x - mu
    var = float(np.mean(d * d))
    std = math.sqrt(var)
    if std == 0.0:
        return Moments(mu, 0.0, None, None)
    skew = float(np.mean(d**3)) / std**3
    kurt = float(np.mean(d**4)) / var**2
    return Moments(mu, std, skew, kurt)
