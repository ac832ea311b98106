"""Power, uniform and logarithmic quantizers and the weight reconstruction error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, ValidationError
from .tensor import Tensor

A_MAX = 4.0


def signed_full_scale(bits: int) -> int:
    check_bits(bits)
    return 2 ** (bits - 1) - 1


def unsigned_full_scale(bits: int) -> int:
    check_bits(bits)
    return 2**bits - 1


def check_bits(bits: int) -> None:
    if not isinstance(bits, (int, np.integer)) or not 2 <= bits <= 16:
        raise ValidationError("bits", f"bit width must be an integer in [2, 16], got {bits!r}")


def check_exponent(a: float) -> float:
    a = float(a)
    if not 0.0 < a <= A_MAX:
        raise DomainError(f"exponent a={a!r} outside (0, {A_MAX}]")
    return a


def round_half_away(x):
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def signed_power(x, a: float):
    """sign(x) * |x|**a, elementwise."""
    return np.copysign(np.abs(x) ** a, x)


def continuous_power(x: float, a: float) -> float:
    if not x > 0:
        raise DomainError(f"power map is defined on positive reals, got {x!r}")
    return float(x) ** check_exponent(a)


@dataclass(frozen=True)
class Scheme:
    kind: str  # uniform | power | log
    a: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "power", "log"):
            raise ValidationError("scheme", f"unknown scheme {self.kind!r}")
        if self.kind == "power":
            object.__setattr__(self, "a", check_exponent(self.a))
        elif self.a != 1.0:
            raise ValidationError("scheme", f"{self.kind} scheme takes no exponent")

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def power(cls, a: float):
        return cls("power", a)

    @classmethod
    def log(cls):
        return cls("log")

    @property
    def exponent(self) -> float:
        return self.a if self.kind == "power" else 1.0


@dataclass(frozen=True)
class Granularity:
    """One scale per tensor (``axis is None``) or one per index of ``axis``."""

    axis: Optional[int] = None

    @classmethod
    def per_tensor(cls):
        return cls(None)

    @classmethod
    def per_channel(cls, axis: int = 0):
        return cls(axis)

    @property
    def name(self) -> str:
        return "per-tensor" if self.axis is None else "per-channel"


PER_TENSOR = Granularity.per_tensor()
PER_CHANNEL = Granularity.per_channel(0)


@dataclass
class QuantizedTensor:
    codes: np.ndarray  # int8 when bits <= 8, else int32
    scales: np.ndarray  # one per group; for log, the group max magnitude
    scheme: Scheme
    bits: int
    signed: bool = True
    axis: Optional[int] = None

    @property
    def shape(self):
        return self.codes.shape

    def broadcast_scales(self) -> np.ndarray:
        return _expand(self.scales, self.codes.ndim, self.axis)


def code_dtype(bits: int):
    return np.int8 if bits <= 8 else np.int32


def _group_max(x: np.ndarray, axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return np.array([np.max(np.abs(x))])
    if not 0 <= axis < x.ndim:
        raise ValidationError("axis", f"axis {axis} out of range for rank {x.ndim}")
    other = tuple(i for i in range(x.ndim) if i != axis)
    return np.max(np.abs(x), axis=other) if other else np.abs(x)


def _expand(per_group: np.ndarray, ndim: int, axis: Optional[int]) -> np.ndarray:
    if axis is None:
        return per_group.reshape((1,) * ndim)
    shape = [1] * ndim
    shape[axis] = -1
    return per_group.reshape(shape)


def quantize_tensor(w, scheme: Scheme, bits: int, gran: Granularity = PER_TENSOR) -> QuantizedTensor:
    """Signed symmetric quantization of a weight tensor.

    uniform/power: powered values sign(w)|w|^a are scaled so each group's
    largest magnitude lands on the full-scale code 2^(b-1)-1, then rounded.
    log: codes carry sign and a reflected exponent, |code| = B - round(log2(max/|w|)).
    All-zero groups get scale 1 and code 0.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise DomainError("cannot quantize an empty tensor")
    full = signed_full_scale(bits)
    if scheme.kind == "log":
        gmax = _group_max(w, gran.axis)
        scales = np.where(gmax > 0, gmax, 1.0)
        m = _expand(scales, w.ndim, gran.axis)
        mag = np.abs(w)
        with np.errstate(divide="ignore"):
            e = np.clip(round_half_away(np.log2(m / np.where(mag > 0, mag, 1.0))), 0, full)
        codes = np.where(mag > 0, np.sign(w) * (full - e), 0.0)
        codes = np.where(_expand(gmax, w.ndim, gran.axis) > 0, codes, 0.0)
        return QuantizedTensor(codes.astype(code_dtype(bits)), scales, scheme, bits, True, gran.axis)
    a = scheme.exponent
    powered = signed_power(w, a)
    pmax = _group_max(powered, gran.axis)
    scales = np.where(pmax > 0, pmax / full, 1.0)
    codes = np.clip(round_half_away(powered / _expand(scales, w.ndim, gran.axis)), -full, full)
    return QuantizedTensor(codes.astype(code_dtype(bits)), scales, scheme, bits, True, gran.axis)


def dequantize_tensor(q: QuantizedTensor) -> Tensor:
    codes = q.codes.astype(np.float64)
    s = q.broadcast_scales()
    if q.scheme.kind == "log":
        full = signed_full_scale(q.bits)
        out = np.sign(codes) * s * np.exp2(np.abs(codes) - full)
        return np.where(codes == 0, 0.0, out)
    return signed_power(codes * s, 1.0 / q.scheme.exponent)


def quantize_unsigned(x, a: float, bits: int, value_range: float) -> QuantizedTensor:
    """Unsigned activation quantization with a fixed range: codes = round(x^a / s), s = range^a / (2^b - 1)."""
    x = np.asarray(x, dtype=np.float64)
    a = check_exponent(a)
    if not value_range > 0:
        raise DomainError(f"activation range must be positive, got {value_range!r}")
    if np.any(x < 0):
        idx = tuple(int(i) for i in np.argwhere(x < 0)[0])
        raise DomainError(f"negative activation {x[idx]!r} at index {idx}")
    full = unsigned_full_scale(bits)
    s = value_range**a / full
    codes = np.clip(round_half_away(x**a / s), 0, full)
    return QuantizedTensor(codes.astype(np.int32), np.array([s]), Scheme.power(a), bits, False, None)


def quantize_signed_fixed(x, a: float, bits: int, value_range: float) -> QuantizedTensor:
    """Signed power quantization against a fixed range (used for signed layer inputs)."""
    x = np.asarray(x, dtype=np.float64)
    a = check_exponent(a)
    if not value_range > 0:
        raise DomainError(f"activation range must be positive, got {value_range!r}")
    full = signed_full_scale(bits)
    s = value_range**a / full
    codes = np.clip(round_half_away(signed_power(x, a) / s), -full, full)
    return QuantizedTensor(codes.astype(np.int32), np.array([s]), Scheme.power(a), bits, True, None)


def layer_error(w, scheme: Scheme, bits: int, gran: Granularity = PER_CHANNEL, p: int = 2) -> float:
    """|| w - dequantize(quantize(w)) ||_p over the flattened tensor."""
    if p not in (1, 2):
        raise ValidationError("p", f"norm must be 1 or 2, got {p!r}")
    w = np.asarray(w, dtype=np.float64)
    return norm_p(w - dequantize_tensor(quantize_tensor(w, scheme, bits, gran)), p)


def norm_p(diff, p: int = 2) -> float:
    """L1 or L2 norm of a tensor, flattened."""
    diff = np.asarray(diff, dtype=np.float64).ravel()
    if p == 1:
        return float(np.sum(np.abs(diff)))
    return float(math.sqrt(np.dot(diff, diff)))


def weight_list(model_or_weights) -> list:
    """Weight tensors of a model, or the list itself if one was given."""
    if hasattr(model_or_weights, "weights") and callable(model_or_weights.weights):
        return model_or_weights.weights()
    if isinstance(model_or_weights, np.ndarray):
        return [model_or_weights]
    return list(model_or_weights)


def reconstruction_error(model, scheme: Scheme, bits: int, gran: Granularity = PER_CHANNEL, p: int = 2) -> float:
    """Sum over weight layers of the per-layer reconstruction norm."""
    return sum(layer_errors(model, scheme, bits, gran, p))


def layer_errors(model, scheme: Scheme, bits: int, gran: Granularity = PER_CHANNEL, p: int = 2) -> list:
    return [layer_error(w, scheme, bits, _fit_axis(gran, w), p) for w in weight_list(model)]


def _fit_axis(gran: Granularity, w: np.ndarray) -> Granularity:
    # per-channel on a 1-d weight vector degenerates to per-element; keep it per-tensor
    if gran.axis is not None and np.ndim(w) < 2:
        return PER_TENSOR
    return gran
