"""Whole-model quantization and simulated quantized inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .errors import DimensionError, StructureError, ValidationError
from .fit import fit_exponent, fit_per_layer
from .fixtures import Dataset
from .model import (
    Conv2d,
    Dense,
    Model,
    activate,
    as_batch,
    fold_batchnorm,
    input_activations,
    input_stats,
    weight_layer_inputs,
)
from .quant import (
    PER_CHANNEL,
    Granularity,
    QuantizedTensor,
    Scheme,
    dequantize_tensor,
    quantize_signed_fixed,
    quantize_tensor,
    quantize_unsigned,
    signed_full_scale,
    signed_power,
    unsigned_full_scale,
)

LOWER_BOUNDS = {"relu": 0.0, "identity": 0.0, "silu": 0.27846, "gelu": 0.169971}
MIN_RANGE = 1e-6
ACCUMULATION_MODES = ("pre", "post")


def activation_lower_bound(kind: str) -> float:
    """Magnitude of the most negative value the activation can output."""
    try:
        return LOWER_BOUNDS[kind]
    except KeyError:
        raise ValidationError("activation", f"unknown activation {kind!r}") from None


@dataclass(frozen=True)
class ActRangePolicy:
    kind: str = "bn_stats"  # bn_stats | dynamic
    n_sigma: float = 3.0

    def __post_init__(self):
        if self.kind not in ("bn_stats", "dynamic"):
            raise ValidationError("act_policy", f"expected bn_stats or dynamic, got {self.kind!r}")


@dataclass(frozen=True)
class ActInfo:
    """How the input of one weight layer is quantized."""

    value_range: float
    scale: float
    signed: bool
    offset: float  # zero-point constant added before unsigned quantization
    mean: np.ndarray  # expected input, per channel (conv) or per feature (dense)
    source: str  # bn_stats | dynamic


def _gaussian_mean_after(kind: str, beta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """E[act(z)] for z ~ N(beta, gamma^2), per channel."""
    gamma = np.abs(gamma)
    if kind == "identity":
        return beta.copy()
    if kind == "relu":
        safe = np.where(gamma > 0, gamma, 1.0)
        t = beta / safe
        rect = beta * ndtr(t) + gamma * np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        return np.where(gamma > 0, rect, np.maximum(beta, 0.0))
    nodes, weights = np.polynomial.hermite_e.hermegauss(64)
    z = beta[:, None] + gamma[:, None] * nodes[None, :]
    return activate(kind, z) @ weights / math.sqrt(2 * math.pi)


def derive_activation_scales(
    model_with_bn: Model,
    policy: ActRangePolicy,
    a: Union[float, Sequence[float]],
    bits_a: int,
    calib: Optional[Dataset] = None,
) -> list:
    """Per weight layer: input range, scale, sign handling and mean.

    bn_stats reads the range off the batchnorm feeding the layer
    (max over channels of beta + n_sigma*|gamma|, pushed through the
    activation); layers without such a batchnorm fall back to the observed
    range on ``calib``.
    """
    stats = input_stats(model_with_bn)
    kinds = input_activations(model_with_bn)
    n = len(stats)
    a_list = list(a) if isinstance(a, (list, tuple, np.ndarray)) else [float(a)] * n
    observed = None
    infos = []
    for l in range(n):
        kind = kinds[l]
        signed = kind == "identity"
        offset = 0.0 if signed else activation_lower_bound(kind)
        st = stats[l] if policy.kind == "bn_stats" else None
        if st is not None:
            spread = policy.n_sigma * np.abs(st.gamma)
            if signed:
                rng = float(np.max(np.abs(st.beta) + spread))
            else:
                rng = float(activate(kind, np.max(st.beta + spread))) + offset
            mean = _gaussian_mean_after(kind, st.beta, st.gamma)
            source = "bn_stats"
        else:
            if calib is None:
                raise StructureError(f"layer {l} has no batchnorm statistics and no calibration data was given")
            if observed is None:
                observed = weight_layer_inputs(model_with_bn, calib.features)
            x = observed[l]
            rng = float(np.max(np.abs(x))) if signed else float(np.max(x + offset))
            mean = x.mean(axis=(0, 2, 3)) if x.ndim == 4 else x.reshape(x.shape[0], -1).mean(axis=0)
            source = "dynamic"
        rng = max(rng, MIN_RANGE)
        full = signed_full_scale(bits_a) if signed else unsigned_full_scale(bits_a)
        infos.append(ActInfo(rng, rng ** a_list[l] / full, signed, offset, mean, source))
    return infos


def bias_correction(w, w_hat, mu, bias) -> np.ndarray:
    """b - (W_hat - W) mu; for conv kernels mu is per input channel."""
    w = np.asarray(w, dtype=np.float64)
    delta = np.asarray(w_hat, dtype=np.float64) - w
    mu = np.asarray(mu, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if delta.ndim == 4:
        delta = delta.sum(axis=(2, 3))
    elif delta.ndim == 2 and mu.shape[0] != delta.shape[1] and mu.shape[0] and delta.shape[1] % mu.shape[0] == 0:
        # dense layer after a conv: per-channel means repeat over the flattened spatial positions
        mu = np.repeat(mu, delta.shape[1] // mu.shape[0])
    if delta.ndim != 2 or delta.shape[1] != mu.shape[0] or delta.shape[0] != bias.shape[0]:
        raise DimensionError(f"cannot correct bias {bias.shape} with weights {np.shape(w)} and mean {mu.shape}")
    return bias - delta @ mu


@dataclass
class QuantLayer:
    qweights: QuantizedTensor
    corrected_bias: np.ndarray
    kind: str  # dense | conv2d
    activation: str
    input_activation: str
    input_signed: bool
    act_range: float
    act_scale: float
    zero_point: float
    a: float
    stride: int = 1
    padding: str = "valid"

    @cached_property
    def dequantized(self) -> np.ndarray:
        return dequantize_tensor(self.qweights)

    def op(self, weight=None):
        w = self.dequantized if weight is None else weight
        if self.kind == "dense":
            return Dense(w, self.corrected_bias, self.activation)
        return Conv2d(w, self.corrected_bias, self.stride, self.padding, self.activation)


@dataclass
class QuantizedModel:
    layers: list
    input_shape: tuple
    a: Union[float, list]
    bits_w: int
    bits_a: int
    scheme: str = "power"
    granularity: str = "per-channel"
    accumulation: str = "pre"

    def forward(self, x) -> np.ndarray:
        return forward_quantized(self, x)


def snap_input(layer: QuantLayer, x: np.ndarray, bits_a: int):
    """Quantize a layer input; returns (codes, reconstruction of the shifted input)."""
    a = layer.a
    if layer.input_signed:
        q = quantize_signed_fixed(x, a, bits_a, layer.act_range)
    else:
        q = quantize_unsigned(np.maximum(x + layer.zero_point, 0.0), a, bits_a, layer.act_range)
        q.scales = np.array([layer.act_scale])
    codes = q.codes.astype(np.float64)
    return codes, signed_power(codes * layer.act_scale, 1.0 / a)


def forward_quantized(qm: QuantizedModel, x, accumulation: Optional[str] = None) -> np.ndarray:
    """Simulated quantized inference.

    ``pre``: reconstructed weights times reconstructed inputs, accumulated in
    float (each product (q_w q_x s_w s_x)^(1/a) equals w_hat * x_hat).
    ``post``: integer codes are accumulated first and a single inverse power is
    applied per output. Both subtract the zero-point term C * W_hat.
    """
    mode = accumulation or qm.accumulation
    if mode not in ACCUMULATION_MODES:
        raise ValidationError("accumulation", f"expected pre or post, got {mode!r}")
    h, single = as_batch(qm.input_shape, x)
    for layer in qm.layers:
        codes, x_hat = snap_input(layer, h, qm.bits_a)
        op = layer.op()
        if mode == "pre":
            y = op.linear(x_hat)
        else:
            if layer.qweights.scheme.kind == "log":
                raise ValidationError("accumulation", "post accumulation needs a power or uniform weight scheme")
            acc = op.linear(codes, layer.qweights.codes.astype(np.float64))
            s_w = layer.qweights.scales if layer.qweights.axis is not None else np.full(acc.shape[1], layer.qweights.scales[0])
            s_w = s_w.reshape((1, -1) + (1,) * (acc.ndim - 2))
            y = signed_power(acc * s_w * layer.act_scale, 1.0 / layer.a)
        if layer.zero_point:
            y = y - op.linear(np.full(h.shape, layer.zero_point))
        h = activate(layer.activation, op.add_bias(y, layer.corrected_bias))
    return h[0] if single else h


def build_quantized_model(
    model: Model,
    a: Union[float, Sequence[float]],
    bits_w: int,
    bits_a: int,
    gran: Granularity = PER_CHANNEL,
    policy: ActRangePolicy = ActRangePolicy(),
    calib: Optional[Dataset] = None,
    bias_correct: bool = True,
    accumulation: str = "pre",
    scheme_kind: str = "power",
) -> QuantizedModel:
    """Quantize ``model`` (batchnorm layers allowed) with fixed exponent(s).

    ``scheme_kind`` selects the weight quantizer; uniform and log weights use
    exponent 1 for the activations.
    """
    if accumulation not in ACCUMULATION_MODES:
        raise ValidationError("accumulation", f"expected pre or post, got {accumulation!r}")
    folded = fold_batchnorm(model)
    wl = folded.weight_layers
    if scheme_kind == "power":
        a_list = [float(v) for v in a] if isinstance(a, (list, tuple, np.ndarray)) else [float(a)] * len(wl)
    else:
        a_list = [1.0] * len(wl)
    if len(a_list) != len(wl):
        raise DimensionError(f"{len(a_list)} exponents for {len(wl)} weight layers")
    infos = derive_activation_scales(model, policy, a_list, bits_a, calib)
    kinds = input_activations(model)
    layers = []
    for l, (layer, info) in enumerate(zip(wl, infos)):
        scheme = {"power": lambda: Scheme.power(a_list[l]), "uniform": Scheme.uniform, "log": Scheme.log}[scheme_kind]()
        qw = quantize_tensor(layer.weight, scheme, bits_w, gran)
        bias = layer.bias
        if bias_correct:
            bias = bias_correction(layer.weight, dequantize_tensor(qw), info.mean, layer.bias)
        layers.append(
            QuantLayer(
                qw, np.array(bias, dtype=np.float64),
                "dense" if isinstance(layer, Dense) else "conv2d",
                layer.activation, kinds[l], info.signed, info.value_range, info.scale,
                info.offset, a_list[l],
                getattr(layer, "stride", 1), getattr(layer, "padding", "valid"),
            )
        )
    a_out = a_list[0] if not isinstance(a, (list, tuple, np.ndarray)) else a_list
    return QuantizedModel(layers, folded.input_shape, a_out, bits_w, bits_a, scheme_kind, gran.name, accumulation)


def quantize_model(
    model: Model,
    bits_w: int = 4,
    bits_a: int = 4,
    gran: Granularity = PER_CHANNEL,
    fit_mode: str = "global",
    policy: ActRangePolicy = ActRangePolicy(),
    bias_correct: bool = True,
    solver: str = "nelder_mead",
    p: int = 2,
    accumulation: str = "pre",
    calib: Optional[Dataset] = None,
) -> tuple:
    """Fold batchnorms, fit the exponent(s) on the folded weights, quantize.

    Returns (QuantizedModel, FitReport).
    """
    folded = fold_batchnorm(model)
    if fit_mode == "global":
        report = fit_exponent(folded, bits_w, gran, p, solver)
    elif fit_mode == "per_layer":
        report = fit_per_layer(folded, bits_w, gran, p, solver)
    else:
        raise ValidationError("fit_mode", f"expected global or per_layer, got {fit_mode!r}")
    qm = build_quantized_model(model, report.a_star, bits_w, bits_a, gran, policy, calib, bias_correct, accumulation)
    return qm, report
