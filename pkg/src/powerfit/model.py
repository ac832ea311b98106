"""Feed-forward models, float inference and batch-norm folding."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.special import erf

from .errors import DimensionError, StructureError, ValidationError
from .tensor import Tensor, conv2d

BN_EPS = 1e-5
ACTIVATIONS = ("relu", "silu", "gelu", "identity")


def activate(kind: str, x: Tensor) -> Tensor:
    if kind == "identity":
        return x
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "silu":
        # x * sigmoid(x), written to stay finite for large |x|
        return x * np.exp(-np.logaddexp(0.0, -x))
    if kind == "gelu":
        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    raise ValidationError("activation", f"unknown activation {kind!r}")


@dataclass
class Dense:
    weight: Tensor  # out x in
    bias: Tensor  # out
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimensionError(f"dense weight must be 2-d, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias {self.bias.shape} does not match {self.weight.shape[0]} outputs")
        _check_activation(self.activation)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def linear(self, x: Tensor, weight: Optional[Tensor] = None) -> Tensor:
        """Affine map without bias; ``x`` is a batch, flattened per row."""
        w = self.weight if weight is None else weight
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != w.shape[1]:
            raise DimensionError(f"dense layer expects {w.shape[1]} inputs, got {x.shape[1]}")
        return x @ w.T

    def add_bias(self, y: Tensor, bias: Tensor) -> Tensor:
        return y + bias

    def output_shape(self, input_shape: tuple) -> tuple:
        if math.prod(input_shape) != self.weight.shape[1]:
            raise DimensionError(f"dense layer expects {self.weight.shape[1]} inputs, got shape {input_shape}")
        return (self.weight.shape[0],)


@dataclass
class Conv2d:
    weight: Tensor  # C_out x C_in x kh x kw
    bias: Tensor  # C_out
    stride: int = 1
    padding: str = "valid"
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4:
            raise DimensionError(f"conv kernel must be 4-d, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"bias {self.bias.shape} does not match {self.weight.shape[0]} outputs")
        if self.padding not in ("valid", "same"):
            raise ValidationError("padding", f"expected valid or same, got {self.padding!r}")
        _check_activation(self.activation)

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def linear(self, x: Tensor, weight: Optional[Tensor] = None) -> Tensor:
        w = self.weight if weight is None else weight
        return conv2d(x, w, self.stride, self.padding)

    def add_bias(self, y: Tensor, bias: Tensor) -> Tensor:
        return y + bias[None, :, None, None]

    def output_shape(self, input_shape: tuple) -> tuple:
        probe = np.zeros((1,) + tuple(input_shape))
        return conv2d(probe, np.zeros(self.weight.shape), self.stride, self.padding).shape[1:]


@dataclass
class BatchNorm:
    gamma: Tensor
    beta: Tensor
    mean: Tensor
    var: Tensor
    activation: str = "identity"
    eps: float = BN_EPS

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        c = self.gamma.shape
        if len(c) != 1 or any(getattr(self, n).shape != c for n in ("beta", "mean", "var")):
            raise DimensionError("batchnorm parameters must be 1-d and share one extent")
        if np.any(self.var < 0):
            raise ValidationError("var", "batchnorm variance must be non-negative")
        _check_activation(self.activation)

    def scale(self) -> Tensor:
        return self.gamma / np.sqrt(self.var + self.eps)

    def apply(self, x: Tensor) -> Tensor:
        shape = (1, -1) + (1,) * (x.ndim - 2)
        k = self.scale().reshape(shape)
        return (x - self.mean.reshape(shape)) * k + self.beta.reshape(shape)

    def output_shape(self, input_shape: tuple) -> tuple:
        if input_shape[0] != self.gamma.shape[0]:
            raise DimensionError(f"batchnorm over {self.gamma.shape[0]} channels got shape {input_shape}")
        return tuple(input_shape)


Layer = Union[Dense, Conv2d, BatchNorm]
WeightLayer = Union[Dense, Conv2d]


def _check_activation(kind):
    if kind not in ACTIVATIONS:
        raise ValidationError("activation", f"unknown activation {kind!r}")


def is_weight_layer(layer) -> bool:
    return isinstance(layer, (Dense, Conv2d))


@dataclass
class Model:
    layers: list
    input_shape: tuple

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if not any(is_weight_layer(l) for l in self.layers):
            raise StructureError("model needs at least one dense or conv layer")
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        self.output_shape = shape

    @property
    def weight_layers(self) -> list:
        return [l for l in self.layers if is_weight_layer(l)]

    def weights(self) -> list:
        return [l.weight for l in self.weight_layers]

    def forward(self, x: Tensor) -> Tensor:
        return forward_float(self, x)


def as_batch(input_shape: tuple, x) -> tuple[Tensor, bool]:
    """Promote a single sample to a batch of one; report whether we did."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape == tuple(input_shape):
        return x[None], True
    if len(input_shape) > 1 and x.ndim == 2 and x.shape[1] == math.prod(input_shape):
        # flat dataset rows for an image-shaped model
        x = x.reshape((x.shape[0],) + tuple(input_shape))
    if x.shape[1:] != tuple(input_shape):
        raise DimensionError(f"input shape {x.shape} does not match model input {input_shape}")
    return x, False


def forward_float(model: Model, x) -> Tensor:
    h, single = as_batch(model.input_shape, x)
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            h = layer.apply(h)
        else:
            h = layer.add_bias(layer.linear(h), layer.bias)
        h = activate(layer.activation, h)
    return h[0] if single else h


def fold_batchnorm(model: Model) -> Model:
    """Absorb every batchnorm into the dense/conv layer right before it.

    The batchnorm's activation moves onto the folded layer.
    """
    out: list = []
    for layer in model.layers:
        if not isinstance(layer, BatchNorm):
            out.append(replace(layer))
            continue
        prev = out[-1] if out else None
        if prev is None or not is_weight_layer(prev) or prev.activation != "identity":
            raise StructureError("batchnorm must directly follow a dense/conv layer with identity activation")
        if prev.out_channels != layer.gamma.shape[0]:
            raise StructureError("batchnorm channel count differs from the preceding layer")
        k = layer.scale()
        w = prev.weight * k.reshape((-1,) + (1,) * (prev.weight.ndim - 1))
        b = (prev.bias - layer.mean) * k + layer.beta
        out[-1] = replace(prev, weight=w, bias=b, activation=layer.activation)
    return Model(out, model.input_shape)


@dataclass(frozen=True)
class InputStats:
    """Batchnorm statistics describing the input of a weight layer.

    ``beta``/``gamma`` are the per-channel mean and std of the pre-activation
    signal; ``activation`` is the nonlinearity applied after it.
    """

    beta: Tensor
    gamma: Tensor
    activation: str


def input_stats(model: Model) -> list:
    """For each weight layer, the batchnorm statistics feeding its input (or None).

    A batchnorm counts when the only thing between it and the weight layer is
    its own activation.
    """
    stats = []
    pending = None
    for layer in model.layers:
        if is_weight_layer(layer):
            stats.append(pending)
            pending = None
        if isinstance(layer, BatchNorm):
            pending = InputStats(layer.beta, layer.gamma, layer.activation)
        elif is_weight_layer(layer) and layer.activation != "identity":
            pending = None
    return stats


def input_activations(model: Model) -> list:
    """Activation producing the input of each weight layer; 'identity' for the model input."""
    kinds = []
    last = "identity"
    for layer in model.layers:
        if is_weight_layer(layer):
            kinds.append(last)
        last = layer.activation
    return kinds


def weight_layer_inputs(model: Model, x) -> list:
    """Float input batch seen by each weight layer."""
    h, _ = as_batch(model.input_shape, x)
    seen = []
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            h = layer.apply(h)
        else:
            seen.append(h)
            h = layer.add_bias(layer.linear(h), layer.bias)
        h = activate(layer.activation, h)
    return seen
