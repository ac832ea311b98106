"""Exponent sweeps, scheme comparisons, weight statistics and cost estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fit import fit_exponent, grid_points, objective
from .fixtures import Dataset, accuracy
from .inference import ActRangePolicy, build_quantized_model
from .intpow import IntPowConfig
from .model import Conv2d, Model, fold_batchnorm
from .quant import PER_CHANNEL, Granularity, Scheme, reconstruction_error
from .tensor import moments


@dataclass
class SweepCurve:
    points: list  # (a, epsilon, accuracy), sorted by a
    bits: int
    correlation: float
    model_id: str = ""


def pearson(x, y) -> float:
    """Pearson r; 0 when either series is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0.0:
        return 0.0
    return float(np.clip((dx @ dy) / den, -1.0, 1.0))


def sweep_a(
    model: Model,
    dataset: Dataset,
    bits: int = 4,
    gran: Granularity = PER_CHANNEL,
    lo: float = 0.05,
    hi: float = 2.0,
    step: float = 0.005,
    policy: ActRangePolicy = ActRangePolicy(),
    bias_correct: bool = True,
    p: int = 2,
    model_id: str = "",
) -> SweepCurve:
    """Reconstruction error and W{bits}/A{bits} accuracy at every grid exponent."""
    folded = fold_batchnorm(model)
    points = []
    for a in grid_points(lo, hi, step):
        eps = objective(folded, a, bits, gran, p)
        qm = build_quantized_model(model, a, bits, bits, gran, policy, dataset, bias_correct)
        points.append((a, eps, accuracy(qm, dataset)))
    r = pearson([e for _, e, _ in points], [acc for _, _, acc in points])
    return SweepCurve(points, bits, r, model_id)


@dataclass
class ComparisonRow:
    scheme: str
    bits_w: int
    bits_a: int
    a_star: Optional[float]
    accuracy: float
    reconstruction_error: float


def compare_schemes(
    model: Model,
    dataset: Dataset,
    bits_list=(4, 6, 8),
    gran: Granularity = PER_CHANNEL,
    policy: ActRangePolicy = ActRangePolicy(),
    bias_correct: bool = True,
    p: int = 2,
    solver: str = "nelder_mead",
) -> list:
    folded = fold_batchnorm(model)
    rows = []
    for b in bits_list:
        report = fit_exponent(folded, b, gran, p, solver)
        for kind in ("uniform", "log", "power"):
            scheme = {"uniform": Scheme.uniform(), "log": Scheme.log(), "power": Scheme.power(report.a_star)}[kind]
            a = report.a_star if kind == "power" else 1.0
            qm = build_quantized_model(model, a, b, b, gran, policy, dataset, bias_correct, scheme_kind=kind)
            rows.append(
                ComparisonRow(
                    kind, b, b, a if kind == "power" else None,
                    accuracy(qm, dataset), reconstruction_error(folded, scheme, b, gran, p),
                )
            )
    return rows


def weight_stats(model: Model) -> dict:
    """Per-layer std/skewness/kurtosis of the flattened weights and their means."""
    layers = []
    for w in model.weights():
        m = moments(w)
        layers.append({"std": m.std, "skewness": m.skewness, "kurtosis": m.kurtosis})

    def avg(key):
        vals = [l[key] for l in layers if l[key] is not None]
        return float(np.mean(vals)) if vals else None

    return {"layers": layers, "mean_std": avg("std"), "mean_skewness": avg("skewness"), "mean_kurtosis": avg("kurtosis")}


def overhead_estimate(model: Model, bits_w: int, bits_a: int, intpow: IntPowConfig = IntPowConfig()) -> dict:
    """Bit-weighted multiply counts for the MACs and for evaluating the activation power.

    mac_cost = sum(MACs) * bits_w * bits_a
    power_eval_cost = sum(layer input elements) * iterations * fraction_bits * bits_a^2
    A model with no MACs reports an overhead fraction of 1.
    """
    shape = model.input_shape
    macs = 0
    act_elems = 0
    for layer in model.layers:
        out = layer.output_shape(shape)
        if isinstance(layer, Conv2d):
            c_out, c_in, kh, kw = layer.weight.shape
            macs += c_in * kh * kw * math.prod(out)
            act_elems += math.prod(shape)
        elif hasattr(layer, "weight"):
            macs += layer.weight.size
            act_elems += math.prod(shape)
        shape = out
    mac_cost = macs * bits_w * bits_a
    power_cost = act_elems * intpow.iterations * intpow.fraction_bits * bits_a**2
    frac = 1.0 if mac_cost == 0 else power_cost / (mac_cost + power_cost)
    return {"mac_cost": mac_cost, "power_eval_cost": power_cost, "overhead_fraction": frac}
