"""Fitting the quantizer exponent by minimising the weight reconstruction error."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union


from .errors import SolverError, ValidationError
from .quant import A_MAX, PER_CHANNEL, Granularity, Scheme, check_exponent, layer_errors, reconstruction_error, weight_list

# lower edge used to keep simplex points inside the exponent domain (0, 4]
A_MIN = 0.01

SOLVERS = ("nelder_mead", "grid")


def objective(model, a: float, bits: int, gran: Granularity = PER_CHANNEL, p: int = 2) -> float:
    """Reconstruction error of the power quantizer with exponent ``a``."""
    return reconstruction_error(model, Scheme.power(check_exponent(a)), bits, gran, p)


def nelder_mead_1d(
    f: Callable[[float], float],
    init_lo: float = 0.2,
    init_hi: float = 1.0,
    tol: float = 1e-4,
    max_iter: int = 200,
    bounds: Optional[tuple] = None,
) -> tuple[float, float]:
    """Two-point Nelder-Mead simplex on a scalar function.

    Reflection 1, expansion 2, contraction 0.5, shrink 0.5. Candidate points
    are clipped into ``bounds`` when given. Stops once the simplex is narrower
    than ``tol`` or after ``max_iter`` iterations.
    """
    if not init_lo < init_hi:
        raise ValidationError("init", f"need init_lo < init_hi, got {init_lo}, {init_hi}")
    lo_b, hi_b = bounds if bounds is not None else (-math.inf, math.inf)

    def clip(x):
        return min(max(x, lo_b), hi_b)

    def ev(x):
        y = f(x)
        if not math.isfinite(y):
            raise SolverError(f"objective is {y!r} at a={x!r}", point=x)
        return float(y)

    pts = [(clip(init_lo), None), (clip(init_hi), None)]
    pts = sorted(((x, ev(x)) for x, _ in pts), key=lambda t: t[1])
    for _ in range(max_iter):
        (xb, fb), (xw, fw) = pts
        if abs(xw - xb) < tol:
            break
        # the centroid of all points but the worst is the best point itself
        xr = clip(xb + (xb - xw))
        fr = ev(xr)
        if fr < fb:
            xe = clip(xb + 2.0 * (xr - xb))
            fe = ev(xe)
            new = (xe, fe) if fe < fr else (xr, fr)
        else:
            if fr < fw:
                xc = clip(xb + 0.5 * (xr - xb))
                fc = ev(xc)
                ok = fc <= fr
            else:
                xc = clip(xb + 0.5 * (xw - xb))
                fc = ev(xc)
                ok = fc < fw
            if ok:
                new = (xc, fc)
            else:
                xs = xb + 0.5 * (xw - xb)
                new = (xs, ev(xs))
        pts = sorted([(xb, fb), new], key=lambda t: t[1])
    return pts[0]


def grid_points(lo: float, hi: float, step: float) -> list:
    if not lo < hi or not step > 0:
        raise ValidationError("grid", f"need lo < hi and step > 0, got {lo}, {hi}, {step}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def grid_scan(f: Callable[[float], float], lo: float = 0.05, hi: float = 2.0, step: float = 0.005):
    """Evaluate ``f`` on an even grid; returns (argmin, min, curve). Ties go to the smallest a."""
    curve = [(a, float(f(a))) for a in grid_points(lo, hi, step)]
    best_a, best_f = curve[0]
    for a, v in curve[1:]:
        if v < best_f:
            best_a, best_f = a, v
    return best_a, best_f, curve


@dataclass
class FitReport:
    mode: str  # global | per_layer
    a_star: Union[float, list]
    epsilon_at_a_star: float
    epsilon_at_uniform: float
    solver: str
    trace: list = field(default_factory=list)
    # per_layer only: reconstruction error of each layer at its own exponent
    layer_epsilon: Optional[list] = None

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "solver": self.solver,
            "a_star": self.a_star,
            "epsilon_at_a_star": self.epsilon_at_a_star,
            "epsilon_at_uniform": self.epsilon_at_uniform,
            "trace": [list(t) for t in self.trace],
        }
        if self.layer_epsilon is not None:
            d["layer_epsilon"] = self.layer_epsilon
        return d


def _check_solver(solver):
    if solver not in SOLVERS:
        raise ValidationError("solver", f"expected one of {SOLVERS}, got {solver!r}")


def _solve(f, solver, trace, nm_options=None, grid_options=None):
    def traced(a):
        v = f(a)
        trace.append((a, v))
        return v

    if solver == "grid":
        a, v, _ = grid_scan(traced, **(grid_options or {}))
        return a, v
    return nelder_mead_1d(traced, bounds=(A_MIN, A_MAX), **(nm_options or {}))


def _safeguarded(f, solver, trace, candidates=(), **options):
    """Solver result compared against a=1 and any extra candidates; the lowest error wins."""
    a, v = _solve(f, solver, trace, **options)
    eps_uniform = f(1.0)
    for c in (1.0, *candidates):
        vc = eps_uniform if c == 1.0 else f(c)
        if vc < v:
            a, v = c, vc
    return float(a), float(v), float(eps_uniform)


def fit_exponent(
    model,
    bits: int,
    gran: Granularity = PER_CHANNEL,
    p: int = 2,
    solver: str = "nelder_mead",
    nm_options: Optional[dict] = None,
    grid_options: Optional[dict] = None,
) -> FitReport:
    """One exponent for every layer, never worse than uniform quantization."""
    _check_solver(solver)
    weights = weight_list(model)
    trace: list = []
    a, v, eps_u = _safeguarded(
        lambda a: objective(weights, a, bits, gran, p), solver, trace,
        nm_options=nm_options, grid_options=grid_options,
    )
    return FitReport("global", a, v, eps_u, solver, trace)


def fit_per_layer(
    model,
    bits: int,
    gran: Granularity = PER_CHANNEL,
    p: int = 2,
    solver: str = "nelder_mead",
    nm_options: Optional[dict] = None,
    grid_options: Optional[dict] = None,
) -> FitReport:
    """Independent exponent per weight layer.

    Each layer's search also considers the global optimum, so the summed
    error can never exceed the global fit's.
    """
    _check_solver(solver)
    weights = weight_list(model)
    glob = fit_exponent(weights, bits, gran, p, solver, nm_options, grid_options)
    a_list, eps_list, trace = [], [], []
    for w in weights:
        a, v, _ = _safeguarded(
            lambda a, w=w: objective([w], a, bits, gran, p), solver, trace,
            candidates=(glob.a_star,), nm_options=nm_options, grid_options=grid_options,
        )
        a_list.append(a)
        eps_list.append(v)
    eps_u = sum(layer_errors(weights, Scheme.uniform(), bits, gran, p))
    return FitReport("per_layer", a_list, float(sum(eps_list)), float(eps_u), solver, trace, eps_list)


def per_layer_total(model, a_list, bits, gran=PER_CHANNEL, p=2) -> float:
    """Summed reconstruction error with one exponent per layer."""
    return float(sum(objective([w], a, bits, gran, p) for w, a in zip(weight_list(model), a_list)))


def count_local_minima(curve: list, lo: float = 0.05, hi: float = 1.0, tol: float = 1e-9) -> int:
    """Number of strict local minima (plateaus within ``tol`` merged) of a sampled curve on [lo, hi]."""
    ys = [v for a, v in curve if lo - 1e-12 <= a <= hi + 1e-12]
    # collapse plateaus
    flat = []
    for y in ys:
        if not flat or abs(y - flat[-1]) > tol:
            flat.append(y)
    count = 0
    for i, y in enumerate(flat):
        left = flat[i - 1] if i > 0 else math.inf
        right = flat[i + 1] if i + 1 < len(flat) else math.inf
        if y < left and y < right:
            count += 1
    return count
