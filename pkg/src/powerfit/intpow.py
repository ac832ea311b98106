"""Integer-only evaluation of code ** (1/a) in fixed point.

The exponent e = m + f is split into an integer part, done by exact integer
multiplication, and a fraction f in [0, 1) expanded in binary:
x^f = prod_k (x^(1/2^k))^(bit_k). Each x^(1/2^k) is one more fixed-point
square root of the previous one; every square root runs a fixed number of
integer Newton steps from a chord initial guess.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError, RangeError, ValidationError

ACC_BITS = 63


@dataclass(frozen=True)
class IntPowConfig:
    iterations: int = 2
    fraction_bits: int = 16

    def __post_init__(self):
        if not 1 <= self.iterations <= 8:
            raise ValidationError("iterations", f"must lie in [1, 8], got {self.iterations}")
        if not 1 <= self.fraction_bits <= 30:
            raise ValidationError("fraction_bits", f"must lie in [1, 30], got {self.fraction_bits}")


def _check(v: int) -> int:
    if v.bit_length() > ACC_BITS:
        raise RangeError(f"fixed-point value needs {v.bit_length()} bits; widen the accumulator or use fewer fraction bits")
    return v


def isqrt_newton(n: int, iterations: int) -> int:
    """Approximate floor(sqrt(n)) with ``iterations`` Newton steps.

    Initial guess: write n = 4^k * m with m in [1, 4) and take the chord
    (m + 2) / 3 of sqrt on that interval (within 6% of the root).
    """
    if n < 0:
        raise DomainError("square root of a negative number")
    if n < 2:
        return n
    k = (n.bit_length() - 1) // 2
    # m scaled by 2^(2k); chord guess g = 2^k (m + 2) / 3 = (n / 2^k + 2^(k+1)) / 3
    g = ((n >> k) + (1 << (k + 1))) // 3
    for _ in range(iterations):
        g = (g + n // g + 1) >> 1
    return g


def int_power_newton(code: int, exponent_inv: float, cfg: IntPowConfig = IntPowConfig()) -> int:
    """code ** exponent_inv as a fixed-point integer with ``cfg.fraction_bits`` fraction bits."""
    if code < 0:
        raise DomainError(f"code must be non-negative, got {code}")
    if not 0.25 <= exponent_inv <= 10:
        raise DomainError(f"exponent {exponent_inv} outside [0.25, 10]")
    fb = cfg.fraction_bits
    one = 1 << fb
    m = int(exponent_inv)
    f = exponent_inv - m
    # the fractional exponent is used with fb binary digits, rounded to nearest
    f_bits = round(f * (1 << fb))
    if f_bits == 1 << fb:
        m, f_bits = m + 1, 0
    if code == 0:
        return 0
    acc = _check(code**m << fb)
    root = _check(code << fb)
    for k in range(1, fb + 1):
        # sqrt in Q format: sqrt(v / 2^fb) * 2^fb = sqrt(v * 2^fb)
        root = isqrt_newton(root << fb, cfg.iterations)
        if f_bits >> (fb - k) & 1:
            acc = _check((acc * root + (one >> 1)) >> fb)
    return acc


def to_float(value: int, cfg: IntPowConfig = IntPowConfig()) -> float:
    return value / (1 << cfg.fraction_bits)
