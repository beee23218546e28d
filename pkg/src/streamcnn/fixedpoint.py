"""Fixed-point formats, rounding/saturation arithmetic and weight quantizers.

A format ``<W, I>`` has W total bits of which I are integer bits, *including*
the sign bit for signed formats (the HLS ``ap_fixed`` convention). The
resolution is ``2**(I - W)`` and the representable signed range is
``[-2**(I-1), 2**(I-1) - 2**(I-W)]``. I may be <= 0 (sub-unit range) or
larger than W (coarser-than-integer grid); both appear in heterogeneous
per-layer configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

Rounding = Literal["round-half-even", "truncate"]
Overflow = Literal["saturate", "wrap"]


class AccumulatorOverflow(ArithmeticError):
    """A multiply-accumulate result left the configured wide format.

    Signals a mis-sized accumulator config, not a recoverable condition.
    """


@dataclass(frozen=True)
class FxFormat:
    """Fixed-point format <total_bits, integer_bits>, integer part incl. sign."""

    total_bits: int
    integer_bits: int
    signed: bool = True

    def __post_init__(self):
        if self.total_bits < 1:
            raise ValueError(f"total_bits must be >= 1, got {self.total_bits}")

    @property
    def frac_bits(self) -> int:
        return self.total_bits - self.integer_bits

    @property
    def resolution(self) -> float:
        return 2.0 ** (self.integer_bits - self.total_bits)

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def raw_max(self) -> int:
        bits = self.total_bits - 1 if self.signed else self.total_bits
        return (1 << bits) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min * self.resolution

    @property
    def max_value(self) -> float:
        return self.raw_max * self.resolution

    def __str__(self) -> str:
        sign = "" if self.signed else "u"
        return f"<{self.total_bits},{self.integer_bits}{sign}>"


@dataclass(frozen=True)
class FxValue:
    """A raw integer mantissa interpreted under a format: value = raw * 2**(I-W)."""

    raw: int
    format: FxFormat

    def __post_init__(self):
        if not (self.format.raw_min <= self.raw <= self.format.raw_max):
            raise ValueError(f"raw {self.raw} does not fit {self.format}")

    @property
    def value(self) -> float:
        return self.raw * self.format.resolution


#: hls4ml's default layer precision.
DEFAULT_FORMAT = FxFormat(16, 6)


def _round_raw(scaled: np.ndarray, rounding: Rounding) -> np.ndarray:
    if rounding == "round-half-even":
        return np.rint(scaled)
    if rounding == "truncate":
        return np.floor(scaled)
    raise ValueError(f"unknown rounding mode {rounding!r}")


def quantize_array(
    x: np.ndarray,
    fmt: FxFormat,
    rounding: Rounding = "round-half-even",
    overflow: Overflow = "saturate",
) -> np.ndarray:
    """Quantize a float array to raw int64 mantissas of ``fmt``.

    Scaling by 2**frac_bits is a power-of-two multiply, hence exact in
    float64; the rounding mode therefore acts on the true scaled value.
    """
    x = np.asarray(x, dtype=np.float64)
    scaled = x * 2.0**fmt.frac_bits
    # Keep the scaled magnitude inside int64 before rounding; values this far
    # out saturate anyway, and wrap semantics are only defined for mantissas
    # that fit the 62-bit window.
    scaled = np.clip(scaled, -(2.0**62), 2.0**62)
    raw = _round_raw(scaled, rounding).astype(np.int64)
    if overflow == "saturate":
        return np.clip(raw, fmt.raw_min, fmt.raw_max)
    if overflow == "wrap":
        span = 1 << fmt.total_bits
        wrapped = np.mod(raw, span)
        if fmt.signed:
            wrapped = np.where(wrapped > fmt.raw_max, wrapped - span, wrapped)
        return wrapped
    raise ValueError(f"unknown overflow mode {overflow!r}")


def dequantize_array(raw: np.ndarray, fmt: FxFormat) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) * fmt.resolution


def quantize(
    x: float,
    fmt: FxFormat,
    rounding: Rounding = "round-half-even",
    overflow: Overflow = "saturate",
) -> FxValue:
    """Quantize a scalar; total function, never raises on any finite x."""
    raw = int(quantize_array(np.asarray([x]), fmt, rounding, overflow)[0])
    return FxValue(raw, fmt)


def quantize_value(
    x: np.ndarray | float,
    fmt: FxFormat,
    rounding: Rounding = "round-half-even",
    overflow: Overflow = "saturate",
) -> np.ndarray:
    """Quantize and dequantize in one step: snap values onto the format grid."""
    return dequantize_array(quantize_array(np.asarray(x), fmt, rounding, overflow), fmt)


def wide_accumulator_format(a: FxFormat, w: FxFormat, n_terms: int) -> FxFormat:
    """Accumulator format guaranteeing exact n-term product sums plus a bias.

    Fractional bits are the sum of the operand fractional bits (products are
    exact); integer bits add headroom of ceil(log2(n_terms + 1)).
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    frac = a.frac_bits + w.frac_bits
    integer = a.integer_bits + w.integer_bits + math.ceil(math.log2(n_terms + 1))
    total = integer + frac
    # 52 bits keeps every accumulator raw exactly representable in float64,
    # which the engines rely on when casting back to the layer format.
    if total > 52:
        raise ValueError(f"wide accumulator needs {total} bits; exceeds the exact float64 window")
    return FxFormat(total, integer)


def fx_mac(acc: FxValue, a: FxValue, w: FxValue) -> FxValue:
    """Exact product-accumulate in the accumulator's wide format.

    The accumulator must carry at least the product's fractional bits, so the
    alignment shift is a lossless left shift.
    """
    prod_frac = a.format.frac_bits + w.format.frac_bits
    shift = acc.format.frac_bits - prod_frac
    if shift < 0:
        raise ValueError(
            f"accumulator {acc.format} has fewer fractional bits than the "
            f"product of {a.format} and {w.format}"
        )
    raw = acc.raw + (a.raw * w.raw << shift)
    if not (acc.format.raw_min <= raw <= acc.format.raw_max):
        raise AccumulatorOverflow(
            f"accumulate to raw {raw} wraps in {acc.format}; widen the accumulator"
        )
    return FxValue(raw, acc.format)


@dataclass
class FxTensor:
    """An array of raw mantissas sharing one format."""

    raw: np.ndarray
    format: FxFormat

    @property
    def values(self) -> np.ndarray:
        return dequantize_array(self.raw, self.format)

    @property
    def shape(self) -> tuple:
        return self.raw.shape


def quantize_tensor(
    x: np.ndarray,
    fmt: FxFormat,
    rounding: Rounding = "round-half-even",
    overflow: Overflow = "saturate",
) -> FxTensor:
    return FxTensor(quantize_array(x, fmt, rounding, overflow), fmt)


def requantize(t: FxTensor, fmt: FxFormat) -> FxTensor:
    """Convert a tensor to another format through its real values."""
    if fmt == t.format:
        return FxTensor(t.raw.copy(), fmt)
    return quantize_tensor(t.values, fmt)


@dataclass(frozen=True)
class QuantizerSpec:
    """Weight quantizer: mantissa(format), binary (sign), or ternary (threshold)."""

    kind: Literal["mantissa", "binary", "ternary"]
    format: Optional[FxFormat] = None
    threshold: float = 0.33

    def __post_init__(self):
        if self.kind == "mantissa" and self.format is None:
            raise ValueError("mantissa quantizer needs a format")
        if self.kind == "ternary" and not self.threshold > 0:
            raise ValueError("ternary threshold must be > 0")


def apply_quantizer(t: np.ndarray, q: QuantizerSpec) -> np.ndarray:
    """Quantize a tensor: binary -> {-1,+1} (0 maps to +1), ternary -> {-1,0,+1}."""
    t = np.asarray(t, dtype=np.float64)
    if q.kind == "binary":
        return np.where(t >= 0.0, 1.0, -1.0)
    if q.kind == "ternary":
        return np.where(np.abs(t) <= q.threshold, 0.0, np.sign(t))
    return quantize_value(t, q.format)
