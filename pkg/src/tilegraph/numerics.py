"""Element types and rounding: BF16 emulation, INT8 affine quantisation,
LUT-based SiLU and a piecewise-linear tanh.

Everything here works on numpy arrays (scalars are 0-d arrays). MAC
reductions elsewhere accumulate in float32; only operands and stored results
go through :func:`round_to`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class EType(str, Enum):
    FP32 = "fp32"
    BF16 = "bf16"
    INT8 = "int8"

    @property
    def nbytes(self) -> int:
        return {"fp32": 4, "bf16": 2, "int8": 1}[self.value]


def as_etype(etype: "EType | str") -> EType:
    try:
        return EType(str(getattr(etype, "value", etype)).lower())
    except ValueError:
        raise ValueError(f"unsupported element type: {etype!r}") from None


# --------------------------------------------------------------------------
# bfloat16


def to_bf16(x) -> np.ndarray:
    """Round float32 values to bfloat16 (round-to-nearest-even), kept in float32.

    NaN stays NaN (sign preserved), infinities pass through unchanged.
    """
    a = np.asarray(x, dtype=np.float32)
    bits = a.view(np.uint32).astype(np.uint64)
    lsb = (bits >> 16) & 1
    rounded = ((bits + 0x7FFF + lsb) & 0xFFFF0000).astype(np.uint32)
    out = rounded.view(np.float32)
    nan = np.isnan(a)
    if nan.any():
        out = np.where(nan, np.copysign(np.float32(np.nan), a), out).astype(np.float32)
    return out.reshape(a.shape)


def bf16_bits(x) -> np.ndarray:
    """Upper 16 bits of the float32 payload of already-rounded bf16 values."""
    a = np.asarray(x, dtype=np.float32)
    return (a.view(np.uint32) >> 16).astype(np.uint16)


# --------------------------------------------------------------------------
# int8


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int


def int8_params(lo: float, hi: float) -> QuantParams:
    if not hi > lo:
        raise ValueError(f"degenerate quantisation range [{lo}, {hi}]")
    scale = (float(hi) - float(lo)) / 255.0
    # the zero point stays an integer offset; clipping it to int8 would shift
    # ranges that exclude zero off their endpoints
    zp = int(np.round(-128.0 - lo / scale))
    return QuantParams(scale, zp)


def quantize_int8(t, lo: float, hi: float) -> tuple[np.ndarray, QuantParams]:
    """Per-tensor affine quantisation into [-128, 127] with calibration range [lo, hi]."""
    qp = int8_params(lo, hi)
    x = np.asarray(t, dtype=np.float64)
    q = np.clip(np.round(x / qp.scale) + qp.zero_point, -128, 127).astype(np.int8)
    return q, qp


def dequantize_int8(q, qp: QuantParams) -> np.ndarray:
    return ((np.asarray(q, dtype=np.float64) - qp.zero_point) * qp.scale).astype(np.float32)


def fake_quant_int8(x, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    """Quantise-dequantise using [lo, hi] (default: the tensor's own range,
    widened to include zero)."""
    a = np.asarray(x, dtype=np.float32)
    if a.size == 0:
        return a
    lo = float(min(a.min(), 0.0)) if lo is None else lo
    hi = float(max(a.max(), 0.0)) if hi is None else hi
    if not hi > lo:
        return a.copy()
    q, qp = quantize_int8(a, lo, hi)
    return dequantize_int8(q, qp)


def round_to(x, etype: "EType | str") -> np.ndarray:
    """Round ``x`` to the storage precision of ``etype`` (result is float32)."""
    e = as_etype(etype)
    if e is EType.FP32:
        return np.asarray(x, dtype=np.float32)
    if e is EType.BF16:
        return to_bf16(x)
    return fake_quant_int8(x)


# --------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class SiluLut:
    """Sigmoid table sampled every ``(hi - lo) / entries`` on [lo, hi).

    The sample at index ``entries // 2`` lands exactly on 0 (sigma = 0.5).
    Inputs at or above ``hi`` saturate to 1, at or below ``lo`` to 0.
    """

    entries: int = 512
    lo: float = -8.0
    hi: float = 8.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)
    values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.entries < 2 or not self.hi > self.lo:
            raise ValueError("SiluLut needs >= 2 entries and hi > lo")
        step = (self.hi - self.lo) / self.entries
        xs = self.lo + step * np.arange(self.entries, dtype=np.float64)
        sig = 1.0 / (1.0 + np.exp(-xs))
        # saturation knot closes the last interval
        knots = np.append(xs, self.hi)
        values = np.append(sig, 1.0).astype(np.float32)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def table(self) -> np.ndarray:
        return self.values[: self.entries]

    def sigmoid(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        return np.interp(a, self.knots, self.values, left=0.0, right=1.0).astype(np.float32)


DEFAULT_LUT = SiluLut()


def silu(x, lut: SiluLut = DEFAULT_LUT) -> np.ndarray:
    a = np.asarray(x, dtype=np.float32)
    return (a * lut.sigmoid(a)).astype(np.float32)


_TANH_XMAX = 6.0
_TANH_KNOTS = np.linspace(0.0, _TANH_XMAX, 257)
_TANH_VALUES = np.tanh(_TANH_KNOTS)
_TANH_VALUES[-1] = 1.0


def tanh_approx(x) -> np.ndarray:
    """Odd piecewise-linear tanh: 256 segments on [0, 6], exactly +-1 beyond."""
    a = np.asarray(x, dtype=np.float32)
    mag = np.interp(np.abs(a.astype(np.float64)), _TANH_KNOTS, _TANH_VALUES, right=1.0)
    return (np.sign(a) * mag).astype(np.float32)
