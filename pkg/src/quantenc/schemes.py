"""Quantization schemes and their quantize/dequantize operators.

Four activation schemes:

* ``PER_TENSOR``  - one scale for the whole tensor (static, calibrated).
* ``PER_ROW``     - one scale per row/token, computed on the fly.
* ``PER_COL``     - one scale per column/feature, calibrated.
* ``ASYM_U8``     - unsigned 8-bit with zero-point pinned at 0, for
  softmax outputs (which are never negative).

Signed values are clamped to [-127, 127] (not -128) so negation maps the
int8 grid onto itself, and every rounding in the engine is half-to-even.
Weight matrices get one scale per output column.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .tensor import F32, check_finite

I8_MAX = 127
U8_MAX = 255


class QScheme(enum.Enum):
    PER_TENSOR = "per_tensor"
    PER_ROW = "per_row"
    PER_COL = "per_col"
    ASYM_U8 = "asym_u8"


def round_half_even(x: float) -> int:
    """Nearest integer, ties to even (the engine-wide rounding rule)."""
    return int(np.rint(x))


def compute_scale(amax: float, qmax: int) -> np.float32:
    """amax/qmax, falling back to 1.0 for all-zero tensors."""
    if amax < 0:
        raise InputError(f"amax must be non-negative, got {amax}")
    if qmax not in (I8_MAX, U8_MAX):
        raise InputError(f"qmax must be 127 or 255, got {qmax}")
    if amax == 0:
        return F32(1.0)
    return F32(amax) / F32(qmax)


def _scale_vector(amax: np.ndarray, qmax: int) -> np.ndarray:
    amax = np.asarray(amax, dtype=F32)
    out = np.where(amax > 0, amax / F32(qmax), F32(1.0)).astype(F32)
    return out


@dataclass(frozen=True)
class QuantTensor:
    """int8/uint8 values plus the scale metadata needed to reconstruct them."""

    values: np.ndarray
    scheme: QScheme
    scales: np.ndarray  # scalar array for PER_TENSOR/ASYM_U8, vector otherwise

    def __post_init__(self):
        v = self.values
        s = np.asarray(self.scales, dtype=F32)
        object.__setattr__(self, "scales", s)
        if self.scheme is QScheme.ASYM_U8:
            if v.dtype != np.uint8:
                raise InputError(f"ASYM_U8 values must be uint8, got {v.dtype}")
        else:
            if v.dtype != np.int8:
                raise InputError(f"{self.scheme} values must be int8, got {v.dtype}")
            if v.size and (v.min() < -I8_MAX or v.max() > I8_MAX):
                raise InputError("int8 values outside [-127, 127]")
        if np.any(s <= 0):
            raise InputError("scales must be strictly positive")
        expected = self._expected_scale_shape()
        if s.shape != expected:
            raise ShapeError(
                f"{self.scheme} on values {v.shape} needs scales {expected}, got {s.shape}"
            )

    def _expected_scale_shape(self) -> tuple:
        if self.scheme in (QScheme.PER_TENSOR, QScheme.ASYM_U8):
            return ()
        if self.scheme is QScheme.PER_ROW:
            return (self.values.shape[0],)
        return (self.values.shape[-1],)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class QuantizedWeight:
    """int8 weight matrix [d, m] with one scale per output column."""

    values: np.ndarray
    col_scales: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"weight must be rank 2, got {self.values.ndim}")
        if self.values.dtype != np.int8:
            raise InputError(f"weight values must be int8, got {self.values.dtype}")
        s = np.asarray(self.col_scales, dtype=F32)
        object.__setattr__(self, "col_scales", s)
        if s.shape != (self.values.shape[1],):
            raise ShapeError(f"need {self.values.shape[1]} column scales, got {s.shape}")
        if np.any(s <= 0):
            raise InputError("column scales must be strictly positive")

    @property
    def shape(self) -> tuple:
        return self.values.shape


def _clamp_round_i8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), -I8_MAX, I8_MAX).astype(np.int8)


def _clamp_round_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, U8_MAX).astype(np.uint8)


def quantize(x: np.ndarray, kind: QScheme, scales=None) -> QuantTensor:
    """Quantize an f32 tensor under the given scheme.

    With ``scales=None`` the amax statistic is taken from ``x`` itself
    (the on-the-fly variant); pass calibrated scales to pin them.
    """
    x = np.asarray(x, dtype=F32)
    check_finite(x)
    if kind in (QScheme.PER_ROW, QScheme.PER_COL) and x.ndim != 2:
        raise ShapeError(f"{kind} quantization expects a rank-2 tensor, got rank {x.ndim}")

    if kind is QScheme.PER_ROW:
        if scales is None:
            scales = _scale_vector(np.abs(x).max(axis=1), I8_MAX)
        scales = np.asarray(scales, dtype=F32)
        vals = _clamp_round_i8(x / scales[:, None])
    elif kind is QScheme.PER_COL:
        if scales is None:
            scales = _scale_vector(np.abs(x).max(axis=0), I8_MAX)
        scales = np.asarray(scales, dtype=F32)
        vals = _clamp_round_i8(x / scales[None, :])
    elif kind is QScheme.PER_TENSOR:
        if scales is None:
            scales = compute_scale(float(np.abs(x).max()) if x.size else 0.0, I8_MAX)
        scales = F32(scales)
        vals = _clamp_round_i8(x / scales)
    elif kind is QScheme.ASYM_U8:
        if scales is None:
            scales = compute_scale(float(x.max()) if x.size else 0.0, U8_MAX)
        scales = F32(scales)
        vals = _clamp_round_u8(x / scales)
    else:  # pragma: no cover - exhaustive enum
        raise InputError(f"unknown scheme {kind}")
    return QuantTensor(values=vals, scheme=kind, scales=np.asarray(scales, dtype=F32))


def dequantize(q: QuantTensor) -> np.ndarray:
    """Reconstruct the f32 tensor: values times the scheme's broadcast scale."""
    v = q.values.astype(F32)
    if q.scheme is QScheme.PER_ROW:
        return v * q.scales[:, None]
    if q.scheme is QScheme.PER_COL:
        return v * q.scales[None, :]
    return v * q.scales


def quantize_weight_per_column(w: np.ndarray) -> QuantizedWeight:
    """Symmetric int8 quantization of a weight matrix, one scale per column.

    All-zero columns keep scale 1.0 and quantize to zero.
    """
    w = np.asarray(w, dtype=F32)
    check_finite(w, "weight")
    if w.ndim != 2:
        raise ShapeError(f"weight must be rank 2, got {w.ndim}")
    scales = _scale_vector(np.abs(w).max(axis=0), I8_MAX)
    vals = _clamp_round_i8(w / scales[None, :])
    return QuantizedWeight(values=vals, col_scales=scales)
