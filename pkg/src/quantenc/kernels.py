"""Quantization-aware fused kernels.

The integer GeMM accumulates exactly in 32 bits; with the admitted shape
bound (inner dim <= 2**15) every partial sum stays below 2**31, and the
float64 BLAS path used internally represents all intermediates exactly,
so results are bitwise identical for any loop order, parallel split or
thread count.

Epilogues apply the per-row (token) scale, per-column (weight/feature)
scale, one optional extra scalar and an optional bias as element-wise f32
products, then either stay in f32 (dequant) or round once to int8
(requant).  Requantization is literally Round of the dequant product: the
target scale has already been folded into the weight columns upstream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .schemes import (
    I8_MAX,
    U8_MAX,
    QScheme,
    QuantTensor,
    dequantize,
    quantize,
)
from .tensor import F32, gelu_f32, layernorm_f32, softmax_f32

# 255 * 127 * 2**15 < 2**31: no i32 overflow for any admitted shape.
MAX_GEMM_K = 1 << 15


def gemm_i8_accum_i32(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Integer GeMM: (u)int8 [.., n, k] times int8 [.., k, m] -> int32.

    Accepts stacked leading dimensions; the result equals the naive
    triple loop bitwise.
    """
    if x.dtype not in (np.int8, np.uint8):
        raise InputError(f"gemm lhs must be int8 or uint8, got {x.dtype}")
    if w.dtype != np.int8:
        raise InputError(f"gemm rhs must be int8, got {w.dtype}")
    if x.ndim < 2 or w.ndim < 2:
        raise ShapeError("gemm operands must have rank >= 2")
    k = x.shape[-1]
    if w.shape[-2] != k:
        raise ShapeError(f"gemm inner dims disagree: {x.shape} x {w.shape}")
    if k > MAX_GEMM_K:
        raise ShapeError(f"inner dim {k} exceeds overflow-safe bound {MAX_GEMM_K}")
    # float64 holds every product and partial sum exactly (|sum| < 2**31 << 2**53)
    acc = np.matmul(x.astype(np.float64), w.astype(np.float64))
    return np.rint(acc).astype(np.int32)


class EpilogueKind(enum.Enum):
    DEQUANT_F32 = "dequant_f32"
    REQUANT_SQ = "requant_sq"
    REQUANT_FWQ = "requant_fwq"


@dataclass(frozen=True)
class Epilogue:
    """Post-accumulation stage of an integer GeMM.

    ``col_scales`` multiplies per output column, ``row_scales`` (when the
    input was token-quantized) per output row, ``extra_scalar`` once.
    ``bias`` is added after all scaling, i.e. it must already live in the
    epilogue's output domain (divide by the target scale upstream when
    requantizing).  ``out_scales`` only tags the produced QuantTensor; the
    arithmetic never divides by it because folding took care of that.
    """

    kind: EpilogueKind
    col_scales: np.ndarray
    row_scales: np.ndarray | None = None
    extra_scalar: float | None = None
    bias: np.ndarray | None = None
    out_scales: np.ndarray | float | None = None

    def __post_init__(self):
        cs = np.asarray(self.col_scales, dtype=F32)
        object.__setattr__(self, "col_scales", cs)
        if np.any(cs <= 0):
            raise InputError("epilogue column scales must be positive")
        if self.row_scales is not None:
            rs = np.asarray(self.row_scales, dtype=F32)
            object.__setattr__(self, "row_scales", rs)
            if np.any(rs <= 0):
                raise InputError("epilogue row scales must be positive")
        if self.bias is not None:
            object.__setattr__(self, "bias", np.asarray(self.bias, dtype=F32))


def apply_epilogue(accum: np.ndarray, e: Epilogue):
    """Scale (and optionally round) an int32 accumulator.

    Returns an f32 ndarray for DEQUANT_F32, a QuantTensor otherwise.
    Products are formed per element in f32, never tree-reduced, so the
    result is bitwise deterministic.
    """
    if accum.dtype != np.int32:
        raise InputError(f"epilogue expects an int32 accumulator, got {accum.dtype}")
    m = accum.shape[-1]
    if e.col_scales.shape != (m,):
        raise ShapeError(f"need {m} column scales, got {e.col_scales.shape}")
    out = accum.astype(F32)
    if e.row_scales is not None:
        if e.row_scales.shape[0] != accum.shape[-2]:
            raise ShapeError(
                f"need {accum.shape[-2]} row scales, got {e.row_scales.shape}"
            )
        out = out * e.row_scales[..., :, None]
    out = out * e.col_scales
    if e.extra_scalar is not None:
        out = out * F32(e.extra_scalar)
    if e.bias is not None:
        if e.bias.shape != (m,):
            raise ShapeError(f"bias length {e.bias.shape} != {m}")
        out = out + e.bias

    if e.kind is EpilogueKind.DEQUANT_F32:
        return out
    vals = np.clip(np.rint(out), -I8_MAX, I8_MAX).astype(np.int8)
    if e.kind is EpilogueKind.REQUANT_SQ:
        return QuantTensor(vals, QScheme.PER_TENSOR, np.asarray(e.out_scales, dtype=F32))
    return QuantTensor(vals, QScheme.PER_COL, np.asarray(e.out_scales, dtype=F32))


def _dequant_maybe(x) -> np.ndarray:
    """Identity on f32 arrays, dequantize on QuantTensors."""
    if isinstance(x, QuantTensor):
        return dequantize(x)
    return np.asarray(x, dtype=F32)


def ln_quant_embed(
    xt: QuantTensor,
    xp: np.ndarray,
    xs: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float,
) -> QuantTensor:
    """Fused embedding layer norm: dequant + sum + LN + token-wise requant.

    Exactly equals quantize(layernorm(dequant(xt) + xp + xs), PER_ROW).
    """
    if xt.scheme is not QScheme.PER_ROW:
        raise InputError(f"token embedding input must be token-quantized, got {xt.scheme}")
    if xt.shape != xp.shape or xt.shape != xs.shape:
        raise ShapeError(f"embedding shapes disagree: {xt.shape}, {xp.shape}, {xs.shape}")
    summed = dequantize(xt) + np.asarray(xp, dtype=F32) + np.asarray(xs, dtype=F32)
    return quantize(layernorm_f32(summed, gamma, beta, eps), QScheme.PER_ROW)


def ln_quant_residual(
    x_in,
    x_res,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float,
    out_int8: bool,
):
    """Residual-sum layer norm with mixed-precision inputs.

    Either input may independently be a QuantTensor or a plain f32 array.
    With ``out_int8`` the result is token-quantized on the fly, otherwise
    the f32 layer-norm output is returned unchanged.
    """
    a = _dequant_maybe(x_in)
    b = _dequant_maybe(x_res)
    if a.shape != b.shape:
        raise ShapeError(f"residual shapes disagree: {a.shape} vs {b.shape}")
    y = layernorm_f32(a + b, gamma, beta, eps)
    if out_int8:
        return quantize(y, QScheme.PER_ROW)
    return y


def softmax_quant(a: np.ndarray, p_scale: float) -> QuantTensor:
    """Softmax with fused asymmetric-u8 output at the calibrated scale."""
    if p_scale <= 0:
        raise InputError(f"softmax output scale must be positive, got {p_scale}")
    p = softmax_f32(a)
    vals = np.clip(np.rint(p / F32(p_scale)), 0, U8_MAX).astype(np.uint8)
    return QuantTensor(vals, QScheme.ASYM_U8, F32(p_scale))


def gelu_quant(x1: np.ndarray, col_scales: np.ndarray) -> QuantTensor:
    """GELU with fused feature-wise int8 output at the calibrated scales."""
    col_scales = np.asarray(col_scales, dtype=F32)
    x1 = np.asarray(x1, dtype=F32)
    if col_scales.shape != (x1.shape[-1],):
        raise ShapeError(f"need {x1.shape[-1]} GELU output scales, got {col_scales.shape}")
    if np.any(col_scales <= 0):
        raise InputError("GELU output scales must be positive")
    a = gelu_f32(x1)
    vals = np.clip(np.rint(a / col_scales), -I8_MAX, I8_MAX).astype(np.int8)
    return QuantTensor(vals, QScheme.PER_COL, col_scales)


def attn_scores(
    xq: QuantTensor,
    xk: QuantTensor,
    d_tilde: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Attention scores from statically quantized Q and K, one head.

    A = d_tilde * (Q_int8 @ K_int8^T) + mask, where d_tilde folds both
    static scales and the 1/sqrt(head_dim) factor.  The additive mask
    broadcasts over query rows.  Output stays f32: scores are never
    quantized.  Accepts stacked leading dimensions.
    """
    if xq.scheme is not QScheme.PER_TENSOR or xk.scheme is not QScheme.PER_TENSOR:
        raise InputError("attention scores need statically quantized Q and K")
    if xq.shape[-1] != xk.shape[-1]:
        raise ShapeError(f"head dims disagree: {xq.shape} vs {xk.shape}")
    acc = gemm_i8_accum_i32(xq.values, np.swapaxes(xk.values, -1, -2))
    a = acc.astype(F32) * F32(d_tilde)
    if mask is not None:
        a = a + np.asarray(mask, dtype=F32)
    return a
