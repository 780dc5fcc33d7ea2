"""FP32 reference operators.

Tensors are plain numpy arrays: row-major, C-contiguous, dtype one of
float32 / int8 / uint8 / int32, rank 1..3.  Everything in this module is a
pure function of its inputs; results do not depend on internal
parallelism, so concurrent calls are safe.

These four operators are the oracles every quantized kernel is checked
against, so they stay deliberately simple.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import InputError, ShapeError

F32 = np.float32

_INV_SQRT2 = np.float32(0.7071067811865476)


def as_f32(x) -> np.ndarray:
    """Coerce to a float32 ndarray without copying when already f32."""
    return np.asarray(x, dtype=F32)


def check_finite(x: np.ndarray, what: str = "input") -> None:
    if not np.all(np.isfinite(x)):
        raise InputError(f"{what} contains non-finite values")


def matmul_f32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain f32 matrix product a[n,k] @ b[k,m]."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul_f32 expects rank-2 inputs, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul_f32 inner dims disagree: {a.shape} x {b.shape}")
    return a @ b


def layernorm_f32(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-12,
) -> np.ndarray:
    """Row-wise layer norm with population (biased) variance.

    y = gamma * (x - mean) / sqrt(var + eps) + beta, per row.
    """
    x = as_f32(x)
    gamma = as_f32(gamma)
    beta = as_f32(beta)
    if eps <= 0:
        raise InputError(f"layernorm eps must be positive, got {eps}")
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise ShapeError(
            f"layernorm feature dim {x.shape[-1]} vs gamma {gamma.shape} beta {beta.shape}"
        )
    mean = x.mean(axis=-1, keepdims=True, dtype=F32)
    var = x.var(axis=-1, keepdims=True, dtype=F32)
    norm = (x - mean) / np.sqrt(var + F32(eps))
    return gamma * norm + beta


def softmax_f32(a: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    a = as_f32(a)
    if a.shape[-1] < 1:
        raise ShapeError("softmax needs a non-empty last axis")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True, dtype=F32)


def gelu_f32(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF (erf form)."""
    x = as_f32(x)
    return x * F32(0.5) * (F32(1.0) + erf(x * _INV_SQRT2))
