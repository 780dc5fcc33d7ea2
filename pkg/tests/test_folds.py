"""Scale-folding tests: hand cases, FP algebraic identities, quantized pipelines."""

import numpy as np
import pytest

from quantenc import (
    QScheme,
    dequantize,
    fold_attn_out_weight,
    fold_fc2_weight,
    fold_qkv_weight,
    gemm_i8_accum_i32,
    quantize,
    quantize_weight_per_column,
)
from quantenc.errors import InputError, ShapeError

F32 = np.float32


def rel_fro(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-30)


class TestFoldQkv:
    def test_unit_scale_is_plain_quantization(self):
        rng = np.random.default_rng(0)
        w = rng.standard_normal((6, 6)).astype(F32)
        folded = fold_qkv_weight(w, 1.0)
        plain = quantize_weight_per_column(w)
        np.testing.assert_array_equal(folded.values, plain.values)
        np.testing.assert_array_equal(folded.col_scales, plain.col_scales)

    def test_scalar_hand_case(self):
        folded = fold_qkv_weight(np.array([[2.0]], dtype=F32), 2.0)
        assert folded.col_scales[0] == pytest.approx(1.0 / 127.0, rel=1e-6)
        assert folded.values[0, 0] == 127

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(InputError):
            fold_qkv_weight(np.ones((2, 2), dtype=F32), 0.0)

    @pytest.mark.parametrize("seed", range(25))
    def test_fp_identity(self, seed):
        """Folded GeMM X @ (W/s) equals dequant-then-requant form (X @ W)/s in FP."""
        rng = np.random.default_rng(seed)
        n, d = rng.integers(2, 33, size=2)
        x = rng.standard_normal((n, d)).astype(F32)
        w = rng.standard_normal((d, d)).astype(F32)
        s = F32(rng.uniform(0.01, 2.0))
        assert rel_fro(x @ (w / s), (x @ w) / s) <= 1e-6

    @pytest.mark.parametrize("seed", range(25))
    def test_quantized_pipeline_within_one_level(self, seed):
        """Fused int8 GeMM + Round vs dequant -> FP GeMM -> Round, same folded weight."""
        rng = np.random.default_rng(seed + 1000)
        n = k = m = 8
        x_fp = rng.standard_normal((n, k)).astype(F32)
        w = rng.standard_normal((k, m)).astype(F32)
        xq = quantize(x_fp, QScheme.PER_ROW)
        x_deq = dequantize(xq)
        s_target = float(np.abs(x_deq @ w).max() / 127.0)
        wq = fold_qkv_weight(w, s_target)

        acc = gemm_i8_accum_i32(xq.values, wq.values)
        fused = np.clip(np.rint(acc.astype(F32) * xq.scales[:, None]
                                * wq.col_scales[None, :]), -127, 127)
        w_recon = wq.values.astype(F32) * wq.col_scales[None, :]
        unfused = np.clip(np.rint(x_deq @ w_recon), -127, 127)
        assert np.abs(fused - unfused).max() <= 1

    @pytest.mark.parametrize("seed", range(25))
    def test_round_reproduces_true_weight_quantization_statistically(self, seed):
        """Against the unquantized weight the extra error is the weight's own
        rounding: almost every element lands within one level."""
        rng = np.random.default_rng(seed + 2000)
        n = k = m = 8
        x_fp = rng.standard_normal((n, k)).astype(F32)
        w = rng.standard_normal((k, m)).astype(F32)
        xq = quantize(x_fp, QScheme.PER_ROW)
        x_deq = dequantize(xq)
        s_target = float(np.abs(x_deq @ w).max() / 127.0)
        wq = fold_qkv_weight(w, s_target)
        acc = gemm_i8_accum_i32(xq.values, wq.values)
        fused = np.clip(np.rint(acc.astype(F32) * xq.scales[:, None]
                                * wq.col_scales[None, :]), -127, 127)
        ref = np.clip(np.rint((x_deq @ w) / F32(s_target)), -127, 127)
        diff = np.abs(fused - ref)
        assert diff.max() <= 2
        assert (diff <= 1).mean() >= 0.99


class TestFoldAttnOut:
    def test_hand_case(self):
        folded = fold_attn_out_weight(np.array([[2.0, 4.0]], dtype=F32),
                                      np.array([0.5], dtype=F32),
                                      np.array([1.0, 2.0], dtype=F32))
        np.testing.assert_allclose(folded.col_scales, [1.0 / 127.0] * 2, rtol=1e-6)
        np.testing.assert_array_equal(folded.values, [[127, 127]])

    def test_unit_scales_are_plain_quantization(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((5, 5)).astype(F32)
        ones = np.ones(5, dtype=F32)
        folded = fold_attn_out_weight(w, ones, ones)
        plain = quantize_weight_per_column(w)
        np.testing.assert_array_equal(folded.values, plain.values)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fold_attn_out_weight(np.ones((3, 3), dtype=F32), np.ones(2, dtype=F32),
                                 np.ones(3, dtype=F32))

    @pytest.mark.parametrize("seed", range(25))
    def test_fp_identity(self, seed):
        """X_int8 @ (diag(s_in) W diag(1/s_out)) == (X_int8 diag(s_in)) @ W diag(1/s_out)."""
        rng = np.random.default_rng(seed + 10)
        n, d = rng.integers(2, 33, size=2)
        x = rng.integers(-127, 128, size=(n, d)).astype(F32)
        w = rng.standard_normal((d, d)).astype(F32)
        s_in = rng.uniform(0.01, 1.0, d).astype(F32)
        s_out = rng.uniform(0.01, 1.0, d).astype(F32)
        folded_fp = s_in[:, None] * w / s_out[None, :]
        left = x @ folded_fp
        right = (x * s_in[None, :]) @ w / s_out[None, :]
        assert rel_fro(left, right) <= 1e-6

    @pytest.mark.parametrize("seed", range(15))
    def test_quantized_pipeline_within_one_level(self, seed):
        rng = np.random.default_rng(seed + 20)
        n, d = 8, 8
        x_int8 = rng.integers(-127, 128, size=(n, d)).astype(np.int8)
        w = rng.standard_normal((d, d)).astype(F32)
        s_in = rng.uniform(0.005, 0.02, d).astype(F32)
        x_fp = x_int8.astype(F32) * s_in[None, :]
        s_out = (np.abs(x_fp @ w).max(axis=0) / 127.0 + 1e-6).astype(F32)
        wq = fold_attn_out_weight(w, s_in, s_out)
        acc = gemm_i8_accum_i32(x_int8, wq.values)
        fused = np.clip(np.rint(acc.astype(F32) * wq.col_scales[None, :]), -127, 127)
        w_recon = wq.values.astype(F32) * wq.col_scales[None, :]
        unfused = np.clip(np.rint(x_int8.astype(F32) @ w_recon), -127, 127)
        assert np.abs(fused - unfused).max() <= 1


class TestFoldFc2:
    def test_hand_case(self):
        folded_fp = F32(0.25) * np.array([[4.0]], dtype=F32) / F32(0.5)
        np.testing.assert_allclose(folded_fp, [[2.0]])
        qw = fold_fc2_weight(np.array([[4.0]], dtype=F32),
                             np.array([0.25], dtype=F32), np.array([0.5], dtype=F32))
        assert qw.col_scales[0] == pytest.approx(2.0 / 127.0, rel=1e-6)
        assert qw.values[0, 0] == 127

    def test_unit_scales(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((4, 6)).astype(F32)
        folded = fold_fc2_weight(w, np.ones(4, dtype=F32), np.ones(6, dtype=F32))
        plain = quantize_weight_per_column(w)
        np.testing.assert_array_equal(folded.values, plain.values)

    @pytest.mark.parametrize("seed", range(25))
    def test_fp_identity_rectangular(self, seed):
        rng = np.random.default_rng(seed + 30)
        dff, d = 16, 8
        a = rng.integers(-127, 128, size=(5, dff)).astype(F32)
        w = rng.standard_normal((dff, d)).astype(F32)
        s_a = rng.uniform(0.01, 1.0, dff).astype(F32)
        s_x2 = rng.uniform(0.01, 1.0, d).astype(F32)
        left = a @ (s_a[:, None] * w / s_x2[None, :])
        right = (a * s_a[None, :]) @ w / s_x2[None, :]
        assert rel_fro(left, right) <= 1e-6
