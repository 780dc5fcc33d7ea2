"""Fused-kernel tests: integer GeMM oracle, epilogues, composition equivalence."""

import numpy as np
import pytest

from quantenc import (
    Epilogue,
    EpilogueKind,
    QScheme,
    QuantTensor,
    apply_epilogue,
    attn_scores,
    dequantize,
    gelu_f32,
    gelu_quant,
    gemm_i8_accum_i32,
    layernorm_f32,
    ln_quant_embed,
    ln_quant_residual,
    quantize,
    softmax_f32,
    softmax_quant,
)
from quantenc.errors import InputError, ShapeError

F32 = np.float32


def gemm_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple-loop integer matmul, independent of the engine path."""
    n, k = a.shape
    _, m = b.shape
    a_rows = a.astype(int).tolist()
    b_cols = b.T.astype(int).tolist()
    out = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        row = a_rows[i]
        for j in range(m):
            col = b_cols[j]
            acc = 0
            for t in range(k):
                acc += row[t] * col[t]
            out[i, j] = acc
    return out.astype(np.int32)


def rand_i8(rng, shape):
    return rng.integers(-127, 128, size=shape).astype(np.int8)


def rand_u8(rng, shape):
    return rng.integers(0, 256, size=shape).astype(np.uint8)


class TestIntegerGemm:
    def test_identity(self):
        a = np.array([[1, 2], [3, 4]], dtype=np.int8)
        eye = np.eye(2, dtype=np.int8)
        np.testing.assert_array_equal(gemm_i8_accum_i32(a, eye), a.astype(np.int32))

    def test_cancellation(self):
        a = np.array([[127, -127]], dtype=np.int8)
        b = np.array([[127], [127]], dtype=np.int8)
        np.testing.assert_array_equal(gemm_i8_accum_i32(a, b), [[0]])

    def test_u8_hand_cases(self):
        a = np.array([[64, 64]], dtype=np.uint8)
        b = np.array([[3], [-3]], dtype=np.int8)
        np.testing.assert_array_equal(gemm_i8_accum_i32(a, b), [[0]])
        a2 = np.array([[2, 3]], dtype=np.uint8)
        b2 = np.array([[5], [7]], dtype=np.int8)
        np.testing.assert_array_equal(gemm_i8_accum_i32(a2, b2), [[31]])

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_triple_loop_bitwise(self, seed):
        rng = np.random.default_rng(seed)
        n, k, m = rng.integers(1, 33, size=3)
        a = rand_u8(rng, (n, k)) if seed % 2 else rand_i8(rng, (n, k))
        b = rand_i8(rng, (k, m))
        np.testing.assert_array_equal(gemm_i8_accum_i32(a, b), gemm_oracle(a, b))

    def test_worst_case_magnitude_is_exact(self):
        # k at the overflow bound with extremal values stays below 2^31
        k = 1 << 15
        a = np.full((1, k), 255, dtype=np.uint8)
        b = np.full((k, 1), 127, dtype=np.int8)
        out = gemm_i8_accum_i32(a, b)
        assert out[0, 0] == 255 * 127 * k
        assert out.dtype == np.int32

    def test_rejects_oversized_inner_dim(self):
        k = (1 << 15) + 1
        with pytest.raises(ShapeError):
            gemm_i8_accum_i32(np.zeros((1, k), dtype=np.int8),
                              np.zeros((k, 1), dtype=np.int8))

    def test_rejects_wrong_dtypes(self):
        with pytest.raises(InputError):
            gemm_i8_accum_i32(np.zeros((2, 2), dtype=np.int32),
                              np.zeros((2, 2), dtype=np.int8))
        with pytest.raises(InputError):
            gemm_i8_accum_i32(np.zeros((2, 2), dtype=np.int8),
                              np.zeros((2, 2), dtype=np.uint8))

    def test_stacked_matches_per_slice(self):
        rng = np.random.default_rng(3)
        a = rand_i8(rng, (2, 3, 4, 5))
        b = rand_i8(rng, (2, 3, 5, 6))
        stacked = gemm_i8_accum_i32(a, b)
        for i in range(2):
            for j in range(3):
                np.testing.assert_array_equal(stacked[i, j],
                                              gemm_i8_accum_i32(a[i, j], b[i, j]))


class TestEpilogue:
    def test_requant_hand_case(self):
        # 2540 * 0.01 * 0.05 = 1.27 -> rounds to 1
        acc = np.array([[2540]], dtype=np.int32)
        e = Epilogue(EpilogueKind.REQUANT_SQ, col_scales=[0.05], row_scales=[0.01],
                     out_scales=F32(1.0))
        out = apply_epilogue(acc, e)
        np.testing.assert_array_equal(out.values, [[1]])
        assert out.scheme is QScheme.PER_TENSOR

    def test_zero_accum_is_zero_under_every_variant(self):
        acc = np.zeros((3, 4), dtype=np.int32)
        for kind in EpilogueKind:
            e = Epilogue(kind, col_scales=np.full(4, 0.3), row_scales=np.full(3, 0.7),
                         out_scales=np.full(4, 0.5) if kind is EpilogueKind.REQUANT_FWQ
                         else F32(0.5))
            out = apply_epilogue(acc, e)
            arr = out if isinstance(out, np.ndarray) else out.values
            np.testing.assert_array_equal(arr, np.zeros((3, 4)))

    def test_dequant_broadcast(self):
        acc = np.array([[1, 2], [3, 4]], dtype=np.int32)
        e = Epilogue(EpilogueKind.DEQUANT_F32, col_scales=[1.0, 1.0],
                     row_scales=[0.5, 0.5])
        np.testing.assert_allclose(apply_epilogue(acc, e),
                                   [[0.5, 1.0], [1.5, 2.0]], rtol=1e-7)

    @pytest.mark.parametrize("seed", range(6))
    def test_requant_is_round_of_dequant(self, seed):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(1, 20, size=2)
        acc = rng.integers(-50000, 50000, size=(n, m)).astype(np.int32)
        cols = rng.uniform(1e-3, 0.1, m).astype(F32)
        rows = rng.uniform(1e-3, 0.1, n).astype(F32)
        bias = rng.standard_normal(m).astype(F32)
        deq = apply_epilogue(acc, Epilogue(EpilogueKind.DEQUANT_F32, col_scales=cols,
                                           row_scales=rows, bias=bias))
        req = apply_epilogue(acc, Epilogue(EpilogueKind.REQUANT_SQ, col_scales=cols,
                                           row_scales=rows, bias=bias, out_scales=F32(1.0)))
        expected = np.clip(np.rint(deq), -127, 127).astype(np.int8)
        np.testing.assert_array_equal(req.values, expected)

    def test_scale_length_mismatch(self):
        acc = np.zeros((2, 3), dtype=np.int32)
        with pytest.raises(ShapeError):
            apply_epilogue(acc, Epilogue(EpilogueKind.DEQUANT_F32, col_scales=[1.0, 1.0]))
        with pytest.raises(ShapeError):
            apply_epilogue(acc, Epilogue(EpilogueKind.DEQUANT_F32,
                                         col_scales=np.ones(3), row_scales=np.ones(5)))

    def test_rejects_nonpositive_scales(self):
        with pytest.raises(InputError):
            Epilogue(EpilogueKind.DEQUANT_F32, col_scales=[0.0, 1.0])


class TestLnQuantEmbed:
    def test_two_point_rows(self):
        # zero token input; position + type sum to rows [1, 3]; LN -> [-1, 1]
        n, d = 4, 2
        xt = quantize(np.zeros((n, d), dtype=F32), QScheme.PER_ROW)
        xp = np.tile(np.array([0.5, 1.5], dtype=F32), (n, 1))
        xs = xp.copy()
        out = ln_quant_embed(xt, xp, xs, np.ones(d, dtype=F32), np.zeros(d, dtype=F32), 1e-12)
        np.testing.assert_allclose(out.scales, np.full(n, 1.0 / 127.0), rtol=1e-5)
        np.testing.assert_array_equal(out.values, np.tile([-127, 127], (n, 1)))

    def test_constant_rows_fall_back(self):
        n, d = 3, 5
        xt = quantize(np.full((n, d), 2.0, dtype=F32), QScheme.PER_ROW)
        zero = np.zeros((n, d), dtype=F32)
        out = ln_quant_embed(xt, zero, zero, np.ones(d, dtype=F32),
                             np.zeros(d, dtype=F32), 1e-12)
        np.testing.assert_array_equal(out.values, np.zeros((n, d), dtype=np.int8))
        np.testing.assert_array_equal(out.scales, np.ones(n, dtype=F32))

    @pytest.mark.parametrize("seed", range(20))
    def test_bitwise_equals_unfused_composition(self, seed):
        rng = np.random.default_rng(seed)
        n, d = rng.integers(1, 65, size=2)
        xt = quantize((rng.standard_normal((n, d)) * 2).astype(F32), QScheme.PER_ROW)
        xp = rng.standard_normal((n, d)).astype(F32)
        xs = rng.standard_normal((n, d)).astype(F32)
        gamma = rng.standard_normal(d).astype(F32)
        beta = rng.standard_normal(d).astype(F32)
        fused = ln_quant_embed(xt, xp, xs, gamma, beta, 1e-12)
        ref = quantize(layernorm_f32(dequantize(xt) + xp + xs, gamma, beta, 1e-12),
                       QScheme.PER_ROW)
        np.testing.assert_array_equal(fused.values, ref.values)
        np.testing.assert_array_equal(fused.scales, ref.scales)

    def test_scheme_mismatch_rejected(self):
        xt = quantize(np.ones((2, 2), dtype=F32), QScheme.PER_TENSOR)
        z = np.zeros((2, 2), dtype=F32)
        with pytest.raises(InputError):
            ln_quant_embed(xt, z, z, np.ones(2), np.zeros(2), 1e-12)


class TestLnQuantResidual:
    def test_zero_inputs(self):
        z = np.zeros((2, 3), dtype=F32)
        out = ln_quant_residual(z, z, np.ones(3, dtype=F32), np.zeros(3, dtype=F32),
                                1e-12, out_int8=True)
        np.testing.assert_array_equal(out.values, np.zeros((2, 3), dtype=np.int8))
        np.testing.assert_array_equal(out.scales, np.ones(2, dtype=F32))

    def test_fp_passthrough_is_plain_layernorm(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 8)).astype(F32)
        b = rng.standard_normal((4, 8)).astype(F32)
        gamma = rng.standard_normal(8).astype(F32)
        beta = rng.standard_normal(8).astype(F32)
        out = ln_quant_residual(a, b, gamma, beta, 1e-12, out_int8=False)
        np.testing.assert_array_equal(out, layernorm_f32(a + b, gamma, beta, 1e-12))

    @pytest.mark.parametrize("seed", range(20))
    def test_bitwise_equals_unfused_composition(self, seed):
        rng = np.random.default_rng(seed + 50)
        n, d = rng.integers(1, 65, size=2)
        x_in = quantize((rng.standard_normal((n, d)) * 3).astype(F32), QScheme.PER_ROW)
        x_res = quantize((rng.standard_normal((n, d)) * 3).astype(F32), QScheme.PER_COL)
        gamma = rng.standard_normal(d).astype(F32)
        beta = rng.standard_normal(d).astype(F32)
        fused = ln_quant_residual(x_in, x_res, gamma, beta, 1e-12, out_int8=True)
        ref = quantize(layernorm_f32(dequantize(x_in) + dequantize(x_res),
                                     gamma, beta, 1e-12), QScheme.PER_ROW)
        np.testing.assert_array_equal(fused.values, ref.values)
        np.testing.assert_array_equal(fused.scales, ref.scales)

    def test_mixed_fp_and_quant_within_round_trip_bound(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((6, 10)).astype(F32)
        b_fp = rng.standard_normal((6, 10)).astype(F32)
        b_q = quantize(b_fp, QScheme.PER_COL)
        gamma = np.ones(10, dtype=F32)
        beta = np.zeros(10, dtype=F32)
        mixed = ln_quant_residual(a, b_q, gamma, beta, 1e-12, out_int8=False)
        ref = ln_quant_residual(a, b_fp, gamma, beta, 1e-12, out_int8=False)
        # inputs differ by at most half a quantization step per element
        assert np.abs(mixed - ref).max() < float(b_q.scales.max())

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ln_quant_residual(np.zeros((2, 3), dtype=F32), np.zeros((3, 3), dtype=F32),
                              np.ones(3), np.zeros(3), 1e-12, out_int8=False)


class TestSoftmaxQuant:
    def test_uniform_row(self):
        out = softmax_quant(np.zeros((1, 4), dtype=F32), 1.0 / 255.0)
        np.testing.assert_array_equal(out.values, [[64, 64, 64, 64]])

    def test_one_hot_saturates(self):
        a = np.array([[50.0, 0.0, 0.0]], dtype=F32)
        out = softmax_quant(a, 1.0 / 255.0)
        np.testing.assert_array_equal(out.values, [[255, 0, 0]])

    @pytest.mark.parametrize("seed", range(10))
    def test_dequantized_rows_sum_near_one(self, seed):
        rng = np.random.default_rng(seed)
        s = int(rng.integers(2, 32))
        a = (rng.standard_normal((4, s)) * 5).astype(F32)
        p_scale = 1.0 / 255.0
        out = softmax_quant(a, p_scale)
        sums = dequantize(out).sum(axis=-1)
        assert np.all(np.abs(sums - 1.0) <= p_scale * s / 2 + 1e-6)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_composition_within_one_level(self, seed):
        rng = np.random.default_rng(seed + 200)
        n, s = rng.integers(1, 65, size=2)
        a = (rng.standard_normal((n, s)) * 4).astype(F32)
        p_scale = float(rng.uniform(0.5, 1.0)) / 255.0
        fused = softmax_quant(a, p_scale)
        ref = quantize(softmax_f32(a), QScheme.ASYM_U8, scales=p_scale)
        diff = fused.values.astype(int) - ref.values.astype(int)
        assert np.abs(diff).max() <= 1

    def test_rejects_bad_scale(self):
        with pytest.raises(InputError):
            softmax_quant(np.zeros((1, 2), dtype=F32), 0.0)


class TestGeluQuant:
    def test_zero_input(self):
        out = gelu_quant(np.zeros((2, 3), dtype=F32), np.full(3, 0.1, dtype=F32))
        np.testing.assert_array_equal(out.values, np.zeros((2, 3), dtype=np.int8))

    def test_unit_point_hits_full_scale(self):
        g1 = float(gelu_f32(np.array(1.0, dtype=F32)))
        out = gelu_quant(np.array([[1.0]], dtype=F32), np.array([g1 / 127.0], dtype=F32))
        np.testing.assert_array_equal(out.values, [[127]])

    def test_out_of_range_clamps_without_error(self):
        out = gelu_quant(np.array([[10.0]], dtype=F32), np.array([0.001], dtype=F32))
        np.testing.assert_array_equal(out.values, [[127]])

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_composition_within_one_level(self, seed):
        rng = np.random.default_rng(seed + 300)
        n, d = rng.integers(1, 65, size=2)
        x = (rng.standard_normal((n, d)) * 3).astype(F32)
        scales = rng.uniform(0.01, 0.1, d).astype(F32)
        fused = gelu_quant(x, scales)
        ref = quantize(gelu_f32(x), QScheme.PER_COL, scales=scales)
        diff = fused.values.astype(int) - ref.values.astype(int)
        assert np.abs(diff).max() <= 1

    def test_scale_length_mismatch(self):
        with pytest.raises(ShapeError):
            gelu_quant(np.zeros((2, 3), dtype=F32), np.ones(2, dtype=F32))


class TestAttnScores:
    def test_d_tilde_arithmetic(self):
        # s_q s_k / sqrt(d_head) = 0.1 * 0.2 / 8
        assert F32(0.1) * F32(0.2) / F32(np.sqrt(64)) == pytest.approx(0.0025, rel=1e-6)

    def test_rank_one_diagonal(self):
        vals = np.zeros((3, 4), dtype=np.int8)
        vals[1, 2] = 11
        q = QuantTensor(vals, QScheme.PER_TENSOR, F32(0.5))
        a = attn_scores(q, q, d_tilde=0.25)
        expected = np.zeros((3, 3), dtype=F32)
        expected[1, 1] = 0.25 * 11 * 11
        np.testing.assert_array_equal(a, expected)

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_dequantized_composition(self, seed):
        # float64 oracle so the reference is more precise than the f32 path
        rng = np.random.default_rng(seed + 400)
        n, dh = rng.integers(1, 65, size=2)
        sq, sk = rng.uniform(0.01, 0.2, size=2)
        xq = QuantTensor(rand_i8(rng, (n, dh)), QScheme.PER_TENSOR, F32(sq))
        xk = QuantTensor(rand_i8(rng, (n, dh)), QScheme.PER_TENSOR, F32(sk))
        d_tilde = float(F32(sq) * F32(sk) / F32(np.sqrt(dh)))
        fused = attn_scores(xq, xk, d_tilde)
        q64 = xq.values.astype(np.float64) * float(xq.scales)
        k64 = xk.values.astype(np.float64) * float(xk.scales)
        ref = (q64 @ k64.T) / np.sqrt(dh)
        rel = np.linalg.norm(fused - ref) / max(np.linalg.norm(ref), 1e-30)
        assert rel <= 1e-6

    def test_additive_mask(self):
        rng = np.random.default_rng(7)
        xq = QuantTensor(rand_i8(rng, (3, 4)), QScheme.PER_TENSOR, F32(0.1))
        mask = np.array([0.0, -1e9, 0.0], dtype=F32)
        a = attn_scores(xq, xq, 0.01, mask)
        base = attn_scores(xq, xq, 0.01)
        np.testing.assert_array_equal(a[:, 1], base[:, 1] + F32(-1e9))
        np.testing.assert_array_equal(a[:, [0, 2]], base[:, [0, 2]])

    def test_head_dim_mismatch(self):
        q = QuantTensor(np.zeros((2, 3), dtype=np.int8), QScheme.PER_TENSOR, F32(1.0))
        k = QuantTensor(np.zeros((2, 4), dtype=np.int8), QScheme.PER_TENSOR, F32(1.0))
        with pytest.raises(ShapeError):
            attn_scores(q, k, 1.0)
