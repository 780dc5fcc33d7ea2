"""Encoder building blocks: mode dispatch, scale folding, module forwards.

Six operator slots can independently run in INT8 or FP32: embedding,
the QKV projections, the attention GeMMs (scores and context), the
attention output projection, and the two MLP projections.  The named
presets select increasingly aggressive quantization:

=======  =========  ====  =====  ============  ====  ====
mode     Embedding  QKV   Attn.  Attn. Output  FC1   FC2
=======  =========  ====  =====  ============  ====  ====
FP32     fp         fp    fp     fp            fp    fp
M1       int8       int8  fp     fp            int8  fp
M2       int8       int8  int8   int8          int8  fp
M3       int8       int8  int8   int8          int8  int8
=======  =========  ====  =====  ============  ====  ====

Weight folding bakes the calibrated activation scales into the FP weight
before per-column quantization (query example: W/s_q), so the integer
GeMM epilogues reduce to a single Round.  Layer-norm outputs are
token-quantized only when the consuming GeMM slot runs in INT8.

Quantized layers are immutable once built; forward passes over distinct
inputs may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationTable, site_id
from .errors import CalibrationError, InputError, ModeError, ShapeError
from .kernels import (
    Epilogue,
    EpilogueKind,
    apply_epilogue,
    attn_scores,
    gelu_quant,
    gemm_i8_accum_i32,
    ln_quant_embed,
    ln_quant_residual,
    softmax_quant,
)
from .schemes import (
    I8_MAX,
    QScheme,
    QuantTensor,
    dequantize,
    quantize,
    quantize_weight_per_column,
    QuantizedWeight,
)
from .tensor import F32, gelu_f32, layernorm_f32, softmax_f32

MASK_FILL = np.float32(-1e9)


# ---------------------------------------------------------------------------
# mode configuration


@dataclass(frozen=True)
class ModeConfig:
    """Which of the six operator slots run in INT8 (True) vs FP32."""

    embedding: bool = False
    qkv_gemm: bool = False
    attn: bool = False
    attn_output: bool = False
    fc1: bool = False
    fc2: bool = False

    SLOTS = ("embedding", "qkv_gemm", "attn", "attn_output", "fc1", "fc2")

    @property
    def all_fp(self) -> bool:
        return not any(getattr(self, s) for s in self.SLOTS)

    def to_json_dict(self) -> dict:
        return {s: ("int8" if getattr(self, s) else "fp") for s in self.SLOTS}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModeConfig":
        flags = {}
        for slot in cls.SLOTS:
            if slot not in doc:
                raise ModeError(f"mode config missing slot {slot!r}")
            v = doc[slot]
            if v not in ("int8", "fp"):
                raise ModeError(f"slot {slot!r} must be 'int8' or 'fp', got {v!r}")
            flags[slot] = v == "int8"
        return cls(**flags)


_PRESETS = {
    "fp32": ModeConfig(),
    "m1": ModeConfig(embedding=True, qkv_gemm=True, fc1=True),
    "m2": ModeConfig(embedding=True, qkv_gemm=True, attn=True, attn_output=True, fc1=True),
    "m3": ModeConfig(embedding=True, qkv_gemm=True, attn=True, attn_output=True,
                     fc1=True, fc2=True),
}


def mode_from_name(name: str) -> ModeConfig:
    try:
        return _PRESETS[name.lower()]
    except KeyError:
        raise ModeError(f"unknown mode {name!r} (expected FP32, M1, M2 or M3)") from None


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class EmbeddingParams:
    token_table: np.ndarray     # [vocab, d]
    position_table: np.ndarray  # [max_positions, d]
    type_table: np.ndarray      # [type_vocab, d]
    ln_gamma: np.ndarray
    ln_beta: np.ndarray


@dataclass(frozen=True)
class LayerParams:
    """FP32 master weights of one encoder layer (Y = X @ W convention)."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    w_1: np.ndarray
    b_1: np.ndarray
    w_2: np.ndarray
    b_2: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        if self.w_q.shape != (d, d) or self.w_o.shape != (d, d):
            raise ShapeError("attention weights must be square [d, d]")
        if d % self.n_heads != 0:
            raise ShapeError(f"d_model {d} not divisible by {self.n_heads} heads")
        if self.w_1.shape[0] != d or self.w_2.shape != (self.w_1.shape[1], d):
            raise ShapeError(f"MLP weight shapes disagree: {self.w_1.shape}, {self.w_2.shape}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_ff(self) -> int:
        return self.w_1.shape[1]


# ---------------------------------------------------------------------------
# scale folding


def fold_qkv_weight(w: np.ndarray, s_target: float) -> QuantizedWeight:
    """Fold a static projection output scale into the weight, then quantize.

    Downstream the integer GeMM epilogue only needs Round: the produced
    int8 values already live at scale ``s_target``.
    """
    if s_target <= 0:
        raise InputError(f"target scale must be positive, got {s_target}")
    return quantize_weight_per_column(np.asarray(w, dtype=F32) / F32(s_target))


def fold_attn_out_weight(w_o: np.ndarray, s_attn: np.ndarray, s_o: np.ndarray) -> QuantizedWeight:
    """Fold context scales (rows) and output scales (columns) into W_o."""
    w_o = np.asarray(w_o, dtype=F32)
    s_attn = np.asarray(s_attn, dtype=F32)
    s_o = np.asarray(s_o, dtype=F32)
    if s_attn.shape != (w_o.shape[0],) or s_o.shape != (w_o.shape[1],):
        raise ShapeError(
            f"fold scales {s_attn.shape}/{s_o.shape} do not match weight {w_o.shape}"
        )
    if np.any(s_attn <= 0) or np.any(s_o <= 0):
        raise InputError("fold scales must be positive")
    return quantize_weight_per_column(s_attn[:, None] * w_o / s_o[None, :])


def fold_fc2_weight(w_2: np.ndarray, s_a: np.ndarray, s_x2: np.ndarray) -> QuantizedWeight:
    """Fold GELU-output scales (rows) and FC2-output scales (columns) into W_2."""
    return fold_attn_out_weight(w_2, s_a, s_x2)


# ---------------------------------------------------------------------------
# execution trace (census + optional tensor capture for tests)


class OpTrace:
    """Records GeMM invocations per slot site, optionally snapshots tensors."""

    GEMM_SITES = ("qkv", "attn_scores", "attn_pv", "attn_out", "fc1", "fc2")

    def __init__(self, capture: bool = False):
        self.gemms: list[tuple[int, str, str]] = []  # (layer, site, "int8"|"fp")
        self.events: list[tuple[str, str]] = []
        self.capture = capture
        self.tensors: dict[str, np.ndarray] = {}

    def gemm(self, layer: int, site: str, kind: str) -> None:
        self.gemms.append((layer, site, kind))

    def event(self, name: str, kind: str) -> None:
        self.events.append((name, kind))

    def snap(self, name: str, value) -> None:
        if self.capture:
            arr = value.values if isinstance(value, QuantTensor) else value
            self.tensors[name] = np.array(arr, copy=True)

    def int8_sites(self) -> set[tuple[int, str]]:
        return {(layer, site) for layer, site, kind in self.gemms if kind == "int8"}

    def count(self, kind: str) -> int:
        return sum(1 for _, _, k in self.gemms if k == kind)


# ---------------------------------------------------------------------------
# calibration slice for one layer


@dataclass(frozen=True)
class LayerScales:
    q: float | None = None
    k: float | None = None
    v: float | None = None
    p: float | None = None
    attn: np.ndarray | None = None
    o: np.ndarray | None = None
    a: np.ndarray | None = None
    x2: np.ndarray | None = None


def required_sites(mode: ModeConfig, layer: int) -> list[str]:
    """Calibration sites an INT8 slot combination needs for one layer."""
    syms: list[str] = []
    if mode.attn:
        syms += ["S_q", "S_k", "S_v", "S_p", "S_attn"]
    if mode.attn_output:
        syms += ["S_attn", "S_o"]
    if mode.fc2:
        syms += ["S_a", "S_x2"]
    seen: list[str] = []
    for s in syms:
        if s not in seen:
            seen.append(s)
    return [site_id(layer, s) for s in seen]


def layer_scales_from_table(
    table: CalibrationTable | None, mode: ModeConfig, layer: int, d_model: int, d_ff: int
) -> LayerScales:
    sites = required_sites(mode, layer)
    if not sites:
        return LayerScales()
    if table is None:
        raise CalibrationError(
            f"mode needs calibration sites {', '.join(sites)} but no table was given"
        )
    table.require(sites)
    get = lambda sym: table.scalar(site_id(layer, sym))
    getv = lambda sym, dim: table.vector(site_id(layer, sym), dim)
    return LayerScales(
        q=float(get("S_q")) if mode.attn else None,
        k=float(get("S_k")) if mode.attn else None,
        v=float(get("S_v")) if mode.attn else None,
        p=float(get("S_p")) if mode.attn else None,
        attn=getv("S_attn", d_model) if (mode.attn or mode.attn_output) else None,
        o=getv("S_o", d_model) if mode.attn_output else None,
        a=getv("S_a", d_ff) if mode.fc2 else None,
        x2=getv("S_x2", d_model) if mode.fc2 else None,
    )


# ---------------------------------------------------------------------------
# built layers


@dataclass(frozen=True)
class QuantizedLayer:
    """One encoder layer prepared for a fixed mode.

    Folded/quantized weights exist only for the slots the mode runs in
    INT8; the FP32 masters are always retained for fallback slots.
    """

    params: LayerParams
    mode: ModeConfig
    scales: LayerScales
    ln_eps: float
    qkv: dict | None = None          # name -> (QuantizedWeight, epilogue bias)
    wo: tuple | None = None          # (QuantizedWeight, epilogue bias)
    w1: tuple | None = None
    w2: tuple | None = None
    d_tilde: float | None = None     # s_q * s_k / sqrt(head_dim)
    pv_mult: np.ndarray | None = None  # s_p * s_v / s_attn, length d_model


def build_quantized_layer(
    params: LayerParams,
    mode: ModeConfig,
    table: CalibrationTable | None,
    layer: int,
    ln_eps: float,
) -> QuantizedLayer:
    sc = layer_scales_from_table(table, mode, layer, params.d_model, params.d_ff)
    qkv = wo = w1 = w2 = None
    d_tilde = pv_mult = None

    if mode.qkv_gemm:
        qkv = {}
        triples = (("q", params.w_q, params.b_q, sc.q),
                   ("k", params.w_k, params.b_k, sc.k),
                   ("v", params.w_v, params.b_v, sc.v))
        for name, w, b, s_t in triples:
            if mode.attn:
                qw = fold_qkv_weight(w, s_t)
                bias = np.asarray(b, dtype=F32) / F32(s_t)
            else:
                # attention runs in FP: dequant epilogue, no folding, static
                # scales unused
                qw = quantize_weight_per_column(w)
                bias = np.asarray(b, dtype=F32)
            qkv[name] = (qw, bias)

    if mode.attn:
        head_dim = params.d_model // params.n_heads
        d_tilde = float(F32(sc.q) * F32(sc.k) / F32(np.sqrt(head_dim)))
        pv_mult = (F32(sc.p) * F32(sc.v)) / np.asarray(sc.attn, dtype=F32)

    if mode.attn_output:
        wo_q = fold_attn_out_weight(params.w_o, sc.attn, sc.o)
        wo = (wo_q, np.asarray(params.b_o, dtype=F32) / np.asarray(sc.o, dtype=F32))

    if mode.fc1:
        w1 = (quantize_weight_per_column(params.w_1), np.asarray(params.b_1, dtype=F32))

    if mode.fc2:
        w2_q = fold_fc2_weight(params.w_2, sc.a, sc.x2)
        w2 = (w2_q, np.asarray(params.b_2, dtype=F32) / np.asarray(sc.x2, dtype=F32))

    return QuantizedLayer(params=params, mode=mode, scales=sc, ln_eps=ln_eps,
                          qkv=qkv, wo=wo, w1=w1, w2=w2,
                          d_tilde=d_tilde, pv_mult=pv_mult)


# ---------------------------------------------------------------------------
# forward helpers


def dequant_maybe(x) -> np.ndarray:
    if isinstance(x, QuantTensor):
        return dequantize(x)
    return np.asarray(x, dtype=F32)


def ensure_token_quant(x) -> QuantTensor:
    """Token-quantize f32 input on the fly; pass token-quantized input through."""
    if isinstance(x, QuantTensor):
        if x.scheme is not QScheme.PER_ROW:
            raise InputError(f"expected token-quantized input, got {x.scheme}")
        return x
    return quantize(np.asarray(x, dtype=F32), QScheme.PER_ROW)


def _ensure_static_quant(x, scale: float) -> QuantTensor:
    if isinstance(x, QuantTensor):
        return x
    return quantize(np.asarray(x, dtype=F32), QScheme.PER_TENSOR, scales=scale)


def _ensure_feature_quant(x, scales: np.ndarray) -> QuantTensor:
    if isinstance(x, QuantTensor):
        return x
    return quantize(np.asarray(x, dtype=F32), QScheme.PER_COL, scales=scales)


def _heads(x: np.ndarray, batch: int, seq: int, n_heads: int) -> np.ndarray:
    """[batch*seq, d] -> [batch, heads, seq, head_dim], any dtype."""
    d = x.shape[-1]
    return x.reshape(batch, seq, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _unheads(x: np.ndarray, batch: int, seq: int) -> np.ndarray:
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(batch * seq, h * dh)


# ---------------------------------------------------------------------------
# embedding


@dataclass(frozen=True)
class QuantizedEmbedding:
    """Token table pre-quantized row-wise at model-load time."""

    token_values: np.ndarray  # int8 [vocab, d]
    token_scales: np.ndarray  # f32 [vocab]
    fp: EmbeddingParams


def quantize_embedding(emb: EmbeddingParams) -> QuantizedEmbedding:
    q = quantize(np.asarray(emb.token_table, dtype=F32), QScheme.PER_ROW)
    return QuantizedEmbedding(token_values=q.values, token_scales=q.scales, fp=emb)


def embedding_forward(
    ids: np.ndarray,
    emb,
    ln_eps: float,
    out_int8: bool,
    trace: OpTrace | None = None,
    observers=None,
):
    """Token + position + type lookup followed by the embedding layer norm.

    ``ids`` is [batch, seq]; the result is flattened to [batch*seq, d],
    token-quantized when ``out_int8``.  Type ids are all zero (single
    segment inputs).
    """
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ShapeError(f"ids must be [batch, seq], got {ids.shape}")
    batch, seq = ids.shape
    fp = emb.fp if isinstance(emb, QuantizedEmbedding) else emb
    vocab = fp.token_table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise InputError(f"token id out of range [0, {vocab})")
    if seq > fp.position_table.shape[0]:
        raise ShapeError(f"sequence length {seq} exceeds {fp.position_table.shape[0]} positions")

    flat = ids.reshape(-1)
    xp = np.tile(fp.position_table[:seq], (batch, 1)).astype(F32)
    xs = np.broadcast_to(fp.type_table[0], (batch * seq, fp.type_table.shape[1])).astype(F32)

    if isinstance(emb, QuantizedEmbedding):
        if trace:
            trace.event("emb.lookup", "int8")
        xt = QuantTensor(emb.token_values[flat], QScheme.PER_ROW, emb.token_scales[flat])
        if out_int8:
            out = ln_quant_embed(xt, xp, xs, fp.ln_gamma, fp.ln_beta, ln_eps)
        else:
            out = layernorm_f32(dequantize(xt) + xp + xs, fp.ln_gamma, fp.ln_beta, ln_eps)
        if trace and trace.capture:
            trace.snap("emb_ln_fp", layernorm_f32(dequantize(xt) + xp + xs,
                                                  fp.ln_gamma, fp.ln_beta, ln_eps))
    else:
        if trace:
            trace.event("emb.lookup", "fp")
        xt_f = fp.token_table[flat].astype(F32)
        summed = xt_f + xp + xs
        out = layernorm_f32(summed, fp.ln_gamma, fp.ln_beta, ln_eps)
        if observers is not None:
            observers.observe("emb.S_emb_hint", out)
        if trace and trace.capture:
            trace.snap("emb_ln_fp", out)
        if out_int8:
            out = quantize(out, QScheme.PER_ROW)
    if trace:
        trace.snap("emb_out", out)
    return out


# ---------------------------------------------------------------------------
# attention module


def attention_forward(
    x_in,
    layer: QuantizedLayer,
    batch: int,
    seq: int,
    add_mask: np.ndarray | None,
    layer_idx: int = 0,
    trace: OpTrace | None = None,
    observers=None,
):
    """Self-attention block: QKV, scores, softmax, context, output, residual LN.

    ``x_in`` is [batch*seq, d] as a token-quantized tensor or f32 array;
    the output has the same kind rule (int8 iff FC1 runs in INT8).
    ``add_mask`` is an additive [batch, seq] f32 mask over key positions.
    """
    p = layer.params
    mode = layer.mode
    sc = layer.scales
    d, n_heads = p.d_model, p.n_heads
    head_dim = d // n_heads
    mask4 = None if add_mask is None else np.asarray(add_mask, dtype=F32)[:, None, None, :]

    # QKV projections
    proj = {}
    if mode.qkv_gemm:
        xq_t = ensure_token_quant(x_in)
        for name in ("q", "k", "v"):
            qw, bias = layer.qkv[name]
            acc = gemm_i8_accum_i32(xq_t.values, qw.values)
            if trace:
                trace.gemm(layer_idx, "qkv", "int8")
            if mode.attn:
                s_t = {"q": sc.q, "k": sc.k, "v": sc.v}[name]
                e = Epilogue(EpilogueKind.REQUANT_SQ, col_scales=qw.col_scales,
                             row_scales=xq_t.scales, bias=bias, out_scales=s_t)
            else:
                e = Epilogue(EpilogueKind.DEQUANT_F32, col_scales=qw.col_scales,
                             row_scales=xq_t.scales, bias=bias)
            proj[name] = apply_epilogue(acc, e)
    else:
        x_f = dequant_maybe(x_in)
        for name, w, b in (("q", p.w_q, p.b_q), ("k", p.w_k, p.b_k), ("v", p.w_v, p.b_v)):
            if trace:
                trace.gemm(layer_idx, "qkv", "fp")
            proj[name] = x_f @ np.asarray(w, dtype=F32) + np.asarray(b, dtype=F32)
        if observers is not None:
            for name in ("q", "k", "v"):
                observers.observe(site_id(layer_idx, f"S_{name}"), proj[name])
        if mode.attn:
            # static boundary quantization for custom slot combinations
            for name, s_t in (("q", sc.q), ("k", sc.k), ("v", sc.v)):
                proj[name] = _ensure_static_quant(proj[name], s_t)
    for name in ("q", "k", "v"):
        if trace:
            trace.snap(f"x{name}", proj[name])

    # scores, softmax, context
    if mode.attn:
        qh = _heads(proj["q"].values, batch, seq, n_heads)
        kh = _heads(proj["k"].values, batch, seq, n_heads)
        vh = _heads(proj["v"].values, batch, seq, n_heads)
        qtq = QuantTensor(qh, QScheme.PER_TENSOR, F32(sc.q))
        ktq = QuantTensor(kh, QScheme.PER_TENSOR, F32(sc.k))
        a = attn_scores(qtq, ktq, layer.d_tilde, mask4)
        if trace:
            trace.gemm(layer_idx, "attn_scores", "int8")
            trace.snap("scores", a)
        p_q = softmax_quant(a, sc.p)
        if trace:
            trace.snap("p", p_q)
        pv_acc = gemm_i8_accum_i32(p_q.values, vh)
        if trace:
            trace.gemm(layer_idx, "attn_pv", "int8")
        mult = layer.pv_mult.reshape(n_heads, head_dim)[None, :, None, :]
        ctx_vals = np.clip(np.rint(pv_acc.astype(F32) * mult), -I8_MAX, I8_MAX).astype(np.int8)
        x_attn = QuantTensor(_unheads(ctx_vals, batch, seq), QScheme.PER_COL,
                             np.asarray(sc.attn, dtype=F32))
    else:
        qh = _heads(dequant_maybe(proj["q"]), batch, seq, n_heads)
        kh = _heads(dequant_maybe(proj["k"]), batch, seq, n_heads)
        vh = _heads(dequant_maybe(proj["v"]), batch, seq, n_heads)
        a = np.matmul(qh, np.swapaxes(kh, -1, -2)) / F32(np.sqrt(head_dim))
        if mask4 is not None:
            a = a + mask4
        if trace:
            trace.gemm(layer_idx, "attn_scores", "fp")
            trace.snap("scores", a)
        p_f = softmax_f32(a)
        if trace:
            trace.snap("p", p_f)
        if observers is not None:
            observers.observe(site_id(layer_idx, "S_p"), p_f)
        x_attn = _unheads(np.matmul(p_f, vh), batch, seq)
        if trace:
            trace.gemm(layer_idx, "attn_pv", "fp")
        if observers is not None:
            observers.observe(site_id(layer_idx, "S_attn"), x_attn)
    if trace:
        trace.snap("x_attn", x_attn)

    # output projection
    if mode.attn_output:
        xa = _ensure_feature_quant(x_attn, sc.attn)
        wo_q, wo_bias = layer.wo
        acc = gemm_i8_accum_i32(xa.values, wo_q.values)
        if trace:
            trace.gemm(layer_idx, "attn_out", "int8")
        e = Epilogue(EpilogueKind.REQUANT_FWQ, col_scales=wo_q.col_scales,
                     bias=wo_bias, out_scales=np.asarray(sc.o, dtype=F32))
        x_o = apply_epilogue(acc, e)
    else:
        x_o = dequant_maybe(x_attn) @ np.asarray(p.w_o, dtype=F32) + np.asarray(p.b_o, dtype=F32)
        if trace:
            trace.gemm(layer_idx, "attn_out", "fp")
        if observers is not None:
            observers.observe(site_id(layer_idx, "S_o"), x_o)
    if trace:
        trace.snap("x_o", x_o)

    out = ln_quant_residual(x_in, x_o, p.ln1_gamma, p.ln1_beta, layer.ln_eps,
                            out_int8=mode.fc1)
    if trace and trace.capture:
        trace.snap("ln1_fp", ln_quant_residual(x_in, x_o, p.ln1_gamma, p.ln1_beta,
                                               layer.ln_eps, out_int8=False))
    return out


# ---------------------------------------------------------------------------
# MLP module


def mlp_forward(
    x_in,
    layer: QuantizedLayer,
    out_int8: bool,
    layer_idx: int = 0,
    trace: OpTrace | None = None,
    observers=None,
):
    """Feed-forward block: FC1, GELU, FC2, residual LN.

    The first projection's output is never quantized; the GELU output is
    feature-quantized only when FC2 runs in INT8.
    """
    p = layer.params
    mode = layer.mode
    sc = layer.scales

    if mode.fc1:
        xq_t = ensure_token_quant(x_in)
        w1_q, b1 = layer.w1
        acc = gemm_i8_accum_i32(xq_t.values, w1_q.values)
        if trace:
            trace.gemm(layer_idx, "fc1", "int8")
        e = Epilogue(EpilogueKind.DEQUANT_F32, col_scales=w1_q.col_scales,
                     row_scales=xq_t.scales, bias=b1)
        x1 = apply_epilogue(acc, e)
    else:
        x1 = dequant_maybe(x_in) @ np.asarray(p.w_1, dtype=F32) + np.asarray(p.b_1, dtype=F32)
        if trace:
            trace.gemm(layer_idx, "fc1", "fp")
    if trace:
        trace.snap("x1", x1)

    if mode.fc2:
        a = gelu_quant(x1, sc.a)
        w2_q, b2 = layer.w2
        acc = gemm_i8_accum_i32(a.values, w2_q.values)
        if trace:
            trace.gemm(layer_idx, "fc2", "int8")
        e = Epilogue(EpilogueKind.REQUANT_FWQ, col_scales=w2_q.col_scales,
                     bias=b2, out_scales=np.asarray(sc.x2, dtype=F32))
        x2 = apply_epilogue(acc, e)
    else:
        a = gelu_f32(x1)
        if observers is not None:
            observers.observe(site_id(layer_idx, "S_a"), a)
        x2 = a @ np.asarray(p.w_2, dtype=F32) + np.asarray(p.b_2, dtype=F32)
        if trace:
            trace.gemm(layer_idx, "fc2", "fp")
        if observers is not None:
            observers.observe(site_id(layer_idx, "S_x2"), x2)
    if trace:
        trace.snap("a", a)
        trace.snap("x2", x2)

    out = ln_quant_residual(x_in, x2, p.ln2_gamma, p.ln2_beta, layer.ln_eps,
                            out_int8=out_int8)
    if trace and trace.capture:
        trace.snap("ln2_fp", ln_quant_residual(x_in, x2, p.ln2_gamma, p.ln2_beta,
                                               layer.ln_eps, out_int8=False))
    return out
