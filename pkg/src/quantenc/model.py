"""Model configuration, checkpoint I/O, full forward pass and comparison.

A checkpoint stores FP32 master weights only; quantization happens at
load/transform time (``quantize_model``), so one file serves every mode.
Tensor names in the container follow::

    emb.token_table [vocab, d]      emb.position_table [max_positions, d]
    emb.type_table [type_vocab, d]  emb.ln_gamma / emb.ln_beta [d]
    layer<k>.W_q|W_k|W_v|W_o [d,d]  layer<k>.b_q|b_k|b_v|b_o [d]
    layer<k>.W_1 [d,d_ff]  b_1 [d_ff]  W_2 [d_ff,d]  b_2 [d]
    layer<k>.ln1_gamma|ln1_beta|ln2_gamma|ln2_beta [d]
    cls.W [d, n_labels]  cls.b [n_labels]            (iff n_labels > 0)
    cls.pooler_W [d, d]  cls.pooler_b [d]            (optional tanh pooler)

Classification reads the first-token hidden state, applies the optional
tanh pooler, then the always-FP32 linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationTable, ObserverBank, finalize, site_census
from .container import read_container, write_container
from .errors import InputError, ManifestError, ShapeError
from .layers import (
    EmbeddingParams,
    LayerParams,
    ModeConfig,
    OpTrace,
    QuantizedEmbedding,
    QuantizedLayer,
    attention_forward,
    build_quantized_layer,
    dequant_maybe,
    embedding_forward,
    mlp_forward,
    quantize_embedding,
    required_sites,
    MASK_FILL,
)
from .tensor import F32


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_positions: int
    type_vocab: int
    d_model: int
    n_heads: int
    d_ff: int
    n_layers: int
    n_labels: int = 0  # 0: no classifier head
    ln_eps: float = 1e-12

    def __post_init__(self):
        for name in ("vocab_size", "max_positions", "type_vocab", "d_model",
                     "n_heads", "d_ff", "n_layers"):
            if getattr(self, name) <= 0:
                raise InputError(f"config field {name} must be positive")
        if self.n_labels < 0 or self.ln_eps <= 0:
            raise InputError("n_labels must be >= 0 and ln_eps positive")
        if self.d_model % self.n_heads != 0:
            raise InputError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "max_positions": self.max_positions,
            "type_vocab": self.type_vocab, "d_model": self.d_model,
            "n_heads": self.n_heads, "d_ff": self.d_ff, "n_layers": self.n_layers,
            "n_labels": self.n_labels, "ln_eps": self.ln_eps,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        try:
            return cls(**{k: doc[k] for k in (
                "vocab_size", "max_positions", "type_vocab", "d_model",
                "n_heads", "d_ff", "n_layers", "n_labels", "ln_eps")})
        except KeyError as exc:
            raise ManifestError(f"config missing field {exc}") from exc


@dataclass(frozen=True)
class HeadParams:
    w: np.ndarray
    b: np.ndarray
    pooler_w: np.ndarray | None = None
    pooler_b: np.ndarray | None = None


@dataclass(frozen=True)
class FpModel:
    """FP32 master weights, the unit of checkpoint serialization."""

    config: ModelConfig
    emb: EmbeddingParams
    layers: tuple
    head: HeadParams | None = None


# ---------------------------------------------------------------------------
# checkpoint I/O


def _model_tensors(model: FpModel) -> dict[str, np.ndarray]:
    t: dict[str, np.ndarray] = {
        "emb.token_table": model.emb.token_table,
        "emb.position_table": model.emb.position_table,
        "emb.type_table": model.emb.type_table,
        "emb.ln_gamma": model.emb.ln_gamma,
        "emb.ln_beta": model.emb.ln_beta,
    }
    for k, lp in enumerate(model.layers):
        pre = f"layer{k}."
        t[pre + "W_q"], t[pre + "b_q"] = lp.w_q, lp.b_q
        t[pre + "W_k"], t[pre + "b_k"] = lp.w_k, lp.b_k
        t[pre + "W_v"], t[pre + "b_v"] = lp.w_v, lp.b_v
        t[pre + "W_o"], t[pre + "b_o"] = lp.w_o, lp.b_o
        t[pre + "W_1"], t[pre + "b_1"] = lp.w_1, lp.b_1
        t[pre + "W_2"], t[pre + "b_2"] = lp.w_2, lp.b_2
        t[pre + "ln1_gamma"], t[pre + "ln1_beta"] = lp.ln1_gamma, lp.ln1_beta
        t[pre + "ln2_gamma"], t[pre + "ln2_beta"] = lp.ln2_gamma, lp.ln2_beta
    if model.head is not None:
        t["cls.W"], t["cls.b"] = model.head.w, model.head.b
        if model.head.pooler_w is not None:
            t["cls.pooler_W"], t["cls.pooler_b"] = model.head.pooler_w, model.head.pooler_b
    return t


def save_checkpoint(model: FpModel, path: str) -> None:
    tensors = {k: np.asarray(v, dtype=F32) for k, v in _model_tensors(model).items()}
    write_container(path, model.config.to_dict(), tensors)


def _take(tensors: dict, name: str, shape: tuple) -> np.ndarray:
    if name not in tensors:
        raise ManifestError(f"checkpoint missing tensor {name!r}")
    arr = tensors[name]
    if arr.shape != shape:
        raise ManifestError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
    return arr.astype(F32)


def load_checkpoint(path: str) -> FpModel:
    config_doc, tensors = read_container(path)
    if config_doc is None:
        raise ManifestError(f"{path}: checkpoint has no config block")
    cfg = ModelConfig.from_dict(config_doc)
    d, dff = cfg.d_model, cfg.d_ff
    emb = EmbeddingParams(
        token_table=_take(tensors, "emb.token_table", (cfg.vocab_size, d)),
        position_table=_take(tensors, "emb.position_table", (cfg.max_positions, d)),
        type_table=_take(tensors, "emb.type_table", (cfg.type_vocab, d)),
        ln_gamma=_take(tensors, "emb.ln_gamma", (d,)),
        ln_beta=_take(tensors, "emb.ln_beta", (d,)),
    )
    layers = []
    for k in range(cfg.n_layers):
        pre = f"layer{k}."
        layers.append(LayerParams(
            w_q=_take(tensors, pre + "W_q", (d, d)), b_q=_take(tensors, pre + "b_q", (d,)),
            w_k=_take(tensors, pre + "W_k", (d, d)), b_k=_take(tensors, pre + "b_k", (d,)),
            w_v=_take(tensors, pre + "W_v", (d, d)), b_v=_take(tensors, pre + "b_v", (d,)),
            w_o=_take(tensors, pre + "W_o", (d, d)), b_o=_take(tensors, pre + "b_o", (d,)),
            w_1=_take(tensors, pre + "W_1", (d, dff)), b_1=_take(tensors, pre + "b_1", (dff,)),
            w_2=_take(tensors, pre + "W_2", (dff, d)), b_2=_take(tensors, pre + "b_2", (d,)),
            ln1_gamma=_take(tensors, pre + "ln1_gamma", (d,)),
            ln1_beta=_take(tensors, pre + "ln1_beta", (d,)),
            ln2_gamma=_take(tensors, pre + "ln2_gamma", (d,)),
            ln2_beta=_take(tensors, pre + "ln2_beta", (d,)),
            n_heads=cfg.n_heads,
        ))
    head = None
    if cfg.n_labels > 0:
        pooler_w = pooler_b = None
        if "cls.pooler_W" in tensors:
            pooler_w = _take(tensors, "cls.pooler_W", (d, d))
            pooler_b = _take(tensors, "cls.pooler_b", (d,))
        head = HeadParams(
            w=_take(tensors, "cls.W", (d, cfg.n_labels)),
            b=_take(tensors, "cls.b", (cfg.n_labels,)),
            pooler_w=pooler_w, pooler_b=pooler_b,
        )
    return FpModel(config=cfg, emb=emb, layers=tuple(layers), head=head)


# ---------------------------------------------------------------------------
# runtime model


@dataclass(frozen=True)
class QuantizedModel:
    """An FpModel prepared for one mode.  Immutable and thread-shareable."""

    config: ModelConfig
    mode: ModeConfig
    emb: EmbeddingParams | QuantizedEmbedding
    layers: tuple  # of QuantizedLayer
    head: HeadParams | None


def quantize_model(fp_model: FpModel, calib: CalibrationTable | None,
                   mode: ModeConfig) -> QuantizedModel:
    """Fold calibrated scales into the weights and quantize per the mode.

    The classifier head always stays FP32.  Raises CalibrationError when
    the table does not cover a site an INT8 slot needs.
    """
    cfg = fp_model.config
    emb = quantize_embedding(fp_model.emb) if mode.embedding else fp_model.emb
    layers = tuple(
        build_quantized_layer(lp, mode, calib, k, cfg.ln_eps)
        for k, lp in enumerate(fp_model.layers)
    )
    return QuantizedModel(config=cfg, mode=mode, emb=emb, layers=layers,
                          head=fp_model.head)


def mode_required_sites(mode: ModeConfig, n_layers: int) -> list[str]:
    out: list[str] = []
    for k in range(n_layers):
        out.extend(required_sites(mode, k))
    return out


def _head_logits(head: HeadParams, h0: np.ndarray) -> np.ndarray:
    x = h0
    if head.pooler_w is not None:
        x = np.tanh(x @ head.pooler_w + head.pooler_b)
    return x @ head.w + head.b


def forward(
    model: QuantizedModel,
    ids: np.ndarray,
    mask: np.ndarray,
    trace: OpTrace | None = None,
    observers: ObserverBank | None = None,
):
    """Run the encoder: [batch, seq] ids/mask -> (hidden [batch, seq, d], logits).

    The final hidden states are always materialized in FP32.  Observers
    are only accepted in the all-FP mode (calibration runs the FP32 path).
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ShapeError(f"ids {ids.shape} and mask {mask.shape} must be equal rank-2")
    if observers is not None and not model.mode.all_fp:
        raise InputError("observers require the all-FP mode")
    cfg = model.config
    batch, seq = ids.shape
    if seq > cfg.max_positions:
        raise ShapeError(f"sequence length {seq} exceeds max_positions {cfg.max_positions}")
    if mask.size and not np.all((mask == 0) | (mask == 1)):
        raise InputError("mask entries must be 0 or 1")
    add_mask = ((1 - mask) * MASK_FILL).astype(F32)

    emb_int8 = model.mode.embedding and model.mode.qkv_gemm and cfg.n_layers > 0
    x = embedding_forward(ids, model.emb, cfg.ln_eps, out_int8=emb_int8,
                          trace=trace, observers=observers)
    for k, layer in enumerate(model.layers):
        x = attention_forward(x, layer, batch, seq, add_mask, layer_idx=k,
                              trace=trace, observers=observers)
        last = k == cfg.n_layers - 1
        x = mlp_forward(x, layer, out_int8=model.mode.qkv_gemm and not last,
                        layer_idx=k, trace=trace, observers=observers)
    hidden = dequant_maybe(x).reshape(batch, seq, cfg.d_model)
    logits = None
    if model.head is not None:
        logits = _head_logits(model.head, hidden[:, 0, :])
    return hidden, logits


def run_calibration(
    fp_model: FpModel,
    ids: np.ndarray,
    mask: np.ndarray,
    batches: int,
    batch_size: int,
) -> CalibrationTable:
    """FP32 forward over ``batches`` x ``batch_size`` rows, observing amax."""
    if batches <= 0:
        raise InputError("no calibration data: need at least one batch")
    need = batches * batch_size
    if ids.shape[0] < need:
        raise InputError(
            f"calibration needs {need} rows ({batches} batches x {batch_size}), "
            f"data has {ids.shape[0]}"
        )
    cfg = fp_model.config
    fp32 = quantize_model(fp_model, None, ModeConfig())
    bank = ObserverBank(cfg.n_layers, cfg.d_model, cfg.d_ff)
    for b in range(batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        forward(fp32, ids[sl], mask[sl], observers=bank)
    meta = {"batches": batches, "batch_size": batch_size, "seq_len": int(ids.shape[1])}
    return finalize(bank, required=site_census(cfg.n_layers), meta=meta)


# ---------------------------------------------------------------------------
# comparison metrics


@dataclass(frozen=True)
class CompareStats:
    max_abs_err: float
    rel_fro: float
    cosine: float

    def to_dict(self) -> dict:
        return {"max_abs_err": self.max_abs_err, "rel_fro": self.rel_fro,
                "cosine": self.cosine}


def _det_norm(x: np.ndarray) -> float:
    # numpy pairwise summation: bitwise stable across runs and thread counts,
    # unlike BLAS-backed np.linalg.norm / np.dot
    return float(np.sqrt(np.sum(x * x)))


def compare(ref: np.ndarray, test: np.ndarray) -> CompareStats:
    """Element and subspace error metrics between a reference and a candidate."""
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeError(f"compare shapes disagree: {ref.shape} vs {test.shape}")
    diff = test - ref
    max_abs = float(np.abs(diff).max(initial=0.0))
    if max_abs == 0.0:
        return CompareStats(max_abs_err=0.0, rel_fro=0.0, cosine=1.0)
    ref_norm = _det_norm(ref)
    rel = _det_norm(diff) / ref_norm if ref_norm > 0 else float(_det_norm(diff) > 0)
    a, b = ref.ravel(), test.ravel()
    na, nb = _det_norm(a), _det_norm(b)
    if na == 0 or nb == 0:
        cos = 0.0
    else:
        cos = float(np.sum(a * b) / (na * nb))
    return CompareStats(max_abs_err=max_abs, rel_fro=rel, cosine=cos)


def argmax_agreement(ref_logits: np.ndarray, test_logits: np.ndarray) -> float:
    if ref_logits.shape != test_logits.shape:
        raise ShapeError("logit shapes disagree")
    return float(np.mean(ref_logits.argmax(axis=-1) == test_logits.argmax(axis=-1)))


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(logits.argmax(axis=-1) == labels))
