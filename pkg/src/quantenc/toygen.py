"""Seeded synthetic models and token batches.

Lets the whole pipeline (calibrate, quantize, run, compare) execute with
zero external assets.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import numpy as np

from .layers import EmbeddingParams, LayerParams
from .model import FpModel, HeadParams, ModelConfig
from .tensor import F32

# Larger than the usual 0.02 encoder init so attention scores and MLP
# activations have real dynamic range: quantizing more operator slots then
# adds measurable error, as it does for trained checkpoints.
WEIGHT_STD = 0.1


def gen_toy_model(config: ModelConfig, seed: int) -> FpModel:
    rng = np.random.default_rng(seed)
    d, dff = config.d_model, config.d_ff

    def w(*shape):
        return (rng.standard_normal(shape) * WEIGHT_STD).astype(F32)

    def gamma(n):
        return (1.0 + 0.05 * rng.standard_normal(n)).astype(F32)

    def beta(n):
        return (0.05 * rng.standard_normal(n)).astype(F32)

    emb = EmbeddingParams(
        token_table=w(config.vocab_size, d),
        position_table=w(config.max_positions, d),
        type_table=w(config.type_vocab, d),
        ln_gamma=gamma(d), ln_beta=beta(d),
    )
    layers = []
    for _ in range(config.n_layers):
        layers.append(LayerParams(
            w_q=w(d, d), b_q=beta(d), w_k=w(d, d), b_k=beta(d),
            w_v=w(d, d), b_v=beta(d), w_o=w(d, d), b_o=beta(d),
            w_1=w(d, dff), b_1=beta(dff), w_2=w(dff, d), b_2=beta(d),
            ln1_gamma=gamma(d), ln1_beta=beta(d),
            ln2_gamma=gamma(d), ln2_beta=beta(d),
            n_heads=config.n_heads,
        ))
    head = None
    if config.n_labels > 0:
        head = HeadParams(w=w(d, config.n_labels), b=beta(config.n_labels))
    return FpModel(config=config, emb=emb, layers=tuple(layers), head=head)


def gen_batches(
    vocab_size: int,
    n_rows: int,
    seq_len: int,
    seed: int,
    n_labels: int = 0,
):
    """Random token batches with variable lengths; pads with id 0.

    Returns (ids, mask, labels-or-None) as int32 arrays.
    """
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, vocab_size, size=(n_rows, seq_len), dtype=np.int32)
    min_len = max(1, seq_len // 4)
    lengths = rng.integers(min_len, seq_len + 1, size=n_rows)
    mask = (np.arange(seq_len)[None, :] < lengths[:, None]).astype(np.int32)
    ids = ids * mask  # padded positions hold id 0
    labels = None
    if n_labels > 0:
        labels = rng.integers(0, n_labels, size=n_rows, dtype=np.int32)
    return ids, mask, labels
