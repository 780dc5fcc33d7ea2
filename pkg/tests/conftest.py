"""Shared builders for toy models, data and calibration tables."""

import numpy as np
import pytest

from quantenc.model import ModelConfig, run_calibration
from quantenc.toygen import gen_batches, gen_toy_model

SMALL_CONFIG = ModelConfig(
    vocab_size=96, max_positions=16, type_vocab=2, d_model=32, n_heads=4,
    d_ff=64, n_layers=2, n_labels=2,
)


def make_model(seed=0, config=SMALL_CONFIG):
    return gen_toy_model(config, seed)


def make_data(seed=1, rows=32, seq=None, config=SMALL_CONFIG):
    if seq is None:
        seq = min(12, config.max_positions)
    return gen_batches(config.vocab_size, rows, seq, seed, config.n_labels)


def make_calibrated(seed=0, config=SMALL_CONFIG, batches=4, batch_size=8):
    model = make_model(seed, config)
    ids, mask, _ = make_data(seed + 1, batches * batch_size, None, config)
    table = run_calibration(model, ids, mask, batches, batch_size)
    return model, table


@pytest.fixture(scope="session")
def small_setup():
    """(fp_model, calibration table) for the 2-layer test configuration."""
    return make_calibrated()


@pytest.fixture(scope="session")
def eval_batch():
    ids, mask, labels = make_data(seed=77, rows=8, seq=12)
    return ids, mask, labels
