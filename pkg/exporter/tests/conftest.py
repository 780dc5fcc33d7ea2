"""Builds a tiny local BERT checkpoint + tokenizer + synthetic task split."""

import numpy as np
import pytest
import torch
from transformers import BertConfig, BertForSequenceClassification, BertTokenizer

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "movie", "film", "was", "is", "great", "bad", "fun", "boring",
    "plot", "acting", "truly", "not", "very", "!", ".", ",", "it", "loved",
    "hated", "brilliant", "awful", "ending", "story",
]

SENTENCES = [
    ("the movie was great !", 1),
    ("truly awful acting .", 0),
    ("a brilliant plot , loved it", 1),
    ("boring story and bad ending", 0),
    ("it was fun !", 1),
    ("not very great .", 0),
    ("the film is brilliant", 1),
    ("hated the plot", 0),
]


@pytest.fixture(scope="session")
def tiny_bert_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinybert")
    vocab_path = root / "vocab.txt"
    vocab_path.write_text("\n".join(VOCAB) + "\n")

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=4, intermediate_size=64,
        max_position_embeddings=24, type_vocab_size=2, num_labels=2,
    )
    model = BertForSequenceClassification(config)
    model.eval()
    model.save_pretrained(root)
    tokenizer = BertTokenizer(vocab_file=str(vocab_path), do_lower_case=True)
    tokenizer.save_pretrained(root)
    return str(root)


@pytest.fixture(scope="session")
def task_tsv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "dev.tsv"
    lines = ["sentence\tlabel"] + [f"{text}\t{label}" for text, label in SENTENCES]
    path.write_text("\n".join(lines) + "\n")
    return str(path)
