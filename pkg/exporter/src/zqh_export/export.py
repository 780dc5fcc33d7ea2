"""Convert a pretrained BERT-family classifier and a tokenized eval split
into ZQH1 model and batch-data containers.

The engine consumes single-segment inputs (ids + mask, all token types
zero), so only single-sentence tasks are exportable; sentence-pair tasks
are rejected.  All weights are written as FP32 masters: quantization is
entirely the engine's job.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .container import write_container

# single-sentence GLUE tasks the engine's batch format can represent
SUPPORTED_TASKS = ("sst2", "cola")

# published validation-split sizes, checked at export time
EXPECTED_VALIDATION_ROWS = {"sst2": 872, "cola": 1043}


class ExportError(RuntimeError):
    pass


@dataclass
class ExportManifest:
    source: str                      # model id or local path
    task: str
    out_model: str | None = None
    out_data: str | None = None
    data_path: str | None = None     # local TSV with sentence<TAB>label rows
    seq_len: int = 128
    name_map: dict = field(default_factory=dict)  # filled during export


# engine tensor name <- HF parameter name; "T" marks a weight that needs a
# transpose (HF Linear stores [out, in], the engine computes Y = X @ W)
def _bert_name_map(n_layers: int, has_pooler: bool, has_head: bool) -> dict[str, tuple[str, bool]]:
    m = {
        "emb.token_table": ("bert.embeddings.word_embeddings.weight", False),
        "emb.position_table": ("bert.embeddings.position_embeddings.weight", False),
        "emb.type_table": ("bert.embeddings.token_type_embeddings.weight", False),
        "emb.ln_gamma": ("bert.embeddings.LayerNorm.weight", False),
        "emb.ln_beta": ("bert.embeddings.LayerNorm.bias", False),
    }
    for k in range(n_layers):
        hf = f"bert.encoder.layer.{k}"
        eng = f"layer{k}"
        m.update({
            f"{eng}.W_q": (f"{hf}.attention.self.query.weight", True),
            f"{eng}.b_q": (f"{hf}.attention.self.query.bias", False),
            f"{eng}.W_k": (f"{hf}.attention.self.key.weight", True),
            f"{eng}.b_k": (f"{hf}.attention.self.key.bias", False),
            f"{eng}.W_v": (f"{hf}.attention.self.value.weight", True),
            f"{eng}.b_v": (f"{hf}.attention.self.value.bias", False),
            f"{eng}.W_o": (f"{hf}.attention.output.dense.weight", True),
            f"{eng}.b_o": (f"{hf}.attention.output.dense.bias", False),
            f"{eng}.ln1_gamma": (f"{hf}.attention.output.LayerNorm.weight", False),
            f"{eng}.ln1_beta": (f"{hf}.attention.output.LayerNorm.bias", False),
            f"{eng}.W_1": (f"{hf}.intermediate.dense.weight", True),
            f"{eng}.b_1": (f"{hf}.intermediate.dense.bias", False),
            f"{eng}.W_2": (f"{hf}.output.dense.weight", True),
            f"{eng}.b_2": (f"{hf}.output.dense.bias", False),
            f"{eng}.ln2_gamma": (f"{hf}.output.LayerNorm.weight", False),
            f"{eng}.ln2_beta": (f"{hf}.output.LayerNorm.bias", False),
        })
    if has_pooler:
        m["cls.pooler_W"] = ("bert.pooler.dense.weight", True)
        m["cls.pooler_b"] = ("bert.pooler.dense.bias", False)
    if has_head:
        m["cls.W"] = ("classifier.weight", True)
        m["cls.b"] = ("classifier.bias", False)
    return m


def _load_source_model(source: str):
    import torch
    from transformers import AutoModelForSequenceClassification

    model = AutoModelForSequenceClassification.from_pretrained(
        source, torch_dtype=torch.float32)
    model.eval()
    if model.config.model_type != "bert":
        raise ExportError(
            f"unsupported architecture {model.config.model_type!r}: "
            "only post-LN BERT-family encoders are exportable")
    if getattr(model.config, "position_embedding_type", "absolute") != "absolute":
        raise ExportError("only absolute position embeddings are supported")
    return model


def export_model(manifest: ExportManifest):
    """Write an engine checkpoint for the manifest's source model.

    Returns the engine config dict.  Fails loudly on any unmapped or
    missing tensor so silent architecture drift is impossible.
    """
    if manifest.out_model is None:
        raise ExportError("no output model path given")
    model = _load_source_model(manifest.source)
    hf_cfg = model.config
    config = {
        "vocab_size": hf_cfg.vocab_size,
        "max_positions": hf_cfg.max_position_embeddings,
        "type_vocab": hf_cfg.type_vocab_size,
        "d_model": hf_cfg.hidden_size,
        "n_heads": hf_cfg.num_attention_heads,
        "d_ff": hf_cfg.intermediate_size,
        "n_layers": hf_cfg.num_hidden_layers,
        "n_labels": hf_cfg.num_labels,
        "ln_eps": hf_cfg.layer_norm_eps,
    }

    state = {k: v for k, v in model.state_dict().items()
             if not k.endswith("position_ids")}
    has_pooler = any(k.startswith("bert.pooler.") for k in state)
    name_map = _bert_name_map(config["n_layers"], has_pooler, config["n_labels"] > 0)

    tensors: dict[str, np.ndarray] = {}
    used = set()
    missing = []
    for eng_name, (hf_name, transpose) in name_map.items():
        if hf_name not in state:
            missing.append(hf_name)
            continue
        arr = state[hf_name].detach().cpu().numpy().astype(np.float32)
        tensors[eng_name] = arr.T.copy() if transpose else arr
        used.add(hf_name)
    if missing:
        raise ExportError("source model lacks expected tensors: " + ", ".join(missing))
    unmapped = sorted(set(state) - used)
    if unmapped:
        raise ExportError("unmapped source tensors (architecture mismatch): "
                          + ", ".join(unmapped))

    d = config["d_model"]
    expect = {
        "emb.token_table": (config["vocab_size"], d),
        "emb.position_table": (config["max_positions"], d),
        "emb.type_table": (config["type_vocab"], d),
    }
    for name, shape in expect.items():
        if tensors[name].shape != shape:
            raise ExportError(f"tensor {name} has shape {tensors[name].shape}, "
                              f"expected {shape}")

    manifest.name_map = {k: v[0] for k, v in name_map.items()}
    config["export_meta"] = {"source": manifest.source, "task": manifest.task,
                             "name_map": manifest.name_map}
    write_container(manifest.out_model, config, tensors)
    return config


def read_task_tsv(path: str) -> list[tuple[str, int]]:
    """Parse a GLUE-style TSV split: `sentence<TAB>label` per row, optional
    header line."""
    rows: list[tuple[str, int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ExportError(f"{path}:{line_no + 1}: expected 2 tab-separated "
                                  f"columns, got {len(parts)}")
            text, label = parts
            if line_no == 0 and not label.strip().lstrip("-").isdigit():
                continue  # header
            rows.append((text, int(label)))
    return rows


def export_eval_batches(manifest: ExportManifest, tokenizer=None):
    """Tokenize the task split to seq_len-padded ids/mask/labels and write
    the batch-data container.  Returns the row count."""
    if manifest.task not in SUPPORTED_TASKS:
        raise ExportError(
            f"unsupported task {manifest.task!r}: the engine takes single-segment "
            f"inputs, supported tasks are {', '.join(SUPPORTED_TASKS)}")
    if manifest.out_data is None:
        raise ExportError("no output data path given")
    if manifest.data_path is None:
        raise ExportError("no local task split given (expected a TSV path)")
    rows = read_task_tsv(manifest.data_path)
    if not rows:
        raise ExportError(f"{manifest.data_path}: empty split, nothing to export")

    if tokenizer is None:
        from transformers import AutoTokenizer
        tokenizer = AutoTokenizer.from_pretrained(manifest.source)

    texts = [t for t, _ in rows]
    enc = tokenizer(texts, padding="max_length", truncation=True,
                    max_length=manifest.seq_len)
    ids = np.asarray(enc["input_ids"], dtype=np.int32)
    mask = np.asarray(enc["attention_mask"], dtype=np.int32)
    labels = np.asarray([y for _, y in rows], dtype=np.int32)

    expected = EXPECTED_VALIDATION_ROWS.get(manifest.task)
    if expected is not None and len(rows) != expected:
        print(f"warning: {manifest.task} validation split has {expected} rows, "
              f"this file has {len(rows)}", file=sys.stderr)

    write_container(manifest.out_data, None,
                    {"ids": ids, "mask": mask, "labels": labels})
    return len(rows)
