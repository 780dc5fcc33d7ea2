"""Analytical memory-traffic model.

Counts bytes read and written per operator over one forward pass and
compares against an all-FP16 baseline (the deployment counterpart of the
engine's FP32 fallback), quantifying how token-quantized layer-norm
outputs roughly halve the data volume of the downstream GeMM.

Element sizes: f32 = 4, f16 = 2 (baseline FP), i8/u8 = 1.  Every scale
vector travels as f32.  Weights are counted once per forward; there is
no cache model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .layers import ModeConfig
from .model import ModelConfig

_BPE = {"f32": 4, "f16": 2, "i8": 1, "u8": 1}

OP_KINDS = ("lookup", "ln", "gemm", "softmax", "gelu", "residual")


@dataclass(frozen=True)
class Fmt:
    """Storage format of one tensor operand: precision + f32 scale count."""

    prec: str
    scales: int = 0

    def __post_init__(self):
        if self.prec not in _BPE:
            raise InputError(f"unknown precision {self.prec!r}")


F16 = Fmt("f16")


def tensor_bytes(elems: int, fmt: Fmt) -> int:
    return elems * _BPE[fmt.prec] + fmt.scales * 4


@dataclass(frozen=True)
class TrafficEntry:
    name: str
    bytes_read: int
    bytes_written: int
    precision: str

    @property
    def total(self) -> int:
        return self.bytes_read + self.bytes_written

    def to_dict(self) -> dict:
        return {"name": self.name, "bytes_read": self.bytes_read,
                "bytes_written": self.bytes_written, "precision": self.precision}


def op_traffic(
    op_kind: str,
    shape: tuple,
    in_fmts: list[tuple[int, Fmt]],
    out_fmts: list[tuple[int, Fmt]],
    name: str | None = None,
) -> TrafficEntry:
    """Byte traffic of one operator.

    ``in_fmts``/``out_fmts`` pair each operand's element count with its
    storage format; ``shape`` is carried for the entry name only.
    """
    if op_kind not in OP_KINDS:
        raise InputError(f"unknown op kind {op_kind!r}")
    read = sum(tensor_bytes(n, f) for n, f in in_fmts)
    written = sum(tensor_bytes(n, f) for n, f in out_fmts)
    prec = out_fmts[0][1].prec if out_fmts else "f16"
    return TrafficEntry(name=name or op_kind, bytes_read=read,
                        bytes_written=written, precision=prec)


@dataclass
class TrafficReport:
    entries: list[TrafficEntry] = field(default_factory=list)
    baseline_total: int = 0

    @property
    def total_read(self) -> int:
        return sum(e.bytes_read for e in self.entries)

    @property
    def total_written(self) -> int:
        return sum(e.bytes_written for e in self.entries)

    @property
    def total(self) -> int:
        return self.total_read + self.total_written

    @property
    def ratio(self) -> float:
        return self.baseline_total / self.total if self.total else 1.0

    def entry(self, name: str) -> TrafficEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "total_read": self.total_read,
            "total_written": self.total_written,
            "total": self.total,
            "baseline_total": self.baseline_total,
            "ratio_vs_f16_baseline": self.ratio,
        }


def _graph_entries(cfg: ModelConfig, seq: int, batch: int, mode: ModeConfig) -> list[TrafficEntry]:
    n = batch * seq
    d, dff, heads = cfg.d_model, cfg.d_ff, cfg.n_heads
    scores = batch * heads * seq * seq

    def act_row(int8: bool) -> Fmt:      # token-quantized activation
        return Fmt("i8", n) if int8 else F16

    def act_col(int8: bool, cols: int) -> Fmt:  # feature-quantized activation
        return Fmt("i8", cols) if int8 else F16

    def weight(int8: bool, cols: int) -> Fmt:
        return Fmt("i8", cols) if int8 else F16

    entries: list[TrafficEntry] = []

    # embedding lookups: token rows at the embedding slot's precision,
    # position/type rows stay FP
    tok = act_row(mode.embedding)
    entries.append(op_traffic("lookup", (n, d),
                              [(n, Fmt("f32")), (n * d, tok)], [(n * d, tok)],
                              name="emb.lookup.token"))
    for which in ("position", "type"):
        entries.append(op_traffic("lookup", (n, d),
                                  [(n * d, F16)], [(n * d, F16)],
                                  name=f"emb.lookup.{which}"))
    emb_out = act_row(mode.embedding)
    entries.append(op_traffic("ln", (n, d),
                              [(n * d, tok), (n * d, F16), (n * d, F16), (2 * d, F16)],
                              [(n * d, emb_out)], name="emb.ln"))

    x_in = emb_out
    for k in range(cfg.n_layers):
        pre = f"layer{k}."
        qkv_out = act_col(mode.qkv_gemm and mode.attn, 3)  # three static scales
        entries.append(op_traffic(
            "gemm", (n, d, 3 * d),
            [(n * d, x_in), (3 * d * d, weight(mode.qkv_gemm, 3 * d)), (3 * d, F16)],
            [(n * 3 * d, qkv_out)], name=pre + "attn.qkv"))
        entries.append(op_traffic(
            "gemm", (n, d, seq),
            [(n * d, qkv_out), (n * d, qkv_out)],
            [(scores, F16)], name=pre + "attn.scores"))
        p_out = Fmt("u8", 1) if mode.attn else F16
        entries.append(op_traffic(
            "softmax", (scores,),
            [(scores, F16)], [(scores, p_out)], name=pre + "attn.softmax"))
        ctx_out = act_col(mode.attn, d)
        entries.append(op_traffic(
            "gemm", (n, seq, d),
            [(scores, p_out), (n * d, qkv_out)],
            [(n * d, ctx_out)], name=pre + "attn.pv"))
        o_out = act_col(mode.attn_output, d)
        entries.append(op_traffic(
            "gemm", (n, d, d),
            [(n * d, ctx_out), (d * d, weight(mode.attn_output, d)), (d, F16)],
            [(n * d, o_out)], name=pre + "attn.out"))
        mid = act_row(mode.fc1)
        entries.append(op_traffic(
            "ln", (n, d),
            [(n * d, x_in), (n * d, o_out), (2 * d, F16)],
            [(n * d, mid)], name=pre + "attn.ln"))
        entries.append(op_traffic(
            "gemm", (n, d, dff),
            [(n * d, mid), (d * dff, weight(mode.fc1, dff)), (dff, F16)],
            [(n * dff, F16)], name=pre + "mlp.fc1"))
        a_out = act_col(mode.fc2, dff)
        entries.append(op_traffic(
            "gelu", (n, dff),
            [(n * dff, F16)], [(n * dff, a_out)], name=pre + "mlp.gelu"))
        x2_out = act_col(mode.fc2, d)
        entries.append(op_traffic(
            "gemm", (n, dff, d),
            [(n * dff, a_out), (dff * d, weight(mode.fc2, d)), (d, F16)],
            [(n * d, x2_out)], name=pre + "mlp.fc2"))
        last = k == cfg.n_layers - 1
        ln_out = F16 if last else act_row(mode.qkv_gemm)
        entries.append(op_traffic(
            "ln", (n, d),
            [(n * d, mid), (n * d, x2_out), (2 * d, F16)],
            [(n * d, ln_out)], name=pre + "mlp.ln"))
        x_in = ln_out
    return entries


def model_traffic(cfg: ModelConfig, seq: int, batch: int, mode: ModeConfig) -> TrafficReport:
    """Traffic over the full forward graph, with an all-FP16 baseline total."""
    entries = _graph_entries(cfg, seq, batch, mode)
    baseline = _graph_entries(cfg, seq, batch, ModeConfig())
    return TrafficReport(entries=entries,
                         baseline_total=sum(e.total for e in baseline))


def render_table(report: TrafficReport) -> str:
    lines = [f"{'operator':<24} {'read':>12} {'written':>12} {'prec':>6}"]
    for e in report.entries:
        lines.append(f"{e.name:<24} {e.bytes_read:>12} {e.bytes_written:>12} {e.precision:>6}")
    lines.append("-" * 58)
    lines.append(f"{'total':<24} {report.total_read:>12} {report.total_written:>12}")
    lines.append(f"baseline (all-FP16) total: {report.baseline_total}")
    lines.append(f"baseline/total ratio:      {report.ratio:.4f}")
    return "\n".join(lines)
