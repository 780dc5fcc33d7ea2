"""Command-line front door.

Subcommands::

    gen-toy    seeded synthetic checkpoint + token batches
    calibrate  FP32 forward over N batches, write the scale table
    quantize   fold + quantize for a mode, write a transformation report
    run        forward a mode over a batch file, write predictions
    compare    FP32 vs quantized modes, error metrics per mode
    traffic    analytical bytes-moved report for a mode

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
error.  All outputs are written atomically and are byte-identical across
reruns with identical inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from .calibration import CalibrationTable
from .container import read_batches, write_batches
from .errors import EngineError
from .layers import ModeConfig, OpTrace, mode_from_name
from .model import (
    FpModel,
    ModelConfig,
    QuantizedModel,
    accuracy,
    argmax_agreement,
    compare,
    forward,
    load_checkpoint,
    quantize_model,
    run_calibration,
    save_checkpoint,
)
from .tensor import F32
from .toygen import gen_batches, gen_toy_model
from .traffic import model_traffic, render_table


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _atomic_write_text(path: str, text: str) -> None:
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".out-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _resolve_mode(arg: str) -> ModeConfig:
    if os.path.exists(arg):
        with open(arg, "r", encoding="utf-8") as f:
            return ModeConfig.from_json_dict(json.load(f))
    return mode_from_name(arg)


def _require_files(*paths: str) -> None:
    for p in paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"no such file: {p}")


def _batched_forward(model: QuantizedModel, ids, mask, batch_size: int,
                     trace: OpTrace | None = None):
    """Forward in fixed-size chunks; concatenated hidden states and logits."""
    hiddens, logits = [], []
    for start in range(0, ids.shape[0], batch_size):
        sl = slice(start, start + batch_size)
        h, lg = forward(model, ids[sl], mask[sl], trace=trace)
        hiddens.append(h)
        if lg is not None:
            logits.append(lg)
    hidden = np.concatenate(hiddens, axis=0)
    return hidden, (np.concatenate(logits, axis=0) if logits else None)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_toy(args) -> int:
    cfg = ModelConfig(
        vocab_size=args.vocab, max_positions=args.seq_len, type_vocab=2,
        d_model=args.d_model, n_heads=args.heads, d_ff=args.d_ff,
        n_layers=args.layers, n_labels=args.labels,
    )
    data_seed = args.data_seed if args.data_seed is not None else args.seed + 1
    if args.out_model:
        save_checkpoint(gen_toy_model(cfg, args.seed), args.out_model)
        print(f"wrote model {args.out_model}")
    if args.out_data:
        ids, mask, labels = gen_batches(cfg.vocab_size, args.batches * args.batch_size,
                                        args.seq_len, data_seed, cfg.n_labels)
        write_batches(args.out_data, ids, mask, labels)
        print(f"wrote data {args.out_data} ({ids.shape[0]} rows x {ids.shape[1]} tokens)")
    return 0


def cmd_calibrate(args) -> int:
    _require_files(args.model, args.data)
    fp_model = load_checkpoint(args.model)
    ids, mask, _ = read_batches(args.data)
    if args.seq_len is not None:
        ids, mask = ids[:, :args.seq_len], mask[:, :args.seq_len]
    table = run_calibration(fp_model, ids, mask, args.batches, args.batch_size)
    _atomic_write_text(args.out, table.to_json())
    print(f"calibrated {args.batches} batches x {args.batch_size} -> {args.out}")
    return 0


def _load_table(path: str) -> CalibrationTable:
    with open(path, "r", encoding="utf-8") as f:
        return CalibrationTable.from_json(f.read())


def _weight_summary(qw) -> dict:
    return {
        "cols": int(qw.values.shape[1]),
        "scale_min": float(qw.col_scales.min()),
        "scale_max": float(qw.col_scales.max()),
        "int8_amax": int(np.abs(qw.values).max(initial=0)),
    }


def cmd_quantize(args) -> int:
    _require_files(args.model, args.calib)
    fp_model = load_checkpoint(args.model)
    mode = _resolve_mode(args.mode)
    table = _load_table(args.calib)
    qmodel = quantize_model(fp_model, table, mode)
    layers = []
    for k, layer in enumerate(qmodel.layers):
        entry: dict = {"layer": k}
        if layer.qkv is not None:
            entry["qkv"] = {t: _weight_summary(qw) for t, (qw, _) in layer.qkv.items()}
        if layer.wo is not None:
            entry["attn_output"] = _weight_summary(layer.wo[0])
        if layer.w1 is not None:
            entry["fc1"] = _weight_summary(layer.w1[0])
        if layer.w2 is not None:
            entry["fc2"] = _weight_summary(layer.w2[0])
        layers.append(entry)
    report = {
        "mode": mode.to_json_dict(),
        "embedding_int8": mode.embedding,
        "layers": layers,
    }
    _atomic_write_text(args.out, _dump_json(report))
    print(f"quantized {args.model} under {args.mode} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    _require_files(args.model, args.data)
    fp_model = load_checkpoint(args.model)
    mode = _resolve_mode(args.mode)
    table = None
    if args.calib:
        _require_files(args.calib)
        table = _load_table(args.calib)
    qmodel = quantize_model(fp_model, table, mode)
    ids, mask, labels = read_batches(args.data)
    hidden, logits = _batched_forward(qmodel, ids, mask, args.batch_size)
    h64 = hidden.astype(np.float64)
    doc: dict = {
        "mode": mode.to_json_dict(),
        "rows": int(ids.shape[0]),
        # pairwise-sum norm: bitwise stable across BLAS thread counts
        "hidden_fro_norm": float(np.sqrt(np.sum(h64 * h64))),
    }
    if logits is not None:
        doc["predictions"] = [int(x) for x in logits.argmax(axis=-1)]
        if labels is not None:
            doc["accuracy"] = accuracy(logits, labels)
        if args.logits:
            doc["logits"] = [[float(v) for v in row] for row in logits]
    _atomic_write_text(args.out, _dump_json(doc))
    print(f"ran {ids.shape[0]} rows under {args.mode} -> {args.out}")
    return 0


def _mode_metrics(name: str, ref, test, ref_labels) -> dict:
    h_ref, l_ref = ref
    h_test, l_test = test
    row: dict = {"mode": name}
    target_ref = l_ref if l_ref is not None else h_ref
    target_test = l_test if l_test is not None else h_test
    stats = compare(target_ref, target_test)
    row.update(stats.to_dict())
    if l_ref is not None:
        row["agreement"] = argmax_agreement(l_ref, l_test)
        if ref_labels is not None:
            row["accuracy"] = accuracy(l_test, ref_labels)
    return row


def cmd_compare(args) -> int:
    _require_files(args.model, args.data)
    fp_model = load_checkpoint(args.model)
    ids, mask, labels = read_batches(args.data)
    mode_names = [m.strip() for m in args.modes.split(",") if m.strip()]
    table = None
    if args.calib:
        _require_files(args.calib)
        table = _load_table(args.calib)

    ref_model = quantize_model(fp_model, None, ModeConfig())
    ref = _batched_forward(ref_model, ids, mask, args.batch_size)
    rows = []
    for name in mode_names:
        mode = _resolve_mode(name)
        test = _batched_forward(quantize_model(fp_model, table, mode), ids, mask,
                                args.batch_size)
        rows.append(_mode_metrics(name, ref, test, labels))

    if args.format == "json":
        out = _dump_json({"reference": "FP32", "rows": int(ids.shape[0]), "modes": rows})
    else:
        cols = ["mode", "cosine", "rel_fro", "max_abs_err", "agreement", "accuracy"]
        lines = ["  ".join(f"{c:>12}" for c in cols)]
        for r in rows:
            cells = []
            for c in cols:
                v = r.get(c)
                if v is None:
                    cells.append(f"{'-':>12}")
                elif isinstance(v, str):
                    cells.append(f"{v:>12}")
                else:
                    cells.append(f"{v:>12.6f}")
            lines.append("  ".join(cells))
        out = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, out)
        print(f"compared {', '.join(mode_names)} -> {args.out}")
    else:
        sys.stdout.write(out)
    return 0


def cmd_traffic(args) -> int:
    _require_files(args.model)
    fp_model = load_checkpoint(args.model)
    mode = _resolve_mode(args.mode)
    report = model_traffic(fp_model.config, args.seq_len, args.batch, mode)
    if args.format == "json":
        out = _dump_json(report.to_dict())
    else:
        out = render_table(report) + "\n"
    if args.out:
        _atomic_write_text(args.out, out)
        print(f"traffic report -> {args.out}")
    else:
        sys.stdout.write(out)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="quantenc", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a seeded synthetic model + batches")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=None,
                   help="seed for batches (default: --seed + 1)")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--vocab", type=int, default=512)
    p.add_argument("--labels", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out-model", default=None)
    p.add_argument("--out-data", default=None)
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("calibrate", help="collect activation scales over FP32 batches")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=None,
                   help="truncate sequences (default: data length)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("quantize", help="fold + quantize for a mode, emit a report")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--mode", default="M3")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("run", help="forward a mode over a batch file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--calib", default=None)
    p.add_argument("--mode", default="FP32")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--logits", action="store_true", help="include full logits")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="FP32 vs quantized modes, metrics per mode")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--calib", default=None)
    p.add_argument("--modes", default="M1,M2,M3")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("traffic", help="analytical memory-traffic report")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", default="M3")
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--format", choices=("json", "text"), default="text")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_traffic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal invariant violation
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
