"""Exporter command line.

    zqh-export export --model <id|path> --task sst2 --seq-len 128 \
        --data-tsv dev.tsv --out-model m.zqh --out-data d.zqh

Either output may be omitted to export only the other artifact.
"""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportManifest, export_eval_batches, export_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zqh-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export a model and/or an eval split")
    p.add_argument("--model", required=True, help="model id or local path")
    p.add_argument("--task", default="sst2")
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--data-tsv", default=None,
                   help="local task split: sentence<TAB>label per row")
    p.add_argument("--out-model", default=None)
    p.add_argument("--out-data", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    manifest = ExportManifest(source=args.model, task=args.task,
                              out_model=args.out_model, out_data=args.out_data,
                              data_path=args.data_tsv, seq_len=args.seq_len)
    try:
        if args.out_model:
            config = export_model(manifest)
            print(f"wrote {args.out_model} ({config['n_layers']} layers, "
                  f"d={config['d_model']})")
        if args.out_data:
            n = export_eval_batches(manifest)
            print(f"wrote {args.out_data} ({n} rows x {args.seq_len} tokens)")
        if not args.out_model and not args.out_data:
            print("nothing to do: give --out-model and/or --out-data",
                  file=sys.stderr)
            return 1
        return 0
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
