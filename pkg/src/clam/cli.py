"""Command-line harness.

    clam <subcommand> --config cfg.json [--seed N] [--steps N] [--out DIR]
                      [--preset desk|paper-scale|overfit] [--format csv|json]

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import training
from .config import PRESETS, build_config
from .errors import ClamError, UsageError
from .fileio import checkpoint_manifest, write_features
from .synth import synth_dataset


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None)
    parser.add_argument("--format", choices=["csv", "json"], default="json",
                        dest="fmt", help="stdout format for metric reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clam")
    sub = parser.add_subparsers(dest="task", required=True)

    p = sub.add_parser("synth-data", help="write a seeded synthetic dataset")
    _add_common(p)
    p.add_argument("--count", type=int, default=None, help="number of sequences")

    p = sub.add_parser("train-quantizer", help="joint codec + codebook training")
    _add_common(p)

    p = sub.add_parser("train-lm", help="train the latent code model")
    _add_common(p)
    p.add_argument("--quantizer-ckpt", required=True)

    p = sub.add_parser("compare-rvq", help="probabilistic vs EMA experiment")
    _add_common(p)

    p = sub.add_parser("eval", help="held-out metrics for checkpoints")
    _add_common(p)
    p.add_argument("--quantizer-ckpt", required=True)
    p.add_argument("--lm-ckpt", default=None)

    p = sub.add_parser("generate", help="sample codes and decoded features")
    _add_common(p)
    p.add_argument("--quantizer-ckpt", required=True)
    p.add_argument("--lm-ckpt", required=True)
    p.add_argument("--text", required=True, help="conditioning token string")

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest")
    p.add_argument("path")
    return parser


def _config_from_args(args) -> "training.RunConfig":
    overrides = {"seed": args.seed, "steps": args.steps}
    return build_config(args.config, preset=args.preset, overrides=overrides)


def _emit(report: dict, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        flat = {k: v for k, v in report.items() if not isinstance(v, (list, dict))}
        print(",".join(flat))
        print(",".join(str(v) for v in flat.values()))


def run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    if args.task == "inspect-checkpoint":
        manifest = checkpoint_manifest(args.path)
        tensor_lines = [
            f"  {e['name']}  shape={tuple(e['shape'])}  bytes={e['size']}"
            for e in manifest["tensors"]
        ]
        print(json.dumps({k: manifest[k] for k in ("schema_version", "config", "metrics")},
                         sort_keys=True, indent=2))
        print("tensors:")
        print("\n".join(tensor_lines))
        return 0

    cfg = _config_from_args(args)
    os.makedirs(args.out, exist_ok=True)

    if args.task == "synth-data":
        count = args.count if args.count is not None else cfg.num_sequences
        if count < 1:
            raise UsageError("--count must be >= 1")
        synth_cfg = training._synth_config(cfg)
        for i, seq in enumerate(synth_dataset(synth_cfg, count)):
            write_features(os.path.join(args.out, f"seq_{i:05d}.clmf"), seq)
        print(f"wrote {count} sequences to {args.out}")
        return 0
    if args.task == "train-quantizer":
        ckpt = training.train_quantizer(cfg, args.out)
        print(f"checkpoint: {ckpt}")
        return 0
    if args.task == "train-lm":
        ckpt = training.train_lm(cfg, args.quantizer_ckpt, args.out)
        print(f"checkpoint: {ckpt}")
        return 0
    if args.task == "compare-rvq":
        summary = training.compare_rvq(cfg, args.out)
        _emit(summary, args.fmt)
        return 0
    if args.task == "eval":
        report = training.evaluate(cfg, args.quantizer_ckpt, args.out,
                                   lm_ckpt=args.lm_ckpt)
        _emit(report, args.fmt)
        return 0
    if args.task == "generate":
        summary = training.generate(cfg, args.lm_ckpt, args.quantizer_ckpt,
                                    args.text, args.out)
        print(f"steps={summary['steps']} stop_reason={summary['stop_reason']}")
        return 0
    raise UsageError(f"unknown task {args.task!r}")


def main() -> None:
    try:
        sys.exit(run(sys.argv[1:]))
    except ClamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
