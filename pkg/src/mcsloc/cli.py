"""Command-line entry point.

Exit codes: 0 success, 2 config or validation error, 3 data-format error,
4 numeric failure during training, 1 any other I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from mcsloc import pipeline
from mcsloc.config import default_config_dict, load_config
from mcsloc.errors import ConfigError, DomainError, FormatError, ShapeError, TrainingError, ValidationError

log = logging.getLogger("mcsloc")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config; missing keys take their defaults")
    common.add_argument("--seed", type=_u64, help="master seed, overrides the config")
    common.add_argument("--jobs", type=_positive, default=1, help="worker threads for generation and evaluation")
    common.add_argument("--out", type=Path, default=Path("workspace"), help="workspace directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mcsloc", description="MCS detection and MCS-map localization.")
    p.add_argument("--print-default-config", action="store_true", help="print the default config and exit")
    sub = p.add_subparsers(dest="command")

    sub.add_parser("gen-dataset", parents=[common], help="synthesize labelled recordings")
    t = sub.add_parser("train", parents=[common], help="train the classifier")
    t.add_argument("--dataset", type=Path, help="dataset directory (default <out>/dataset)")
    e = sub.add_parser("eval-mcs", parents=[common], help="confusion matrix on the validation split")
    e.add_argument("--dataset", type=Path, help="dataset directory (default <out>/dataset)")
    e.add_argument("--checkpoint", type=Path, help="network checkpoint (default <out>/model/model.ckpt)")
    s = sub.add_parser("simulate-locate", parents=[common], help="localize in a simulated room")
    s.add_argument("--checkpoint", type=Path, help="network checkpoint (default <out>/model/model.ckpt)")
    sub.add_parser("report", parents=[common], help="summarize everything found in the workspace")
    return p


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.seed)  # validated before anything touches the disk
    out: Path = args.out
    ckpt = getattr(args, "checkpoint", None) or out / "model" / "model.ckpt"
    data = getattr(args, "dataset", None) or out / "dataset"

    if args.command == "gen-dataset":
        m = pipeline.cmd_gen_dataset(cfg, out / "dataset", args.jobs)
        print(f"{len(m.recordings)} recordings written to {out / 'dataset'}")
    elif args.command == "train":
        s = pipeline.cmd_train(cfg, data, out / "model", args.jobs)
        print(f"trained {s['epochs']} epochs, validation accuracy {s['final_val_accuracy']}")
    elif args.command == "eval-mcs":
        s = pipeline.cmd_eval_mcs(cfg, ckpt, data, out / "eval", args.jobs)
        print(f"accuracy {s['accuracy']:.6f}  group accuracy {s['group_accuracy']:.6f}")
    elif args.command == "simulate-locate":
        s = pipeline.cmd_simulate_locate(cfg, ckpt, out / "locate", args.jobs)
        print(f"exact {s['exact_accuracy']:.4f}  within one {s['within_one_accuracy']:.4f}  "
              f"merged {s['merged_exact_accuracy']:.4f}")
    elif args.command == "report":
        _, gaps = pipeline.cmd_report(out, cfg)
        print(f"report written to {out / 'report.md'}")
        for g in gaps:
            print(f"warning: missing {g}", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        print(json.dumps(default_config_dict(), indent=2))
        return 0
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return run(args)
    except (ConfigError, ValidationError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
