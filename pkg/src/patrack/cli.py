"""
PATrack CLI.

Subcommands:
    synth      generate the synthetic RGB+X benchmark
    pretrain   train the RGB base model (backbone + head)
    train      attach adapters to a base checkpoint and tune them
    eval       track every sequence of a dataset and emit metrics
    gradcheck  finite-difference verification of every component
    params     parameter and compute accounting
    entropy    mean per-modality image entropy of a dataset

Exit status is the exit_code of the PatrackException that stopped the run
(2 config/usage, 3 I/O, 4 numeric, 5 integrity, 6 verification).
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path

import pandas as pd
import structlog

from patrack import __version__
from patrack.config import RunConfig, get_settings, load_run_config, write_config_echo
from patrack.core.checkpoint import load_checkpoint, save_checkpoint
from patrack.exceptions import PatrackException, UsageException
from patrack.modules.evaluation.metrics import evaluate_sequences
from patrack.modules.evaluation.report import (
    entropy_report,
    summary_table,
    write_entropy_report,
    write_eval_outputs,
)
from patrack.modules.pipeline.accounting import count_params, params_table, write_params_report
from patrack.modules.pipeline.model import PatrackModel, build_model
from patrack.modules.pipeline.schemas import CropParams
from patrack.modules.pipeline.tracker import ModelTracker, OracleTracker, Tracker, track_all
from patrack.modules.pipeline.training import adapter_tune, pretrain_rgb, with_mode
from patrack.modules.pipeline.verification import corrupt_gradients, run_gradcheck
from patrack.modules.synth.schemas import SequenceRecord
from patrack.modules.synth.storage import read_dataset
from patrack.modules.synth.suite import attribute_inventory, default_suite, write_suite
from patrack.observability import configure_logging, get_training_metrics

logger = structlog.get_logger(__name__)


def _data_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    path = args.data or config.data.path
    if path is None:
        raise UsageException("no dataset given: pass --data or set data.path in the config")
    return Path(path)


def _read_records(args: argparse.Namespace, config: RunConfig) -> list[SequenceRecord]:
    return read_dataset(_data_dir(args, config))


def _save_model(model: PatrackModel, path: str, config: RunConfig) -> None:
    target = save_checkpoint(path, model.to_checkpoint())
    write_config_echo(config, target.parent)
    print(f"checkpoint: {target}")


def _print_epochs() -> None:
    for record in get_training_metrics().epochs():
        print(f"epoch {record.epoch + 1}: loss {record.mean_loss:.6f} lr {record.lr:.3e}")


# =============================================================================
# Commands
# =============================================================================


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    seed = config.train.seed if args.seed is None else args.seed
    suite = default_suite(config.data, seed)
    root = write_suite(suite, args.out)
    write_config_echo(config, root)
    for split, records in sorted(suite.items()):
        print(f"{split}: {len(records)} sequences")
    print("attributes: " + ", ".join(f"{tag}={n}" for tag, n in attribute_inventory(suite).items()))
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = with_mode(load_run_config(args.config), "pretrain_rgb")
    model = pretrain_rgb(config, _read_records(args, config), get_training_metrics())
    _print_epochs()
    _save_model(model, args.out_checkpoint, config)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = with_mode(load_run_config(args.config), "adapter_tune")
    base = PatrackModel.from_checkpoint(load_checkpoint(args.init_checkpoint), source=args.init_checkpoint)
    model = adapter_tune(base, config, _read_records(args, config), get_training_metrics())
    _print_epochs()
    _save_model(model, args.out_checkpoint, config)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    if args.oracle == (args.checkpoint is not None):
        raise UsageException("eval needs exactly one of --checkpoint or --oracle")
    records = _read_records(args, config)
    if args.oracle:

        def make_tracker(record: SequenceRecord) -> Tracker:
            return OracleTracker(record)

    else:
        model = PatrackModel.from_checkpoint(load_checkpoint(args.checkpoint), source=args.checkpoint)
        crop = CropParams.from_config(config)

        def make_tracker(record: SequenceRecord) -> Tracker:
            return ModelTracker(model, crop)

    tracked = track_all(records, make_tracker, threads=get_settings().threads)
    result = evaluate_sequences(tracked, config.eval)
    write_eval_outputs(result, args.out)
    write_config_echo(config, args.out)
    print(summary_table(result))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    hook = corrupt_gradients if args.corrupt else None
    results = run_gradcheck(samples=args.samples, seed=config.train.seed, hook=hook)
    columns = ["component", "max_rel_error", "tolerance", "passed"]
    frame = pd.DataFrame([r.to_dict() for r in results], columns=columns)
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.3e}"))
    failed = [r for r in results if not r.passed]
    if failed:
        max(failed, key=lambda r: r.max_rel_error / r.tolerance).raise_for_failure()
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    report = count_params(build_model(config))
    if args.out:
        write_params_report(report, args.out)
        write_config_echo(config, args.out)
    if args.json:
        print(json.dumps(report.to_document(), indent=2, sort_keys=True))
    else:
        print(params_table(report))
    return 0


def cmd_entropy(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    report = entropy_report(_read_records(args, config))
    if args.out:
        write_entropy_report(report, args.out)
        write_config_echo(config, args.out)
    for modality, value in report["entropy"].items():
        print(f"{modality}: {value:.4f} bits ({report['frames'][modality]} frames)")
    return 0


# =============================================================================
# Entry point
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patrack", description="Desk-scale multi-modal tracking with adapters"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="override PATRACK_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="run config JSON (defaults apply when omitted)")
        p.set_defaults(handler=handler)
        return p

    p = command("synth", cmd_synth, "generate the synthetic benchmark")
    p.add_argument("--out", required=True, help="dataset root; one directory per split")
    p.add_argument("--seed", type=int, default=None, help="generator seed (default train.seed)")

    p = command("pretrain", cmd_pretrain, "train the RGB base model")
    p.add_argument("--data", default=None, help="directory of sequences")
    p.add_argument("--out-checkpoint", required=True)

    p = command("train", cmd_train, "tune adapters on a frozen base checkpoint")
    p.add_argument("--data", default=None, help="directory of sequences")
    p.add_argument("--init-checkpoint", required=True, help="pretrain_rgb checkpoint")
    p.add_argument("--out-checkpoint", required=True)

    p = command("eval", cmd_eval, "track a dataset and write metrics")
    p.add_argument("--data", default=None, help="directory of sequences")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="ground-truth tracker (plumbing check)")
    p.add_argument("--out", required=True)

    p = command("gradcheck", cmd_gradcheck, "finite-difference gradient verification")
    p.add_argument("--samples", type=int, default=50, help="coordinates checked per component")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = command("params", cmd_params, "parameter and compute accounting")
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.add_argument("--out", default=None, help="also write params.json here")

    p = command("entropy", cmd_entropy, "mean image entropy per modality")
    p.add_argument("--data", default=None, help="directory of sequences")
    p.add_argument("--out", default=None, help="also write entropy.json here")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(level=args.log_level)
    try:
        return args.handler(args)
    except PatrackException as exc:
        logger.error("command_failed", command=args.command, code=exc.code, details=exc.details)
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
