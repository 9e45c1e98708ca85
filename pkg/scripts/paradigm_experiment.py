"""
Desk-scale paradigm experiment.

Per seed: pretrain the RGB base on clean synthetic sequences, freeze it, tune
adapters on the low-illumination RGB+X training split, then evaluate on the
held-out low-illumination split:

    rgb_only     frozen base model, RGB crops only
    late_fusion  frozen backbone on both streams, mean of final search tokens
    mda_only     MDA at every layer, no CEA, no HA
    full         MDA + CEA + HA

Usage:
    python scripts/paradigm_experiment.py --out runs/paradigm [--config cfg.json] [--seeds 0 1 2]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import pandas as pd
import structlog

from patrack.config import RunConfig, get_settings, load_run_config, write_config_echo
from patrack.exceptions import PatrackException
from patrack.modules.evaluation.metrics import evaluate_sequences
from patrack.modules.evaluation.report import canonical_json
from patrack.modules.pipeline.model import PatrackModel, attach_adapters, late_fusion_spec
from patrack.modules.pipeline.schemas import CropParams
from patrack.modules.pipeline.tracker import ModelTracker, track_all
from patrack.modules.pipeline.training import adapter_tune, pretrain_rgb
from patrack.modules.synth.schemas import SequenceRecord
from patrack.modules.synth.suite import default_suite
from patrack.observability import configure_logging

logger = structlog.get_logger("paradigm_experiment")

DEGRADATION = "low_illumination"
MIN_GAIN = 0.05


def success(model: PatrackModel, records: list[SequenceRecord], config: RunConfig) -> float:
    crop = CropParams.from_config(config)
    tracked = track_all(records, lambda _: ModelTracker(model, crop), threads=get_settings().threads)
    return evaluate_sequences(tracked, config.eval).aggregate.sr


def run_seed(config: RunConfig, seed: int) -> dict[str, float]:
    config = config.model_copy(update={"train": config.train.model_copy(update={"seed": seed})})
    suite = default_suite(config.data, seed)
    base = pretrain_rgb(config, suite["train"])
    degraded_train, degraded_eval = suite[f"train-{DEGRADATION}"], suite[f"eval-{DEGRADATION}"]

    mda_only = config.adapters.model_copy(update={"use_cea": False, "use_ha": False})
    scores = {
        "rgb_only": success(base, degraded_eval, config),
        "late_fusion": success(attach_adapters(base, late_fusion_spec(), seed), degraded_eval, config),
        "mda_only": success(
            adapter_tune(base, config.model_copy(update={"adapters": mda_only}), degraded_train),
            degraded_eval,
            config,
        ),
        "full": success(adapter_tune(base, config, degraded_train), degraded_eval, config),
    }
    logger.info("seed_complete", seed=seed, **scores)
    return scores


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args(argv)
    configure_logging()

    try:
        config = load_run_config(args.config)
        if DEGRADATION not in config.data.degradations:
            config = config.model_copy(
                update={"data": config.data.model_copy(update={"degradations": [DEGRADATION]})}
            )
        frame = pd.DataFrame([run_seed(config, seed) for seed in args.seeds], index=args.seeds)
    except PatrackException as exc:
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return exc.exit_code

    means = frame.mean()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(config, out)
    document = {
        "seeds": args.seeds,
        "success": {name: frame[name].tolist() for name in frame.columns},
        "mean": means.to_dict(),
        "gain_over_rgb": float(means["full"] - means["rgb_only"]),
        "full_vs_mda_only": float(means["full"] - means["mda_only"]),
    }
    (out / "paradigm.json").write_text(canonical_json(document), encoding="utf-8")
    print(frame.to_string(float_format=lambda v: f"{v:.3f}"))
    print(f"mean: {', '.join(f'{k}={v:.3f}' for k, v in means.items())}")

    ok = document["gain_over_rgb"] >= MIN_GAIN and document["full_vs_mda_only"] >= 0.0
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
