"""
PATrack Evaluation - Report emission.

Every JSON document is schema-checked, then written with sorted keys so that
reruns are byte-identical. Curves and the attribute breakdown go out as CSV.
"""

from __future__ import annotations

import json
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import pandas as pd
import structlog

from patrack.core.schema_validator import SchemaValidator, load_schema
from patrack.exceptions import StorageException
from patrack.modules.evaluation.entropy import image_entropy
from patrack.modules.evaluation.schemas import Curve, EvalResult
from patrack.modules.synth.schemas import SequenceRecord

logger = structlog.get_logger(__name__)

SCHEMA_PACKAGE = "patrack.modules.evaluation"


def canonical_json(document: Any) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def write_json(
    document: dict[str, Any], path: Path, schema: str | None = None, package: str = SCHEMA_PACKAGE
) -> Path:
    if schema is not None:
        SchemaValidator.validate(document, load_schema(package, schema), name=schema)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(document), encoding="utf-8")
    except OSError as exc:
        raise StorageException(str(path), f"cannot write report: {exc.strerror}") from exc
    return path


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise StorageException(str(path), f"cannot write csv: {exc.strerror}") from exc
    return path


def curve_frame(curve: Curve) -> pd.DataFrame:
    return pd.DataFrame({"threshold": curve.thresholds, "value": curve.values})


def attribute_frame(result: EvalResult) -> pd.DataFrame:
    rows = [{"attribute": tag, **metrics.model_dump()} for tag, metrics in result.attributes.items()]
    return pd.DataFrame(rows, columns=["attribute", "frames", "pr", "sr"])


def write_eval_outputs(result: EvalResult, directory: str | Path) -> dict[str, Path]:
    """result.json plus success/precision/npr curve CSVs and attributes.csv."""
    out = Path(directory)
    paths = {
        "result": write_json(result.to_document(), out / "result.json", schema="result_schema.json"),
        "success_curve": _write_csv(curve_frame(result.success_curve), out / "success_curve.csv"),
        "precision_curve": _write_csv(curve_frame(result.precision_curve), out / "precision_curve.csv"),
        "npr_curve": _write_csv(curve_frame(result.npr_curve), out / "npr_curve.csv"),
        "attributes": _write_csv(attribute_frame(result), out / "attributes.csv"),
    }
    logger.info("eval_outputs_written", directory=str(out), sequences=len(result.sequences))
    return paths


def summary_table(result: EvalResult) -> str:
    """Fixed-width table: one row per sequence and a final ALL row."""
    columns = ["pr", "sr", "npr", "precision", "recall", "f_score"]
    rows = [
        {"sequence": s.name, "frames": s.metrics.frames, **s.metrics.model_dump(include=set(columns))}
        for s in result.sequences
    ]
    aggregate = result.aggregate
    rows.append({"sequence": "ALL", "frames": aggregate.frames, **aggregate.model_dump(include=set(columns))})
    frame = pd.DataFrame(rows, columns=["sequence", "frames", *columns])
    return frame.to_string(index=False, float_format=lambda v: f"{v:.3f}")


# =============================================================================
# Entropy
# =============================================================================


def entropy_report(records: Sequence[SequenceRecord]) -> dict[str, Any]:
    """Mean per-frame entropy per modality present in `records`."""
    totals: dict[str, float] = defaultdict(float)
    frames: dict[str, int] = defaultdict(int)
    for record in records:
        for rgb, x in zip(record.rgb, record.x, strict=True):
            totals["rgb"] += image_entropy(rgb)
            frames["rgb"] += 1
            totals[record.modality] += image_entropy(x)
            frames[record.modality] += 1
    return {
        "entropy": {name: totals[name] / frames[name] for name in sorted(frames)},
        "frames": dict(sorted(frames.items())),
        "sequences": len(records),
    }


def write_entropy_report(report: dict[str, Any], directory: str | Path) -> Path:
    return write_json(report, Path(directory) / "entropy.json", schema="entropy_schema.json")
