"""
PATrack Synth - Benchmark suite.

Clean train/eval splits plus one degraded copy of each split per configured
degradation kind. Each sequence owns a generator derived from
(seed, split, index), so sequences can be produced in any order.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path

import structlog

from patrack.config import DataSection
from patrack.core.rng import Rng
from patrack.modules.synth.degradation import apply_degradation
from patrack.modules.synth.render import gen_sequence
from patrack.modules.synth.schemas import Degradation, SceneSpec, SequenceRecord
from patrack.modules.synth.storage import write_dataset

logger = structlog.get_logger(__name__)

CLEAN_SPLITS = ("train", "eval")


def scene_for(data: DataSection, rng: Rng) -> SceneSpec:
    """Per-sequence scene variation around the configured frame and target sizes."""
    return SceneSpec(
        frame_size=data.frame_size,
        num_frames=data.frames,
        shape="disc" if rng.random() < 0.5 else "rectangle",
        target_size=float(data.target_size),
        aspect=rng.uniform(0.7, 1.4),
        intensity=rng.uniform(190.0, 235.0),
        trajectory="linear" if rng.random() < 0.5 else "sinusoidal",
        velocity=rng.uniform(0.5, 2.5),
        scale_amplitude=rng.uniform(0.0, 0.2),
        clutter=rng.uniform(0.1, 0.6),
        distractors=rng.integers(0, 3),
        modality=data.modality,
    )


def make_sequence(data: DataSection, seed: int, split: str, index: int) -> SequenceRecord:
    rng = Rng.derive(seed, split, index)
    return gen_sequence(scene_for(data, rng), rng.next_u64(), name=f"{split}-{index:03d}")


def default_suite(data: DataSection, seed: int) -> dict[str, list[SequenceRecord]]:
    counts = {"train": data.train_sequences, "eval": data.eval_sequences}
    suite: dict[str, list[SequenceRecord]] = {
        split: [make_sequence(data, seed, split, i) for i in range(counts[split])] for split in CLEAN_SPLITS
    }
    for kind in data.degradations:
        for split in CLEAN_SPLITS:
            name = f"{split}-{kind}"
            suite[name] = [
                apply_degradation(
                    record,
                    Degradation(kind=kind, severity=data.severity, seed=Rng.derive(seed, name, i).next_u64()),
                ).evolve(name=f"{name}-{i:03d}")
                for i, record in enumerate(suite[split])
            ]
    logger.info("suite_generated", splits=len(suite), sequences=sum(len(v) for v in suite.values()))
    return suite


def write_suite(suite: dict[str, list[SequenceRecord]], directory: str | Path) -> Path:
    root = Path(directory)
    for split, records in sorted(suite.items()):
        write_dataset(records, root / split)
    return root


def attribute_inventory(suite: dict[str, list[SequenceRecord]]) -> dict[str, int]:
    """Frame count per attribute tag across every split."""
    counts: Counter[str] = Counter()
    for records in suite.values():
        for record in records:
            for tags in record.attributes:
                counts.update(tags)
    return dict(sorted(counts.items()))
