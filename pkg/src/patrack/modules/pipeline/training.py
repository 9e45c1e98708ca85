"""
PATrack Pipeline - Training.

Two phases:
1. pretrain_rgb: backbone + head trained jointly on RGB template/search pairs.
2. adapter_tune: the pretrained backbone and head are frozen, adapters
   (and HA) are trained on RGB+X pairs.

Samples take the template from one frame and the search window from a nearby
frame of the same sequence, with seeded center/scale jitter so the target is
not always centered. Every draw comes from Rng.derive(seed, ...), so a run is
a pure function of (config, data).
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from collections.abc import Sequence

import structlog

from patrack.config import RunConfig, TrainSection
from patrack.core import functional as F
from patrack.core.checkpoint import tensor_digest
from patrack.core.optim import AdamW, ExponentialDecay
from patrack.core.rng import Rng
from patrack.core.tensor import GradTape
from patrack.exceptions import InputException, IntegrityException, NumericFailureException, UsageException
from patrack.modules.head.schemas import LossWeights
from patrack.modules.head.service import head_loss
from patrack.modules.pipeline.cropping import crop_regions
from patrack.modules.pipeline.model import (
    PatrackModel,
    attach_adapters,
    backbone_config,
    build_base_model,
    forward_pair,
)
from patrack.modules.pipeline.schemas import AdapterSpec, CropParams, TrainingSample
from patrack.modules.synth.schemas import FrameBox, SequenceRecord
from patrack.observability.metrics import TrainingMetrics

logger = structlog.get_logger(__name__)

MAX_FRAME_GAP = 10
MAX_DRAWS = 20


def _jitter(box: FrameBox, rng: Rng, train: TrainSection) -> FrameBox:
    cx, cy = box.center
    side = box.scale
    cx += rng.uniform(-train.jitter_center, train.jitter_center) * side
    cy += rng.uniform(-train.jitter_center, train.jitter_center) * side
    factor = math.exp(rng.uniform(-train.jitter_scale, train.jitter_scale))
    return FrameBox.from_center(cx, cy, box.w * factor, box.h * factor)


def sample_pair(
    record: SequenceRecord, rng: Rng, crop: CropParams, train: TrainSection
) -> TrainingSample | None:
    """One template/search pair from `record`, or None when no valid pair was drawn."""
    visible = [i for i, v in enumerate(record.visible) if v]
    if not visible:
        return None
    for _ in range(MAX_DRAWS):
        t = visible[rng.integers(0, len(visible))]
        s = min(max(t + rng.integers(-MAX_FRAME_GAP, MAX_FRAME_GAP + 1), 0), record.num_frames - 1)
        if not record.visible[s]:
            continue
        template = crop_regions(
            record.rgb[t], record.x[t], record.boxes[t], crop.template_factor, crop.template_size
        )
        window = _jitter(record.boxes[s], rng, train)
        search = crop_regions(record.rgb[s], record.x[s], window, crop.search_factor, crop.search_size)
        target = search.geometry.normalize(record.boxes[s])
        x1, y1, x2, y2 = target.corners()
        if x1 < 0 or y1 < 0 or x2 > 1 or y2 > 1:
            continue
        return TrainingSample(template.rgb, template.x, search.rgb, search.x, target)
    return None


def sample_batch(
    records: Sequence[SequenceRecord], rng: Rng, size: int, crop: CropParams, train: TrainSection
) -> list[TrainingSample]:
    batch: list[TrainingSample] = []
    for _ in range(size * MAX_DRAWS):
        if len(batch) == size:
            break
        sample = sample_pair(records[rng.integers(0, len(records))], rng, crop, train)
        if sample is not None:
            batch.append(sample)
    if not batch:
        raise InputException("no visible frames to train on", details={"sequences": len(records)})
    return batch


def train_step(
    model: PatrackModel,
    batch: Sequence[TrainingSample],
    optimizer: AdamW,
    loss_weights: LossWeights | None = None,
) -> float:
    """Mean head loss over the batch, one backward pass, one AdamW update of the trainable set."""
    optimizer.zero_grad()
    components: dict[str, float] = defaultdict(float)
    with GradTape() as tape:
        totals = []
        for sample in batch:
            _, maps = forward_pair(
                model, sample.template_rgb, sample.template_x, sample.search_rgb, sample.search_x
            )
            loss = head_loss(maps, sample.target, loss_weights)
            totals.append(loss.total)
            for key, value in loss.components.items():
                components[key] += value / len(batch)
        total = totals[0]
        for extra in totals[1:]:
            total = F.add(total, extra)
        total = F.scale(total, 1.0 / len(batch))
        value = total.item()
        if not math.isfinite(value):
            tape.clear()
            raise NumericFailureException(
                "training loss is not finite", details={"components": dict(components)}
            )
        if optimizer.params:
            tape.backward(total)
        else:
            tape.clear()
    optimizer.step()
    return value


def _frozen_digests(model: PatrackModel) -> dict[str, int]:
    params = model.named_parameters()
    return {name: tensor_digest(params[name].data) for name in sorted(model.frozen_names())}


def _check_frozen(model: PatrackModel, before: dict[str, int]) -> None:
    for name, digest in _frozen_digests(model).items():
        if digest != before[name]:
            raise IntegrityException("<training>", name, before[name], digest)


def fit(
    model: PatrackModel,
    records: Sequence[SequenceRecord],
    config: RunConfig,
    metrics: TrainingMetrics | None = None,
) -> TrainingMetrics:
    """Epoch loop with per-epoch exponential lr decay.

    Raises IntegrityException if a frozen tensor changed over the run.
    """
    train = config.train
    if train.mode != model.mode:
        raise UsageException(f"config mode '{train.mode}' does not match model mode '{model.mode}'")
    if not records:
        raise InputException("training dataset is empty")
    metrics = metrics or TrainingMetrics()
    crop = CropParams.from_config(config)
    optimizer = AdamW(model.trainable_parameters(), lr=train.lr, weight_decay=train.weight_decay)
    decay = ExponentialDecay(train.lr, train.lr_decay_ratio)
    frozen_before = _frozen_digests(model)

    for epoch in range(train.epochs):
        optimizer.lr = decay(epoch)
        metrics.start_epoch(epoch, optimizer.lr)
        for step in range(train.steps_per_epoch):
            rng = Rng.derive(train.seed, "batch", epoch, step)
            batch = sample_batch(records, rng, train.batch, crop, train)
            started = time.perf_counter()
            try:
                loss = train_step(model, batch, optimizer)
            except NumericFailureException as exc:
                metrics.record_error(exc.code)
                raise
            metrics.record_step(epoch, loss, (time.perf_counter() - started) * 1000)
        record = metrics.epochs()[-1]
        logger.info("epoch_complete", mode=model.mode, epoch=epoch + 1, loss=record.mean_loss, lr=record.lr)
    _check_frozen(model, frozen_before)
    return metrics


def with_mode(config: RunConfig, mode: str) -> RunConfig:
    return config.model_copy(update={"train": config.train.model_copy(update={"mode": mode})})


def pretrain_rgb(
    config: RunConfig, records: Sequence[SequenceRecord], metrics: TrainingMetrics | None = None
) -> PatrackModel:
    """Base model trained from scratch on the RGB frames of `records`."""
    if not records:
        raise InputException("pretraining needs at least one sequence")
    model = build_base_model(backbone_config(config), seed=config.train.seed)
    fit(model, records, with_mode(config, "pretrain_rgb"), metrics)
    return model


def adapter_tune(
    base: PatrackModel,
    config: RunConfig,
    records: Sequence[SequenceRecord],
    metrics: TrainingMetrics | None = None,
) -> PatrackModel:
    """Attach adapters per config to a pretrained base and train them with the base frozen."""
    if base.mode != "pretrain_rgb":
        raise UsageException("adapter tuning starts from a pretrain_rgb checkpoint")
    model = attach_adapters(base, AdapterSpec.from_section(config.adapters), seed=config.train.seed)
    fit(model, records, with_mode(config, "adapter_tune"), metrics)
    return model
