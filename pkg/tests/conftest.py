"""Shared fixtures: tiny model geometry, adapter layouts and synthetic sequences."""

import numpy as np
import pytest

from patrack.config import RunConfig
from patrack.core.rng import Rng
from patrack.modules.backbone.schemas import BackboneConfig
from patrack.modules.pipeline.schemas import AdapterSpec
from patrack.modules.synth.render import gen_sequence
from patrack.modules.synth.schemas import SceneSpec

TINY_BACKBONE = {
    "embed_dim": 16,
    "layers": 3,
    "heads": 2,
    "patch": 4,
    "template_size": 16,
    "search_size": 32,
    "mlp_ratio": 2,
    "head_channels": 8,
}
TINY_SCHEDULE = {"1": "MDA", "2": "CEA", "3": "MDA"}


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def tiny_backbone():
    return BackboneConfig(**TINY_BACKBONE)


@pytest.fixture
def tiny_spec():
    return AdapterSpec(mda_dim=8, cea_dim=8, ha_dim=8, cea_heads=8, schedule_override=TINY_SCHEDULE)


@pytest.fixture
def tiny_run_config():
    return RunConfig.model_validate(
        {
            "backbone": TINY_BACKBONE,
            "adapters": {"schedule_override": TINY_SCHEDULE},
            "train": {"epochs": 2, "batch": 2, "steps_per_epoch": 2, "seed": 3},
            "data": {
                "frame_size": 48,
                "frames": 6,
                "target_size": 10,
                "train_sequences": 2,
                "eval_sequences": 1,
            },
        }
    )


@pytest.fixture
def scene():
    return SceneSpec(frame_size=48, num_frames=6, target_size=10.0, velocity=1.5, distractors=1)


@pytest.fixture
def sequence(scene):
    return gen_sequence(scene, seed=7, name="seq-a")


@pytest.fixture
def u8_image():
    """Factory for seeded uint8 C x H x W images."""

    def make(seed: int, shape: tuple[int, ...]) -> np.ndarray:
        return np.floor(Rng(seed).uniform_array(0.0, 256.0, shape)).astype(np.uint8)

    return make
