"""
PATrack Configuration Module.

Two layers:
- Settings: process-level knobs read from PATRACK_* environment variables.
- RunConfig: the JSON run document (backbone, adapters, train, data, eval, crop).
  Unknown keys are rejected and every default lives on the field.
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from patrack.exceptions import ConfigurationException, StorageException

Modality = Literal["thermal", "depth", "event"]
Preset = Literal["tiny", "base", "large"]
TrainMode = Literal["pretrain_rgb", "adapter_tune"]
SchedulePreset = Literal["paper", "none", "even-2", "even-4", "even-6"]
DegradationKind = Literal[
    "low_illumination", "high_illumination", "occlusion", "thermal_crossover", "fast_motion"
]

PRESET_DIMS: dict[str, dict[str, int]] = {
    "tiny": {"mda": 8, "cea": 8, "ha": 8},
    "base": {"mda": 192, "cea": 8, "ha": 8},
    "large": {"mda": 192, "cea": 192, "ha": 192},
}


class Settings(BaseSettings):
    """Process settings."""

    model_config = SettingsConfigDict(env_prefix="PATRACK_", extra="ignore")

    threads: int = Field(default=1, ge=1, description="Worker cap for sequence evaluation")
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(default="INFO", description="Log level")
    log_json: bool = Field(default=False, description="Emit JSON log lines instead of key=value")
    debug_numerics: bool = Field(default=False, description="Assert no NaN after every tensor operation")


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# =============================================================================
# Run configuration
# =============================================================================


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackboneSection(_Section):
    embed_dim: int = Field(default=32, ge=1, description="Token channels C")
    layers: int = Field(default=12, ge=1, description="Encoder depth N")
    heads: int = Field(default=4, ge=1, description="Attention heads in MSA")
    patch: int = Field(default=8, ge=1, description="Patch size P in pixels")
    template_size: int = Field(default=32, ge=1, description="Square template crop side in pixels")
    search_size: int = Field(default=64, ge=1, description="Square search crop side in pixels")
    mlp_ratio: int = Field(default=4, ge=1, description="MLP hidden width as a multiple of C")
    head_channels: int = Field(default=256, ge=1, description="Hidden channels of each head stack")


class AblationSection(_Section):
    mda_use_avg: bool = True
    mda_use_max: bool = True
    mda_use_dwconv: bool = True
    cea_fusion_guided: bool = True
    cea_use_conv: bool = True
    cea_use_skip: bool = True

    @model_validator(mode="after")
    def _one_mda_branch(self) -> AblationSection:
        if not (self.mda_use_avg or self.mda_use_max or self.mda_use_dwconv):
            raise ValueError("at least one MDA branch must stay enabled")
        return self


class AdaptersSection(_Section):
    preset: Preset = Field(default="tiny", description="Adapter hidden dims: tiny | base | large")
    schedule: SchedulePreset = Field(default="paper", description="Named CEA placement preset")
    schedule_override: dict[str, Literal["MDA", "CEA"]] | None = Field(
        default=None, description="Explicit layer -> kind map (1-based keys); wins over `schedule`"
    )
    use_mda: bool = True
    use_cea: bool = True
    use_ha: bool = True
    cea_heads: int = Field(default=8, ge=1, description="Heads of the CEA cross-attention")
    ablation: AblationSection = Field(default_factory=AblationSection)

    @property
    def dims(self) -> dict[str, int]:
        return dict(PRESET_DIMS[self.preset])


class TrainSection(_Section):
    lr: float = Field(default=4e-4, ge=0.0, description="Initial learning rate")
    weight_decay: float = Field(default=1e-4, ge=0.0)
    lr_decay_ratio: float = Field(default=0.8, gt=0.0, le=1.0, description="Per-epoch decay")
    epochs: int = Field(default=4, ge=1)
    batch: int = Field(default=4, ge=1)
    steps_per_epoch: int = Field(default=25, ge=1)
    seed: int = Field(default=0, ge=0)
    mode: TrainMode = "adapter_tune"
    jitter_center: float = Field(
        default=0.25, ge=0.0, description="Search-crop center jitter, fraction of box side"
    )
    jitter_scale: float = Field(default=0.15, ge=0.0, description="Search-crop log-scale jitter")


class DataSection(_Section):
    path: str | None = None
    modality: Modality = "thermal"
    frame_size: int = Field(default=96, ge=16)
    frames: int = Field(default=30, ge=1)
    target_size: int = Field(default=16, ge=2)
    train_sequences: int = Field(default=20, ge=0)
    eval_sequences: int = Field(default=10, ge=0)
    degradations: list[DegradationKind] = Field(default_factory=lambda: ["low_illumination"])
    severity: float = Field(default=0.8, ge=0.0, le=1.0)


class EvalSection(_Section):
    precision_threshold: float = Field(default=20.0, gt=0.0, description="PR center-error threshold in px")
    success_samples: int = Field(default=21, ge=2)
    npr_samples: int = Field(default=101, ge=2)
    npr_max: float = Field(default=0.5, gt=0.0)
    f_samples: int = Field(default=101, ge=2)


class CropSection(_Section):
    template_factor: float = Field(default=2.0, ge=1.0)
    search_factor: float = Field(default=4.0, ge=1.0)


class RunConfig(_Section):
    """The full run document."""

    backbone: BackboneSection = Field(default_factory=BackboneSection)
    adapters: AdaptersSection = Field(default_factory=AdaptersSection)
    train: TrainSection = Field(default_factory=TrainSection)
    data: DataSection = Field(default_factory=DataSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    crop: CropSection = Field(default_factory=CropSection)

    @field_validator("adapters")
    @classmethod
    def _override_keys(cls, adapters: AdaptersSection) -> AdaptersSection:
        if adapters.schedule_override is not None:
            for key in adapters.schedule_override:
                if not key.isdigit() or int(key) < 1:
                    raise ValueError(f"schedule_override key '{key}' is not a 1-based layer index")
        return adapters


def _key_path(error: dict) -> str:
    return ".".join(str(p) for p in error.get("loc", ()))


def parse_run_config(payload: dict) -> RunConfig:
    """Validate a config mapping; pydantic errors become ConfigurationException."""
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = _key_path(first)
        raise ConfigurationException(
            f"invalid config at '{key}': {first['msg']}",
            key=key,
            details={"errors": [f"{_key_path(e)}: {e['msg']}" for e in exc.errors()]},
        ) from exc


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageException(str(path), f"cannot read config: {exc.strerror}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationException(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(payload, dict):
        raise ConfigurationException(f"{path}: top level must be an object")
    return parse_run_config(payload)


def dump_run_config(config: RunConfig) -> str:
    """Canonical JSON for the effective config (sorted keys, trailing newline)."""
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def write_config_echo(config: RunConfig, directory: str | Path) -> Path:
    target = Path(directory) / "config.json"
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(dump_run_config(config), encoding="utf-8")
    except OSError as exc:
        raise StorageException(str(target), f"cannot write config echo: {exc.strerror}") from exc
    return target
