"""
PATrack Pipeline - Parameter and compute accounting.

Counts are taken from the instantiated weight records, split into backbone,
head, MDA, CEA and HA. Compute is a multiply-accumulate estimate of one
forward pass (pooling, softmax and elementwise work are not counted).
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import pandas as pd
from pydantic import BaseModel, Field

from patrack.modules.adapters.cea import cea_param_count
from patrack.modules.adapters.ha import ha_param_count
from patrack.modules.adapters.mda import concat_width, mda_param_count
from patrack.modules.adapters.schemas import AdapterAblationFlags, CeaLayer, MdaLayer
from patrack.modules.backbone.schemas import BackboneConfig
from patrack.modules.backbone.service import backbone_param_count
from patrack.modules.evaluation.report import write_json
from patrack.modules.head.service import head_param_count
from patrack.modules.parameters import count
from patrack.modules.pipeline.model import PatrackModel
from patrack.modules.pipeline.schemas import AdapterSpec

SCHEMA_PACKAGE = "patrack.modules.pipeline"
COMPONENTS = ("backbone", "head", "mda", "cea", "ha")
FROZEN_COMPONENTS = frozenset({"backbone", "head"})


class ComponentCount(BaseModel):
    total: int = Field(ge=0)
    trainable: int = Field(ge=0)
    frozen: int = Field(ge=0)
    macs: int = Field(ge=0, description="Multiply-accumulates of one forward pass")


class ParamReport(BaseModel):
    mode: str
    components: dict[str, ComponentCount]
    total: int
    trainable: int
    frozen: int
    trainable_fraction: float
    macs: int

    def to_document(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


# =============================================================================
# Parameters
# =============================================================================


def _component_objects(model: PatrackModel) -> dict[str, list[Any]]:
    groups: dict[str, list[Any]] = {name: [] for name in COMPONENTS}
    groups["backbone"].append(model.backbone)
    groups["head"].append(model.head)
    if model.adapters is not None:
        for layer in model.adapters.layers.values():
            groups["mda" if isinstance(layer, MdaLayer) else "cea"].append(layer)
        if model.adapters.ha is not None:
            groups["ha"].append(model.adapters.ha)
    return groups


def count_params(model: PatrackModel) -> ParamReport:
    """Backbone and head always count as frozen; only adapter weights are trainable."""
    macs = estimate_flops(model)
    components: dict[str, ComponentCount] = {}
    for name, objects in _component_objects(model).items():
        total = sum(count(obj) for obj in objects)
        frozen = total if name in FROZEN_COMPONENTS else 0
        components[name] = ComponentCount(
            total=total, trainable=total - frozen, frozen=frozen, macs=macs[name]
        )
    total = sum(c.total for c in components.values())
    trainable = sum(c.trainable for c in components.values())
    return ParamReport(
        mode=model.mode,
        components=components,
        total=total,
        trainable=trainable,
        frozen=total - trainable,
        trainable_fraction=trainable / total if total else 0.0,
        macs=sum(macs.values()),
    )


def expected_counts(config: BackboneConfig, spec: AdapterSpec, cea_layers: int) -> dict[str, int]:
    """Closed-form per-component counts for an adapted model."""
    layers = config.layers
    mda_layers = (layers - cea_layers) if spec.use_mda else 0
    return {
        "backbone": backbone_param_count(config),
        "head": head_param_count(config.embed_dim, config.head_channels),
        "mda": 4 * mda_layers * mda_param_count(config.embed_dim, spec.mda_dim, spec.ablation.mda_branches),
        "cea": 2 * cea_layers * cea_param_count(config.embed_dim, spec.cea_dim, spec.ablation.cea_use_conv),
        "ha": ha_param_count(config.embed_dim, spec.ha_dim) if spec.use_ha else 0,
    }


# =============================================================================
# Compute
# =============================================================================


def _mda_macs(n: int, embed_dim: int, reduced: int, branches: tuple[str, ...]) -> int:
    half, quarter = reduced // 2, reduced // 4
    macs = n * embed_dim * reduced + n * concat_width(reduced, branches) * embed_dim
    if "max" in branches:
        macs += n * quarter * half
    if "dwconv" in branches:
        macs += n * (quarter * half + half * 9)
    return macs


def _cea_macs(n: int, embed_dim: int, reduced: int, flags: AdapterAblationFlags) -> int:
    macs = 2 * n * embed_dim * reduced + 2 * 2 * n * n * reduced + 2 * n * reduced * embed_dim
    if flags.cea_use_conv:
        macs += n * reduced * 2 * reduced * 9 + 4 * n * reduced * reduced * 9
    return macs


def estimate_flops(model: PatrackModel) -> dict[str, int]:
    """Multiply-accumulates per component for one tracking forward pass."""
    cfg = model.config
    c, hidden = cfg.embed_dim, cfg.hidden_dim
    n = cfg.n_template + cfg.n_search
    streams = 1 if model.mode == "pretrain_rgb" else 2
    per_layer = n * 3 * c * c + 2 * n * n * c + n * c * c + 2 * n * c * hidden
    embed = n * c * 3 * cfg.patch * cfg.patch
    macs = {name: 0 for name in COMPONENTS}
    macs["backbone"] = streams * (embed + cfg.layers * per_layer)
    ch = cfg.head_channels
    macs["head"] = cfg.n_search * (3 * c * ch * 9 + ch * 9 * 5)
    if model.adapters is None or model.spec is None:
        return macs
    spec = model.spec
    for layer in model.adapters.layers.values():
        if isinstance(layer, MdaLayer):
            macs["mda"] += 4 * _mda_macs(n, c, spec.mda_dim, spec.ablation.mda_branches)
        elif isinstance(layer, CeaLayer):
            macs["cea"] += 2 * _cea_macs(n, c, spec.cea_dim, spec.ablation)
    if model.adapters.ha is not None:
        macs["ha"] = 2 * cfg.n_search * c * spec.ha_dim
    return macs


# =============================================================================
# Output
# =============================================================================


def params_table(report: ParamReport) -> str:
    rows = [{"component": name, **report.components[name].model_dump()} for name in COMPONENTS]
    rows.append(report.model_dump(include={"total", "trainable", "frozen", "macs"}) | {"component": "ALL"})
    frame = pd.DataFrame(rows, columns=["component", "total", "trainable", "frozen", "macs"])
    return f"{frame.to_string(index=False)}\ntrainable fraction: {report.trainable_fraction:.4f}"


def write_params_report(report: ParamReport, directory: str | Path) -> Path:
    return write_json(
        report.to_document(),
        Path(directory) / "params.json",
        schema="params_schema.json",
        package=SCHEMA_PACKAGE,
    )
