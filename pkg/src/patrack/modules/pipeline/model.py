"""
PATrack Pipeline - Model assembly.

The base model is the single-stream RGB tracker: patch embedding, the
encoder, the head. The adapted model runs RGB and X through the same
backbone weights and wires adapter deltas between the streams:

- MDA layer: the X stream receives MDA(H_rgb) after MSA and MDA(H'_rgb)
  after the MLP, and the RGB stream symmetrically from X.
- CEA layer: each stream receives its own branch output of the shared CEA.

After the last layer the search tokens of both streams are averaged, passed
through HA and decoded by the head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import structlog

from patrack.config import RunConfig
from patrack.core import functional as F
from patrack.core.checkpoint import Checkpoint
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.exceptions import InputException, ParseException
from patrack.modules.adapters.cea import cea_forward, init_cea
from patrack.modules.adapters.ha import ha_forward, init_ha
from patrack.modules.adapters.mda import init_mda, mda_forward
from patrack.modules.adapters.schedule import resolve_schedule
from patrack.modules.adapters.schemas import AdapterKind, CeaLayer, HaWeights, MdaLayer, PlacementSchedule
from patrack.modules.backbone.schemas import BackboneConfig, BackboneWeights, TokenBatch
from patrack.modules.backbone.service import (
    attention_stage,
    embed_pair,
    encode,
    final_norm,
    init_backbone,
    mlp_stage,
    split_search,
)
from patrack.modules.head.schemas import BoundingBox, HeadMaps, HeadWeights
from patrack.modules.head.service import decode_box, head_forward, init_head
from patrack.modules.parameters import named_tensors
from patrack.modules.pipeline.schemas import AdapterSpec, ModelMode
from patrack.observability.probes import record

logger = structlog.get_logger(__name__)

IMAGE_MEAN = np.array([0.485, 0.456, 0.406])
IMAGE_STD = np.array([0.229, 0.224, 0.225])


@dataclass
class AdapterWeights:
    """Adapters keyed by layer ("layer04"); layers without an adapter are absent."""

    layers: dict[str, MdaLayer | CeaLayer] = field(default_factory=dict)
    ha: HaWeights | None = None

    def at(self, layer: int) -> MdaLayer | CeaLayer | None:
        return self.layers.get(layer_key(layer))


def layer_key(layer: int) -> str:
    return f"layer{layer:02d}"


@dataclass
class PatrackModel:
    config: BackboneConfig
    backbone: BackboneWeights
    head: HeadWeights
    adapters: AdapterWeights | None = None
    spec: AdapterSpec | None = None
    schedule: PlacementSchedule | None = None
    mode: ModelMode = "pretrain_rgb"

    @property
    def dtype(self) -> np.dtype:
        return self.backbone.patch_w.dtype

    def named_parameters(self) -> dict[str, Tensor]:
        params = named_tensors(self.backbone, "backbone")
        params.update(named_tensors(self.head, "head"))
        if self.adapters is not None:
            params.update(named_tensors(self.adapters, "adapters"))
        return params

    def frozen_names(self) -> set[str]:
        """Backbone and head are frozen while adapters are tuned."""
        if self.mode != "adapter_tune":
            return set()
        return {n for n in self.named_parameters() if n.startswith(("backbone.", "head."))}

    def trainable_parameters(self) -> dict[str, Tensor]:
        frozen = self.frozen_names()
        return {n: t for n, t in self.named_parameters().items() if n not in frozen}

    def freeze(self) -> PatrackModel:
        frozen = self.frozen_names()
        for name, tensor in self.named_parameters().items():
            tensor.requires_grad = name not in frozen
            tensor.zero_grad()
        return self

    def digests(self) -> dict[str, int]:
        return self.to_checkpoint().digests()

    # -------------------------------------------------------------------------
    # Checkpoint conversion
    # -------------------------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "backbone": self.config.model_dump(mode="json"),
            "adapters": self.spec.model_dump(mode="json") if self.spec is not None else None,
            "schedule": self.schedule.to_dict() if self.schedule is not None else None,
            "mode": self.mode,
        }

    def to_checkpoint(self, extra: dict | None = None) -> Checkpoint:
        meta = self.metadata()
        meta.update(extra or {})
        return Checkpoint(
            tensors={n: t.data.astype(np.float32) for n, t in self.named_parameters().items()},
            frozen=self.frozen_names(),
            metadata=meta,
        )

    @classmethod
    def from_checkpoint(
        cls, checkpoint: Checkpoint, dtype: np.dtype | type = np.float32, source: str = "<checkpoint>"
    ) -> PatrackModel:
        meta = checkpoint.metadata
        if "backbone" not in meta:
            raise ParseException(source, "checkpoint metadata has no backbone geometry")
        model = build_base_model(BackboneConfig(**meta["backbone"]), seed=0, dtype=dtype)
        if meta.get("adapters") is not None:
            model = attach_adapters(model, AdapterSpec(**meta["adapters"]), seed=0, dtype=dtype)
        model.mode = meta.get("mode", model.mode)
        params = model.named_parameters()
        missing = sorted(set(params) - set(checkpoint.tensors))
        extra = sorted(set(checkpoint.tensors) - set(params))
        if missing or extra:
            raise ParseException(
                source, f"tensor names do not match the model (missing {missing[:3]}, extra {extra[:3]})"
            )
        for name, tensor in params.items():
            tensor.assign(checkpoint.tensors[name])
        return model.freeze()


# =============================================================================
# Construction
# =============================================================================


def build_base_model(config: BackboneConfig, seed: int, dtype: np.dtype | type = np.float32) -> PatrackModel:
    return PatrackModel(
        config=config,
        backbone=init_backbone(config, seed, dtype),
        head=init_head(config.embed_dim, config.head_channels, seed, dtype),
        mode="pretrain_rgb",
    )


def attach_adapters(
    base: PatrackModel,
    spec: AdapterSpec,
    seed: int,
    dtype: np.dtype | type | None = None,
    up_std: float | None = None,
) -> PatrackModel:
    """Adapted model sharing `base`'s backbone and head storage; backbone and head end up frozen."""
    dtype = base.dtype if dtype is None else dtype
    c = base.config.embed_dim
    schedule = resolve_schedule(base.config.layers, spec.schedule, spec.schedule_override, spec.use_cea)
    rng = Rng.derive(seed, "adapters")
    adapters = AdapterWeights()
    for layer in range(1, base.config.layers + 1):
        kind = schedule.kind(layer)
        if kind is AdapterKind.CEA:
            adapters.layers[layer_key(layer)] = CeaLayer(
                attn=init_cea(c, spec.cea_dim, rng, spec.cea_heads, spec.ablation, dtype, up_std),
                mlp=init_cea(c, spec.cea_dim, rng, spec.cea_heads, spec.ablation, dtype, up_std),
            )
        elif spec.use_mda:
            adapters.layers[layer_key(layer)] = MdaLayer(
                *(init_mda(c, spec.mda_dim, rng, spec.ablation, dtype, up_std) for _ in range(4))
            )
    if spec.use_ha:
        adapters.ha = init_ha(c, spec.ha_dim, rng, dtype=dtype, up_std=up_std)
    model = PatrackModel(
        config=base.config,
        backbone=base.backbone,
        head=base.head,
        adapters=adapters,
        spec=spec,
        schedule=schedule,
        mode="adapter_tune",
    )
    logger.debug(
        "adapters_attached",
        cea_layers=schedule.layers_of(AdapterKind.CEA),
        mda=spec.use_mda,
        ha=spec.use_ha,
        trainable=sum(t.size for t in model.trainable_parameters().values()),
    )
    return model.freeze()


def backbone_config(config: RunConfig) -> BackboneConfig:
    return BackboneConfig(**config.backbone.model_dump())


def build_model(config: RunConfig) -> PatrackModel:
    """Freshly initialized model for `config.train.mode` (adapters attached for adapter_tune)."""
    base = build_base_model(backbone_config(config), seed=config.train.seed)
    if config.train.mode == "pretrain_rgb":
        return base
    return attach_adapters(base, AdapterSpec.from_section(config.adapters), seed=config.train.seed)


def late_fusion_spec() -> AdapterSpec:
    """No adapters at all: the streams meet only in the final token average."""
    return AdapterSpec(use_mda=False, use_cea=False, use_ha=False)


# =============================================================================
# Inputs
# =============================================================================


def prepare_image(image: np.ndarray, dtype: np.dtype | type = np.float32) -> Tensor:
    """uint8 1xHxW or 3xHxW -> normalized 3xHxW tensor; single planes are replicated."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise InputException(f"expected a 1xHxW or 3xHxW image, got {image.shape}")
    planes = np.repeat(image, 3, axis=0) if image.shape[0] == 1 else image
    scaled = planes.astype(np.float64) / 255.0
    normalized = (scaled - IMAGE_MEAN[:, None, None]) / IMAGE_STD[:, None, None]
    return Tensor(normalized.astype(dtype))


def _check_size(name: str, image: Tensor, size: int) -> None:
    if image.shape != (3, size, size):
        raise InputException(
            f"{name} image is {image.shape}, expected (3, {size}, {size})",
            details={"image": name, "shape": list(image.shape)},
        )


# =============================================================================
# Forward passes
# =============================================================================


def _predict(search_tokens: Tensor, model: PatrackModel) -> tuple[BoundingBox, HeadMaps]:
    maps = head_forward(search_tokens, model.head, model.config.search_grid)
    return decode_box(maps), maps


def base_forward(t_rgb: Tensor, s_rgb: Tensor, model: PatrackModel) -> tuple[BoundingBox, HeadMaps]:
    """Single-stream RGB model."""
    _check_size("template", t_rgb, model.config.template_size)
    _check_size("search", s_rgb, model.config.search_size)
    batch = encode(embed_pair(t_rgb, s_rgb, model.backbone), model.backbone, model.config)
    return _predict(split_search(batch), model)


def _cross_deltas(
    adapter: MdaLayer | CeaLayer | None, position: str, rgb: TokenBatch, x: TokenBatch, model: PatrackModel
) -> tuple[Tensor | None, Tensor | None]:
    """(delta added to RGB, delta added to X) at one insertion point."""
    if adapter is None:
        return None, None
    if isinstance(adapter, CeaLayer):
        weights = adapter.attn if position == "attn" else adapter.mlp
        flags = model.spec.ablation if model.spec is not None else None
        return cea_forward(rgb, x, weights, flags)
    from_rgb = adapter.from_rgb_attn if position == "attn" else adapter.from_rgb_mlp
    from_x = adapter.from_x_attn if position == "attn" else adapter.from_x_mlp
    return mda_forward(x, from_x), mda_forward(rgb, from_rgb)


@dataclass
class _StreamDeltas:
    """Layer hook for one stream; deltas are filled in as both streams reach each insertion point."""

    attn_delta: Tensor | None = None
    mlp_delta: Tensor | None = None

    def attn(self, h: TokenBatch) -> Tensor | None:
        return self.attn_delta

    def mlp(self, h_prime: TokenBatch) -> Tensor | None:
        return self.mlp_delta


def dual_forward(
    t_rgb: Tensor, t_x: Tensor, s_rgb: Tensor, s_x: Tensor, model: PatrackModel
) -> tuple[BoundingBox, HeadMaps]:
    cfg = model.config
    for name, image, size in (
        ("template_rgb", t_rgb, cfg.template_size),
        ("template_x", t_x, cfg.template_size),
        ("search_rgb", s_rgb, cfg.search_size),
        ("search_x", s_x, cfg.search_size),
    ):
        _check_size(name, image, size)

    rgb = embed_pair(t_rgb, s_rgb, model.backbone)
    x = embed_pair(t_x, s_x, model.backbone)
    for index, weights in enumerate(model.backbone.layers, start=1):
        adapter = model.adapters.at(index) if model.adapters is not None else None

        hook_rgb, hook_x = _StreamDeltas(), _StreamDeltas()

        hook_rgb.attn_delta, hook_x.attn_delta = _cross_deltas(adapter, "attn", rgb, x, model)
        mid_rgb = attention_stage(rgb, weights, cfg.heads, hook_rgb)
        mid_x = attention_stage(x, weights, cfg.heads, hook_x)

        hook_rgb.mlp_delta, hook_x.mlp_delta = _cross_deltas(adapter, "mlp", mid_rgb, mid_x, model)
        rgb = mlp_stage(mid_rgb, weights, hook_rgb)
        x = mlp_stage(mid_x, weights, hook_x)
        record(f"stream.rgb.{layer_key(index)}", rgb.tokens.data)
        record(f"stream.x.{layer_key(index)}", x.tokens.data)

    rgb = final_norm(rgb, model.backbone)
    x = final_norm(x, model.backbone)
    fused = F.scale(F.add(split_search(rgb), split_search(x)), 0.5)
    if model.adapters is not None and model.adapters.ha is not None:
        fused = ha_forward(fused, model.adapters.ha)
    return _predict(fused, model)


def forward_pair(
    model: PatrackModel,
    template_rgb: np.ndarray,
    template_x: np.ndarray,
    search_rgb: np.ndarray,
    search_x: np.ndarray,
) -> tuple[BoundingBox, HeadMaps]:
    """uint8 crops in, prediction out; the base model ignores the X crops."""
    dtype = model.dtype
    if model.mode == "pretrain_rgb":
        return base_forward(prepare_image(template_rgb, dtype), prepare_image(search_rgb, dtype), model)
    return dual_forward(
        prepare_image(template_rgb, dtype),
        prepare_image(template_x, dtype),
        prepare_image(search_rgb, dtype),
        prepare_image(search_x, dtype),
        model,
    )
