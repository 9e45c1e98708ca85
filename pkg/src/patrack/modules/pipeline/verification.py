"""
PATrack Pipeline - Gradient verification suite.

Checks MDA, CEA, HA, the head and the assembled adapted model against
central differences on a float64 model small enough to run in seconds:
C=16, three layers scheduled MDA/CEA/MDA, 8x8 template and 16x16 search
crops with patch 4. Up-projections start non-zero so adapter gradients are
not trivially zero.
"""

from __future__ import annotations

import numpy as np
import structlog

from patrack.core import functional as F
from patrack.core.gradcheck import GradCheckResult, GradHook, check_gradients
from patrack.core.rng import Rng
from patrack.core.tensor import Tensor
from patrack.modules.adapters.cea import cea_forward, init_cea
from patrack.modules.adapters.ha import ha_forward, init_ha
from patrack.modules.adapters.mda import init_mda, mda_forward
from patrack.modules.backbone.schemas import BackboneConfig, TokenBatch
from patrack.modules.head.schemas import BoundingBox
from patrack.modules.head.service import head_forward, head_loss, init_head
from patrack.modules.parameters import named_tensors
from patrack.modules.pipeline.model import attach_adapters, build_base_model, dual_forward, prepare_image
from patrack.modules.pipeline.schemas import AdapterSpec

logger = structlog.get_logger(__name__)

COMPONENT_TOLERANCE = 1e-4
ASSEMBLED_TOLERANCE = 1e-3
# exact-zero gradients (softmax-invariant biases) leave only rounding noise in central differences
COMPONENT_FLOOR = 1e-4
ASSEMBLED_FLOOR_SCALE = 1e-3
UP_STD = 0.1

GRADCHECK_BACKBONE = BackboneConfig(
    embed_dim=16, layers=3, heads=2, patch=4, template_size=8, search_size=16, mlp_ratio=2, head_channels=8
)
GRADCHECK_ADAPTERS = AdapterSpec(
    mda_dim=8, cea_dim=8, ha_dim=4, cea_heads=8, schedule_override={"1": "MDA", "2": "CEA", "3": "MDA"}
)
GRADCHECK_TARGET = BoundingBox(cx=0.43, cy=0.58, w=0.27, h=0.21)


def _tokens(rng: Rng, config: BackboneConfig) -> TokenBatch:
    n = config.n_template + config.n_search
    data = rng.normal_array((n, config.embed_dim)).astype(np.float64)
    return TokenBatch(Tensor(data), config.template_grid, config.search_grid)


def _projection(rng: Rng, shape: tuple[int, ...]) -> Tensor:
    return Tensor(rng.normal_array(shape).astype(np.float64))


def _project(value: Tensor, weights: Tensor) -> Tensor:
    return F.sum_all(F.mul(value, weights))


def check_mda(samples: int, seed: int = 0, hook: GradHook | None = None) -> GradCheckResult:
    rng = Rng.derive(seed, "gradcheck", "mda")
    cfg = GRADCHECK_BACKBONE
    weights = init_mda(cfg.embed_dim, GRADCHECK_ADAPTERS.mda_dim, rng, dtype=np.float64, up_std=UP_STD)
    source = _tokens(rng, cfg)
    proj = _projection(rng, source.tokens.shape)
    return check_gradients(
        "MDA",
        lambda: _project(mda_forward(source, weights), proj),
        named_tensors(weights),
        samples,
        COMPONENT_TOLERANCE,
        rng,
        hook=hook,
        floor=COMPONENT_FLOOR,
    )


def check_cea(samples: int, seed: int = 0, hook: GradHook | None = None) -> GradCheckResult:
    rng = Rng.derive(seed, "gradcheck", "cea")
    cfg, spec = GRADCHECK_BACKBONE, GRADCHECK_ADAPTERS
    weights = init_cea(cfg.embed_dim, spec.cea_dim, rng, spec.cea_heads, dtype=np.float64, up_std=UP_STD)
    h_rgb, h_x = _tokens(rng, cfg), _tokens(rng, cfg)
    proj_rgb, proj_x = _projection(rng, h_rgb.tokens.shape), _projection(rng, h_x.tokens.shape)

    def loss() -> Tensor:
        delta_rgb, delta_x = cea_forward(h_rgb, h_x, weights)
        return F.add(_project(delta_rgb, proj_rgb), _project(delta_x, proj_x))

    return check_gradients(
        "CEA",
        loss,
        named_tensors(weights),
        samples,
        COMPONENT_TOLERANCE,
        rng,
        hook=hook,
        floor=COMPONENT_FLOOR,
    )


def check_ha(samples: int, seed: int = 0, hook: GradHook | None = None) -> GradCheckResult:
    rng = Rng.derive(seed, "gradcheck", "ha")
    cfg = GRADCHECK_BACKBONE
    weights = init_ha(cfg.embed_dim, GRADCHECK_ADAPTERS.ha_dim, rng, dtype=np.float64, up_std=UP_STD)
    search = Tensor(rng.normal_array((cfg.n_search, cfg.embed_dim)).astype(np.float64))
    proj = _projection(rng, search.shape)
    return check_gradients(
        "HA",
        lambda: _project(ha_forward(search, weights), proj),
        named_tensors(weights),
        samples,
        COMPONENT_TOLERANCE,
        rng,
        hook=hook,
        floor=COMPONENT_FLOOR,
    )


def check_head(samples: int, seed: int = 0, hook: GradHook | None = None) -> GradCheckResult:
    rng = Rng.derive(seed, "gradcheck", "head")
    cfg = GRADCHECK_BACKBONE
    weights = init_head(cfg.embed_dim, cfg.head_channels, seed, dtype=np.float64)
    search = Tensor(rng.normal_array((cfg.n_search, cfg.embed_dim)).astype(np.float64))
    return check_gradients(
        "head",
        lambda: head_loss(head_forward(search, weights, cfg.search_grid), GRADCHECK_TARGET).total,
        named_tensors(weights),
        samples,
        COMPONENT_TOLERANCE,
        rng,
        hook=hook,
        floor=COMPONENT_FLOOR,
    )


def check_assembled(samples: int, seed: int = 0, hook: GradHook | None = None) -> GradCheckResult:
    """Head loss of the full dual-stream forward w.r.t. the trainable adapter set."""
    rng = Rng.derive(seed, "gradcheck", "assembled")
    cfg = GRADCHECK_BACKBONE
    base = build_base_model(cfg, seed, dtype=np.float64)
    model = attach_adapters(base, GRADCHECK_ADAPTERS, seed, up_std=UP_STD)

    def image(size: int, channels: int) -> Tensor:
        pixels = np.floor(rng.uniform_array(0.0, 256.0, (channels, size, size))).astype(np.uint8)
        return prepare_image(pixels, np.float64)

    t_rgb, t_x = image(cfg.template_size, 3), image(cfg.template_size, 1)
    s_rgb, s_x = image(cfg.search_size, 3), image(cfg.search_size, 1)
    return check_gradients(
        "assembled",
        lambda: head_loss(dual_forward(t_rgb, t_x, s_rgb, s_x, model)[1], GRADCHECK_TARGET).total,
        model.trainable_parameters(),
        samples,
        ASSEMBLED_TOLERANCE,
        rng,
        hook=hook,
        scaled_floor=ASSEMBLED_FLOOR_SCALE,
    )


CHECKS = {
    "MDA": check_mda,
    "CEA": check_cea,
    "HA": check_ha,
    "head": check_head,
    "assembled": check_assembled,
}


def run_gradcheck(samples: int = 50, seed: int = 0, hook: GradHook | None = None) -> list[GradCheckResult]:
    """One row per component, in MDA, CEA, HA, head, assembled order."""
    results = []
    for name, check in CHECKS.items():
        result = check(samples, seed, hook)
        logger.info(
            "gradcheck_component",
            component=name,
            max_rel_error=result.max_rel_error,
            tolerance=result.tolerance,
            passed=result.passed,
        )
        results.append(result)
    return results


def corrupt_gradients(grads: dict[str, np.ndarray]) -> None:
    """Test hook: skews every analytic gradient by 10 percent."""
    for value in grads.values():
        value *= 1.1
