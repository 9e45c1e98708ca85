"""Tests for the shared ViT encoder."""

import numpy as np
import pytest

from patrack.core import functional as F
from patrack.core.tensor import GradTape, Tensor
from patrack.exceptions import ConfigurationException
from patrack.modules.backbone.schemas import BackboneConfig, TokenBatch
from patrack.modules.backbone.service import (
    attention_stage,
    backbone_param_count,
    embed_pair,
    encode,
    encoder_layer,
    grid_to_tokens,
    init_backbone,
    join_regions,
    layer_param_count,
    mlp_stage,
    patch_embed,
    scaled_dot_attention,
    split_search,
    split_template,
    tokens_to_grid,
)
from patrack.modules.parameters import count, named_tensors
from patrack.observability.probes import capture_activations


def image(rng, size: int) -> Tensor:
    return Tensor(rng.normal_array((3, size, size)).astype(np.float32))


class TestBackboneConfig:
    """Geometry validation."""

    def test_defaults(self):
        config = BackboneConfig()
        assert config.template_grid == (4, 4)
        assert config.search_grid == (8, 8)
        assert config.n_template == 16
        assert config.n_search == 64
        assert config.hidden_dim == 128

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigurationException) as exc:
            BackboneConfig(embed_dim=30, heads=4)
        assert exc.value.details["key"] == "backbone.heads"

    def test_patch_must_divide_crop(self):
        with pytest.raises(ConfigurationException):
            BackboneConfig(template_size=36)

    def test_grid_must_be_even(self):
        with pytest.raises(ConfigurationException):
            BackboneConfig(template_size=24)

    def test_frozen(self, tiny_backbone):
        with pytest.raises(Exception):
            tiny_backbone.layers = 4


class TestParameterCounts:
    def test_default_layer(self):
        assert layer_param_count(BackboneConfig()) == 12704

    def test_default_backbone(self):
        assert backbone_param_count(BackboneConfig()) == 161248

    def test_closed_form_matches_initialized_weights(self, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=0)
        assert count(weights) == backbone_param_count(tiny_backbone)


class TestEmbedding:
    def test_token_layout(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=0)
        batch = embed_pair(image(rng, 16), image(rng, 32), weights)
        assert batch.template_grid == (4, 4)
        assert batch.search_grid == (8, 8)
        assert batch.tokens.shape == (16 + 64, 16)
        assert split_template(batch).shape == (16, 16)
        assert split_search(batch).shape == (64, 16)

    def test_patch_tokens_are_row_major(self, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=0)
        zero_pos = Tensor(np.zeros((16, 16), dtype=np.float32))
        img = np.zeros((3, 16, 16), dtype=np.float32)
        img[:, 0:4, 4:8] = 1.0
        tokens = patch_embed(Tensor(img), weights.patch_w, weights.patch_b, zero_pos).data
        changed = np.flatnonzero(np.abs(tokens - tokens[0]).sum(axis=1) > 0)
        assert changed.tolist() == [1]

    def test_indivisible_image_rejected(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=0)
        with pytest.raises(ConfigurationException):
            patch_embed(image(rng, 18), weights.patch_w, weights.patch_b, weights.pos_template)


class TestEncoder:
    def test_grid_round_trip(self, rng):
        tokens = Tensor(rng.normal_array((4 + 16, 6)))
        batch = TokenBatch(tokens, (2, 2), (4, 4))
        grid = tokens_to_grid(batch, "search")
        assert grid.shape == (6, 4, 4)
        np.testing.assert_array_equal(grid_to_tokens(grid).data, tokens.data[4:])
        assert grid.data[2, 1, 3] == tokens.data[4 + 1 * 4 + 3, 2]

    def test_encode_is_deterministic(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=5)
        t, s = image(rng, 16), image(rng, 32)
        first = encode(embed_pair(t, s, weights), weights, tiny_backbone).tokens.data
        second = encode(embed_pair(t, s, weights), weights, tiny_backbone).tokens.data
        assert first.tobytes() == second.tobytes()

    def test_same_seed_same_weights(self, tiny_backbone):
        a = named_tensors(init_backbone(tiny_backbone, seed=9))
        b = named_tensors(init_backbone(tiny_backbone, seed=9))
        assert all(a[name].data.tobytes() == b[name].data.tobytes() for name in a)

    def test_attention_rows_are_distributions(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=5)
        batch = embed_pair(image(rng, 16), image(rng, 32), weights)
        with capture_activations("backbone.attention") as captured:
            encode(batch, weights, tiny_backbone)
        maps = captured["backbone.attention"]
        assert len(maps) == tiny_backbone.layers
        np.testing.assert_allclose(maps[0].sum(axis=-1), 1.0, atol=1e-5)
        assert maps[0].shape == (2, 80, 80)

    def test_single_head_attention_with_identical_keys_averages_values(self, rng):
        q = Tensor(rng.normal_array((3, 4)))
        k = Tensor(np.ones((5, 4)))
        v = Tensor(rng.normal_array((5, 4)))
        out = scaled_dot_attention(q, k, v, heads=1).data
        np.testing.assert_allclose(out, np.tile(v.data.mean(axis=0), (3, 1)), atol=1e-12)

    def test_gradients_reach_every_weight(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=5, dtype=np.float64)
        params = named_tensors(weights)
        for p in params.values():
            p.requires_grad = True
        t = Tensor(rng.normal_array((3, 16, 16)))
        s = Tensor(rng.normal_array((3, 32, 32)))
        with GradTape() as tape:
            out = encode(embed_pair(t, s, weights), weights, tiny_backbone)
            tape.backward(F.sum_all(F.mul(out.tokens, Tensor(rng.normal_array(out.tokens.shape)))))
        missing = [name for name, p in params.items() if p.grad is None]
        assert missing == []

    def test_split_join_round_trip(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=0)
        batch = embed_pair(image(rng, 16), image(rng, 32), weights)
        joined = join_regions(split_template(batch), split_search(batch))
        assert joined.data.tobytes() == batch.tokens.data.tobytes()


class FixedHook:
    def __init__(self, attn: Tensor | None = None, mlp: Tensor | None = None):
        self.attn_delta = attn
        self.mlp_delta = mlp

    def attn(self, h: TokenBatch) -> Tensor | None:
        return self.attn_delta

    def mlp(self, h_prime: TokenBatch) -> Tensor | None:
        return self.mlp_delta


class TestLayerHook:
    """Adapter deltas injected through the encoder layer."""

    @pytest.fixture
    def setup(self, rng, tiny_backbone):
        weights = init_backbone(tiny_backbone, seed=5, dtype=np.float64)
        batch = embed_pair(
            Tensor(rng.normal_array((3, 16, 16))), Tensor(rng.normal_array((3, 32, 32))), weights
        )
        return weights.layers[0], batch

    def test_zero_deltas_match_plain_layer(self, setup, tiny_backbone):
        layer, batch = setup
        zeros = Tensor(np.zeros(batch.tokens.shape))
        plain = encoder_layer(batch, layer, tiny_backbone.heads).tokens.data
        hooked = encoder_layer(batch, layer, tiny_backbone.heads, FixedHook(zeros, zeros)).tokens.data
        np.testing.assert_array_equal(hooked, plain)

    def test_none_deltas_match_plain_layer(self, setup, tiny_backbone):
        layer, batch = setup
        plain = encoder_layer(batch, layer, tiny_backbone.heads).tokens.data
        hooked = encoder_layer(batch, layer, tiny_backbone.heads, FixedHook()).tokens.data
        assert hooked.tobytes() == plain.tobytes()

    def test_attention_delta_is_added_to_h_prime(self, rng, setup, tiny_backbone):
        layer, batch = setup
        delta = Tensor(rng.normal_array(batch.tokens.shape))
        plain = attention_stage(batch, layer, tiny_backbone.heads).tokens.data
        hooked = attention_stage(batch, layer, tiny_backbone.heads, FixedHook(attn=delta))
        np.testing.assert_allclose(hooked.tokens.data, plain + delta.data, atol=1e-12)

    def test_attention_delta_feeds_the_mlp(self, rng, setup, tiny_backbone):
        layer, batch = setup
        delta = Tensor(rng.normal_array(batch.tokens.shape))
        hook = FixedHook(attn=delta)
        mid = attention_stage(batch, layer, tiny_backbone.heads, hook)
        expected = mlp_stage(mid, layer).tokens.data
        out = encoder_layer(batch, layer, tiny_backbone.heads, hook).tokens.data
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_mlp_delta_is_added_to_output(self, rng, setup, tiny_backbone):
        layer, batch = setup
        delta = Tensor(rng.normal_array(batch.tokens.shape))
        plain = encoder_layer(batch, layer, tiny_backbone.heads).tokens.data
        hooked = encoder_layer(batch, layer, tiny_backbone.heads, FixedHook(mlp=delta)).tokens.data
        np.testing.assert_allclose(hooked, plain + delta.data, atol=1e-12)
