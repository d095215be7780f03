import pytest
import torch

from steerbench.attention import (
    AttentionResNet,
    apply_attention,
    build_attention_module,
    build_attention_resnet,
    extract_mask,
    max_clean_steps,
    stage_spatial,
)
from steerbench.errors import ConfigError, StructuralError
from steerbench.models import (
    AttentionSettings,
    ModelConfig,
    build_resnet,
    count_parameters,
    residual_unit_count,
)

TINY = dict(stage_widths=(8, 16, 32, 64), input_shape=(32, 64))


def tiny_attention_config(stages=(1, 2), steps=1, combine="mask_times_trunk", blocks=(2, 2, 2, 2)):
    return ModelConfig(
        family="resnet",
        block_layers=blocks,
        attention=AttentionSettings(stages=stages, downsample_steps=steps, combine_rule=combine),
        **TINY,
    )


def features_for(module, n=2, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(n, module.channels, *module.spatial_shape, generator=gen)


def zero_mask_branch(module):
    mask_parts = [module.mask_entry, module.mask_encoder, module.mask_decoder,
                  module.mask_project, module.select]
    with torch.no_grad():
        for part in mask_parts:
            for p in part.parameters():
                p.zero_()


class TestAttentionModule:
    def test_mask_internal_resolutions_mirror(self):
        module = build_attention_module(8, (32, 32), AttentionSettings(downsample_steps=2))
        sizes = []
        module.mask_pool.register_forward_hook(lambda m, i, o: sizes.append(tuple(o.shape[2:])))
        x = features_for(module)
        mask = module.extract_mask(x)
        assert sizes == [(16, 16), (8, 8)]
        assert tuple(mask.shape[2:]) == (32, 32)

    def test_zero_downsample_steps_same_resolution_head(self):
        module = build_attention_module(8, (15, 17), AttentionSettings(downsample_steps=0))
        x = features_for(module)
        assert tuple(module.extract_mask(x).shape) == tuple(module.trunk(x).shape)

    def test_indivisible_shape_rejected(self):
        with pytest.raises(ConfigError):
            build_attention_module(8, (10, 20), AttentionSettings(downsample_steps=2))

    def test_mask_values_strictly_inside_unit_interval(self):
        module = build_attention_module(8, (16, 16), AttentionSettings(downsample_steps=2))
        for seed in range(5):
            mask = module.extract_mask(features_for(module, seed=seed))
            assert mask.min() > 0.0 and mask.max() < 1.0

    def test_mask_shape_equals_trunk_output_shape(self):
        module = build_attention_module(16, (16, 32), AttentionSettings(downsample_steps=2))
        x = features_for(module)
        assert tuple(extract_mask(module, x).shape) == tuple(module.trunk(x).shape)

    def test_zero_weight_mask_branch_gives_half(self):
        module = build_attention_module(8, (16, 16), AttentionSettings(downsample_steps=1))
        zero_mask_branch(module)
        module.eval()
        mask = module.extract_mask(features_for(module))
        assert torch.all(mask == 0.5)

    def test_forced_saturated_mask_is_identity_for_product_rule(self):
        module = build_attention_module(8, (16, 16), AttentionSettings(downsample_steps=1))
        module.eval()
        with torch.no_grad():
            module.select.weight.zero_()
            module.select.bias.fill_(100.0)  # sigmoid(100) == 1.0 in float32
        x = features_for(module)
        with torch.no_grad():
            assert torch.equal(module(x), module.trunk(x))

    def test_forced_zero_mask_is_identity_for_residual_rule(self):
        module = build_attention_module(
            8, (16, 16), AttentionSettings(downsample_steps=1, combine_rule="residual_one_plus_mask")
        )
        module.eval()
        with torch.no_grad():
            module.select.weight.zero_()
            module.select.bias.fill_(-100.0)  # 1 + sigmoid(-100) == 1.0 in float32
        x = features_for(module)
        with torch.no_grad():
            assert torch.equal(module(x), module.trunk(x))

    @pytest.mark.parametrize("combine", ["mask_times_trunk", "residual_one_plus_mask"])
    def test_output_bounded_by_twice_trunk(self, combine):
        module = build_attention_module(
            8, (16, 16), AttentionSettings(downsample_steps=1, combine_rule=combine)
        )
        module.eval()
        x = features_for(module, seed=3)
        with torch.no_grad():
            out = module(x)
            trunk = module.trunk(x)
        assert torch.all(out.abs() <= 2.0 * trunk.abs() + 1e-6)

    def test_apply_attention_alias(self):
        module = build_attention_module(8, (16, 16), AttentionSettings(downsample_steps=1))
        module.eval()
        x = features_for(module)
        with torch.no_grad():
            assert torch.equal(apply_attention(module, x), module(x))

    def test_shape_mismatch_raises(self):
        module = build_attention_module(8, (16, 16), AttentionSettings(downsample_steps=1))
        with pytest.raises(StructuralError):
            module(torch.randn(1, 8, 8, 8))

    def test_bad_settings_rejected(self):
        with pytest.raises(ConfigError):
            AttentionSettings(combine_rule="sum").validate()
        with pytest.raises(ConfigError):
            AttentionSettings(trunk_units=0).validate()
        with pytest.raises(ConfigError):
            AttentionSettings(stages=(0,)).validate()
        with pytest.raises(ConfigError):
            AttentionSettings(stages=(1, 1)).validate()


class TestAttentionResNet:
    def test_resnet32_unit_count_parity(self):
        config = ModelConfig(family="resnet", block_layers=(3, 4, 5, 3),
                             attention=AttentionSettings())
        variant = build_attention_resnet(config)
        assert residual_unit_count(variant) == 15

    def test_resnet26_unit_count_parity(self):
        config = ModelConfig(family="resnet", block_layers=(3, 3, 3, 3),
                             attention=AttentionSettings())
        variant = build_attention_resnet(config)
        assert residual_unit_count(variant) == 12

    def test_parameters_within_ten_percent_of_baseline(self):
        config = ModelConfig(family="resnet", block_layers=(3, 4, 5, 3),
                             attention=AttentionSettings())
        variant = build_attention_resnet(config)
        baseline = build_resnet((3, 4, 5, 3))
        pv, pb = count_parameters(variant), count_parameters(baseline)
        assert abs(pv - pb) / pb < 0.10

    def test_empty_insertion_list_is_baseline(self):
        config = tiny_attention_config()
        plain = build_attention_resnet(config, insertion_stages=())
        baseline = build_resnet((2, 2, 2, 2), seed=config.seed, **TINY)
        assert type(plain).__name__ == "ResNet"
        assert all(
            torch.equal(a, b)
            for a, b in zip(plain.state_dict().values(), baseline.state_dict().values())
        )

    def test_gradient_reaches_trunk_and_mask(self):
        model = AttentionResNet(tiny_attention_config(stages=(1,)))
        x = torch.randn(2, 3, 32, 64, generator=torch.Generator().manual_seed(0))
        loss = model(x).pow(2).sum()
        loss.backward()
        module = model.attn["1"]
        trunk_grad = module.trunk[0].conv1.weight.grad
        mask_grad = module.select.weight.grad
        assert trunk_grad is not None and trunk_grad.abs().sum() > 0
        assert mask_grad is not None and mask_grad.abs().sum() > 0

    def test_too_many_trunk_units_rejected(self):
        config = ModelConfig(
            family="resnet", block_layers=(1, 1, 1, 1),
            attention=AttentionSettings(stages=(1,), trunk_units=1), **TINY,
        )
        with pytest.raises(ConfigError):
            AttentionResNet(config)

    def test_non_resnet_family_rejected(self):
        config = ModelConfig(family="inception", block_layers=(1, 1, 1),
                             stage_widths=(16, 32, 48), input_shape=(32, 64))
        with pytest.raises(ConfigError):
            build_attention_resnet(config)

    def test_forward_shape(self):
        model = AttentionResNet(tiny_attention_config())
        out = model(torch.randn(3, 3, 32, 64))
        assert tuple(out.shape) == (3, 1)

    def test_deeper_stage_gets_clamped_schedule(self):
        # stage 3 of a 160x320 input sits at 10x20: only one clean halving
        config = ModelConfig(family="resnet", block_layers=(3, 4, 5, 3),
                             attention=AttentionSettings(stages=(1, 2, 3), downsample_steps=2))
        model = build_attention_resnet(config)
        assert len(model.attn["1"].mask_encoder) == 2
        assert len(model.attn["3"].mask_encoder) == 1

    def test_layer_map_points_at_attention_outputs(self):
        model = AttentionResNet(tiny_attention_config(stages=(2,)))
        layers = model.layer_map()
        assert layers["layer2"] is model.attn["2"]
        assert layers["layer1"] is model.layer1


def test_stage_spatial_arithmetic():
    assert stage_spatial((160, 320), 1) == (40, 80)
    assert stage_spatial((160, 320), 4) == (5, 10)
    assert stage_spatial((32, 64), 1) == (8, 16)


def test_max_clean_steps():
    assert max_clean_steps((40, 80), 2) == 2
    assert max_clean_steps((10, 20), 2) == 1
    assert max_clean_steps((5, 10), 2) == 0
