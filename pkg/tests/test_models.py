import numpy as np
import pytest
import torch
from torch import nn

from steerbench.data import Batch
from steerbench.errors import ConfigError, StructuralError
from steerbench.models import (
    INCEPTION_BLOCK_LAYERS,
    ModelConfig,
    build_inception,
    build_model,
    build_resnet,
    count_parameters,
    predict_angle,
    residual_unit_count,
)

from .oracles import inception_param_count, resnet_param_count
from .conftest import random_batch

#: Reference parameter counts per block tuple, smallest config first.
RESNET_REFERENCE = {
    (2, 2, 3, 2): 12.8e6,
    (2, 3, 3, 2): 13.1e6,
    (2, 3, 4, 2): 14.3e6,
    (3, 3, 3, 3): 17.9e6,
    (3, 3, 4, 3): 19.1e6,
    (3, 4, 4, 3): 19.4e6,
    (3, 4, 5, 3): 20.6e6,
    (3, 4, 6, 3): 21.7e6,
}

INCEPTION_REFERENCE_SPAN = (13.0e6, 21.7e6)


class TestResNetCounts:
    def test_resnet34_within_five_percent(self):
        model = build_resnet((3, 4, 6, 3))
        count = count_parameters(model)
        assert abs(count - 21.7e6) / 21.7e6 < 0.05

    def test_resnet20_within_five_percent(self):
        model = build_resnet((2, 2, 3, 2))
        count = count_parameters(model)
        assert abs(count - 12.8e6) / 12.8e6 < 0.05

    def test_all_rows_within_five_percent_and_increasing(self):
        prev = 0
        for block_layers, reference in RESNET_REFERENCE.items():
            count = count_parameters(build_resnet(block_layers))
            assert abs(count - reference) / reference < 0.05, block_layers
            assert count > prev
            prev = count

    def test_tiny_config_matches_counting_oracle(self):
        widths = (8, 16, 32, 64)
        model = build_resnet((1, 1, 1, 1), stage_widths=widths, input_shape=(64, 64))
        assert count_parameters(model) == resnet_param_count((1, 1, 1, 1), widths)

    def test_full_config_matches_counting_oracle(self):
        model = build_resnet((3, 4, 6, 3))
        assert count_parameters(model) == resnet_param_count((3, 4, 6, 3))

    def test_count_independent_of_input_resolution(self):
        a = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(160, 320))
        b = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(64, 64))
        assert count_parameters(a) == count_parameters(b)

    def test_residual_unit_count_equals_block_sum(self):
        for block_layers in RESNET_REFERENCE:
            model = build_resnet(block_layers, stage_widths=(8, 16, 32, 64), input_shape=(32, 64))
            assert residual_unit_count(model) == sum(block_layers)


class TestInceptionCounts:
    def test_largest_exceeds_smallest(self):
        small = count_parameters(build_inception((2, 5, 2)))
        large = count_parameters(build_inception((5, 8, 5)))
        assert large > small

    def test_all_rows_strictly_increasing_in_table_order(self):
        prev = 0
        for block_layers in INCEPTION_BLOCK_LAYERS.values():
            count = count_parameters(build_inception(block_layers))
            assert count > prev, block_layers
            prev = count

    def test_counts_land_in_reference_span(self):
        lo, hi = INCEPTION_REFERENCE_SPAN
        counts = [
            count_parameters(build_inception(bl)) for bl in INCEPTION_BLOCK_LAYERS.values()
        ]
        assert min(counts) > lo * 0.98 and max(counts) < hi * 1.02

    def test_minimal_bank_matches_counting_oracle(self):
        widths = (16, 32, 48)
        model = build_inception((1, 1, 1), stage_widths=widths)
        assert count_parameters(model) == inception_param_count((1, 1, 1), widths)

    def test_table_config_matches_counting_oracle(self):
        model = build_inception((2, 5, 2))
        assert count_parameters(model) == inception_param_count((2, 5, 2))


class TestConfigValidation:
    @pytest.mark.parametrize(
        "family,block_layers",
        [
            ("resnet", (1, 1, 1)),
            ("resnet", (1, 1, 1, 0)),
            ("inception", (1, 1, 1, 1)),
            ("inception", (0, 1, 1)),
            ("vgg", (1, 1, 1, 1)),
        ],
    )
    def test_bad_tuples_rejected(self, family, block_layers):
        with pytest.raises(ConfigError):
            ModelConfig(family=family, block_layers=block_layers).validate()

    def test_inception_widths_must_divide_16(self):
        with pytest.raises(ConfigError):
            build_inception((1, 1, 1), stage_widths=(20, 40, 60))

    def test_tiny_input_rejected(self):
        with pytest.raises(ConfigError):
            build_resnet((1, 1, 1, 1), input_shape=(16, 16))

    def test_round_trip_serialization(self):
        config = ModelConfig(
            family="resnet",
            block_layers=(2, 2, 3, 2),
            stage_widths=(8, 16, 32, 64),
            input_shape=(32, 64),
            seed=3,
        )
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestCountParameters:
    def test_empty_graph(self):
        assert count_parameters(nn.Sequential()) == 0

    def test_single_linear_layer(self):
        assert count_parameters(nn.Linear(4, 2)) == 4 * 2 + 2


class TestPredictAngle:
    def test_zero_head_predicts_zero(self):
        model = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64))
        with torch.no_grad():
            model.fc.weight.zero_()
            model.fc.bias.zero_()
        preds = predict_angle(model, random_batch(n=3))
        assert preds.shape == (3,)
        assert np.all(preds == 0.0)

    def test_deterministic(self):
        model = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64))
        batch = random_batch(n=4, seed=2)
        assert np.array_equal(predict_angle(model, batch), predict_angle(model, batch))

    def test_output_is_n_by_1_before_squeeze(self):
        model = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64))
        out = model(torch.randn(5, 3, 32, 64))
        assert tuple(out.shape) == (5, 1)

    def test_shape_mismatch_raises(self):
        model = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64))
        with pytest.raises(StructuralError):
            predict_angle(model, random_batch(n=2, image_size=(64, 64)))

    def test_inception_predicts_finite_scalars(self):
        model = build_inception((1, 1, 1), stage_widths=(16, 32, 48), input_shape=(32, 64))
        preds = predict_angle(model, random_batch(n=2))
        assert preds.shape == (2,) and np.all(np.isfinite(preds))

    def test_trained_toy_model_near_zero_at_center(self, trained_toy, toy_params):
        from steerbench.data import render_toy_image

        model, _, _ = trained_toy
        rng = np.random.RandomState(5)
        img = render_toy_image(0.0, toy_params, rng)
        batch = Batch(img[None], np.zeros(1, dtype=np.float32))
        pred = predict_angle(model, batch)[0]
        assert abs(pred) < 0.1  # toy tolerance: well under the 0.5 rad full-scale


def test_build_model_dispatch():
    resnet = build_model(ModelConfig(family="resnet", block_layers=(1, 1, 1, 1),
                                     stage_widths=(8, 16, 32, 64), input_shape=(32, 64)))
    inception = build_model(ModelConfig(family="inception", block_layers=(1, 1, 1),
                                        stage_widths=(16, 32, 48), input_shape=(32, 64)))
    assert type(resnet).__name__ == "ResNet"
    assert type(inception).__name__ == "InceptionNet"


def test_same_seed_same_weights():
    a = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64), seed=9)
    b = build_resnet((1, 1, 1, 1), stage_widths=(8, 16, 32, 64), input_shape=(32, 64), seed=9)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))
