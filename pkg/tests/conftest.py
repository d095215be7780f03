import numpy as np
import pytest

from steerbench.data import DatasetIndex, ToyParams, generate_toy_dataset, split
from steerbench.models import build_resnet
from steerbench.training import TrainHyper, train

TOY_SEED = 7
TOY_IMAGE_SIZE = (32, 64)
TINY_WIDTHS = (8, 16, 32, 64)


@pytest.fixture(scope="session")
def toy_params() -> ToyParams:
    return ToyParams(image_size=TOY_IMAGE_SIZE)


@pytest.fixture(scope="session")
def toy_index(tmp_path_factory) -> DatasetIndex:
    out = tmp_path_factory.mktemp("toy")
    return generate_toy_dataset(500, TOY_IMAGE_SIZE, seed=TOY_SEED, out_dir=out)


@pytest.fixture(scope="session")
def toy_split(toy_index):
    return split(toy_index, 0.2, seed=TOY_SEED)


@pytest.fixture(scope="session")
def trained_toy(toy_split):
    """Tiny ResNet trained to convergence on the toy set (shared, ~10 s)."""
    train_idx, val_idx = toy_split
    model = build_resnet(
        (1, 1, 1, 1), stage_widths=TINY_WIDTHS, input_shape=TOY_IMAGE_SIZE, seed=TOY_SEED
    )
    hyper = TrainHyper(epochs=30, batch_size=32, learning_rate=1e-3, seed=TOY_SEED)
    model, curve, checkpoint = train(model, train_idx, val_idx, hyper)
    model.eval()
    return model, curve, checkpoint


def random_batch(n=4, image_size=TOY_IMAGE_SIZE, seed=0, quantized=False):
    from steerbench.data import Batch

    rng = np.random.RandomState(seed)
    h, w = image_size
    if quantized:
        images = (rng.randint(0, 1025, size=(n, h, w, 3)) / 1024.0).astype(np.float32)
    else:
        images = rng.rand(n, h, w, 3).astype(np.float32)
    targets = rng.uniform(-0.5, 0.5, n).astype(np.float32)
    return Batch(images, targets)
