import pytest

from leafnet import tensor as T
from leafnet.fixture import make_blob_dataset, make_overfit_dataset
from leafnet.train import TrainConfig, train_model


@pytest.fixture(autouse=True)
def _restore_determinism():
    prev = T.is_deterministic()
    yield
    T.set_deterministic(prev)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """16 images, 2 classes, 8x8 — the overfit fixture."""
    root = tmp_path_factory.mktemp("tiny_fixture")
    make_overfit_dataset(root, seed=7)
    return root


@pytest.fixture(scope="session")
def blob_root(tmp_path_factory):
    """300 images, 3 classes, 16x16 — the end-to-end fixture."""
    root = tmp_path_factory.mktemp("blob_fixture")
    make_blob_dataset(root, seed=7)
    return root


@pytest.fixture(scope="session")
def quick_run(tmp_path_factory, tiny_root):
    """One cheap 1-epoch training run shared by checkpoint/CLI tests."""
    out = tmp_path_factory.mktemp("quick_run")
    config = TrainConfig(data_dir=str(tiny_root), out_dir=str(out), epochs=1,
                         batch_size=8, img_size=8, seed=3, train_fraction=0.75)
    summary = train_model(config, log=lambda *_: None)
    summary["config"] = config
    return summary
