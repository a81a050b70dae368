import numpy as np
import pytest

from pointview.datasets import generate_synthetic
from pointview.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4-class synthetic set sized for fast module-level training tests."""
    root = tmp_path_factory.mktemp("tiny_data")
    manifest = generate_synthetic(
        root, per_class=10, rng=np.random.default_rng(7),
        classes=("cube", "sphere", "cylinder", "torus"),
        n_points=128, image_size=32, render_points=1500,
    )
    return manifest


@pytest.fixture(scope="session")
def tiny_config():
    """Config matching the tiny dataset (micro widths, quick epochs).

    Augmentation is off: these runs check capacity and plumbing, not
    generalization, and the tiny set has too few poses to support full
    rotation augmentation."""
    return TrainConfig.desk(
        n_points=128, image_size=32, n_classes=4, k=8,
        point_mlp_widths=(16, 32), point_feature_dim=64,
        transform_widths=(16, 32), transform_hidden=16,
        view_feature_dim=64, fusion_hidden=32, reduced_dim=32,
        classifier_widths=(32, 16), batch_size=8, epochs=12,
        freeze_epochs=3, dropout=0.2, augment=False,
    )
