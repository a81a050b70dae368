"""Weight-shared view feature extraction."""

import numpy as np
import numpy.testing as npt
import pytest

from pointview.multiview import (
    ViewCnn, ViewCnnConfig, ViewSet, extract_view_features, view_cnn_forward,
)


def make_cnn(seed=0, dtype=np.float64, **kwargs):
    cfg = ViewCnnConfig.small(image_size=16, feature_dim=12, **kwargs)
    return ViewCnn(cfg, np.random.default_rng(seed), dtype=dtype)


class TestViewCnnForward:
    def test_classic_plan_geometry(self):
        cfg = ViewCnnConfig.classic()
        assert cfg.channels == (96, 256, 384, 384, 256)
        assert cfg.spatial_plan() == [27, 13, 13, 13, 6]
        assert cfg.flat_dim() == 256 * 36
        assert cfg.feature_dim == 1024

    def test_zero_image_zero_biases_gives_zero_features(self):
        cnn = make_cnn()
        # biases are zero-initialized already; zero input stays zero through
        # conv, relu and pooling, and the affine has zero bias
        out = view_cnn_forward(np.zeros((16, 16, 3)), cnn)
        npt.assert_array_equal(out, 0.0)

    def test_identical_images_identical_features(self):
        cnn = make_cnn(seed=1)
        img = np.random.default_rng(2).uniform(size=(16, 16, 3))
        a = view_cnn_forward(img, cnn)
        b = view_cnn_forward(img.copy(), cnn)
        npt.assert_array_equal(a, b)

    def test_feature_dimension_contract(self):
        cnn = make_cnn(seed=3)
        img = np.random.default_rng(4).uniform(size=(16, 16, 3))
        assert view_cnn_forward(img, cnn).shape == (12,)

    def test_wrong_spatial_size_rejected(self):
        cnn = make_cnn()
        with pytest.raises(ValueError):
            view_cnn_forward(np.zeros((8, 8, 3)), cnn)


class TestExtractViewFeatures:
    def test_copies_of_one_image_give_identical_rows(self):
        cnn = make_cnn(seed=5)
        img = np.random.default_rng(6).uniform(size=(16, 16, 3))
        vs = ViewSet(images=np.stack([img] * 12), shape_id="s")
        feats = extract_view_features(vs, cnn).features
        assert feats.shape == (12, 12)
        for i in range(1, 12):
            npt.assert_array_equal(feats[i], feats[0])

    def test_permuting_views_permutes_rows(self):
        cnn = make_cnn(seed=7)
        imgs = np.random.default_rng(8).uniform(size=(6, 16, 16, 3))
        perm = np.array([3, 0, 5, 1, 4, 2])
        a = extract_view_features(ViewSet(images=imgs), cnn).features
        b = extract_view_features(ViewSet(images=imgs[perm]), cnn).features
        npt.assert_array_equal(b, a[perm])

    def test_rows_match_single_view_calls(self):
        """Row-by-row oracle: batch path vs view-at-a-time path."""
        cnn = make_cnn(seed=9)
        imgs = np.random.default_rng(10).uniform(size=(5, 16, 16, 3))
        batch = extract_view_features(ViewSet(images=imgs), cnn).features
        for i in range(5):
            npt.assert_array_equal(batch[i], view_cnn_forward(imgs[i], cnn))

    def test_per_view_independence(self):
        cnn = make_cnn(seed=11)
        rng = np.random.default_rng(12)
        imgs = rng.uniform(size=(4, 16, 16, 3))
        base = extract_view_features(ViewSet(images=imgs), cnn).features
        perturbed = imgs.copy()
        perturbed[2] = rng.uniform(size=(16, 16, 3))
        after = extract_view_features(ViewSet(images=perturbed), cnn).features
        for i in (0, 1, 3):
            npt.assert_array_equal(after[i], base[i])
        assert not np.array_equal(after[2], base[2])
