import numpy as np
import pytest

from saliency_prompt.synthetic import (FEATURE_DIM, SceneSpec, make_dataset, make_synthetic_scene,
                                       neck, neck_matrix, toy_feature_extractor)


@pytest.mark.parametrize("seed", range(20))
def test_scene_invariants(seed):
    sc = make_synthetic_scene(seed=seed)
    assert sc.image.shape == (3, 32, 32) and sc.hw == (32, 32)
    assert 0.0 <= sc.image.min() and sc.image.max() <= 1.0
    assert 2 <= len(sc.masks) <= 4 and len(sc.blobs) == len(sc.masks)
    total = sc.masks.sum(axis=0)
    assert total.max() == 1
    for blob, m in zip(sc.blobs, sc.masks):
        # constant colour inside each blob
        assert np.all(sc.image[:, m] == np.array(blob.color)[:, None])
        assert m.sum() >= 7 * 7 * 0.6


def test_scene_determinism():
    a, b = make_synthetic_scene(seed=5), make_synthetic_scene(seed=5)
    assert a.image.tobytes() == b.image.tobytes()
    assert [s.image.tobytes() for s in make_dataset(3, 1)] == [s.image.tobytes() for s in make_dataset(3, 1)]
    assert make_synthetic_scene(seed=6).image.tobytes() != a.image.tobytes()


def test_scene_spec_limits():
    with pytest.raises(ValueError):
        SceneSpec(max_blobs=5)
    sc = make_synthetic_scene(seed=1, n_blobs=1)
    assert len(sc.masks) == 1


def test_extractor_channels():
    rgb = np.full((3, 6, 6), 0.5)
    rgb[:, 2:4, 2:4] = np.array([1.0, 0.0, 0.0])[:, None, None]
    x = toy_feature_extractor(rgb)
    assert x.shape == (FEATURE_DIM, 6, 6)
    assert x.min() >= 0.0
    np.testing.assert_allclose(x[:, 2, 2][:6], [0.5, 0, 0, 0, 0.5, 0.5])
    assert not x[:6, 0, 0].any()
    assert not x[6:, 0, 0].any()
    assert x[6, 2, 1] > 0 and x[7, 1, 2] > 0 and x[8, 2, 2] > 0


def test_extractor_stride():
    rgb = np.random.default_rng(0).random((3, 7, 9))
    x1 = toy_feature_extractor(rgb)
    x2 = toy_feature_extractor(rgb, stride=2)
    assert x2.shape == (9, 4, 5)
    np.testing.assert_allclose(x2[:, 0, 0], x1[:, :2, :2].mean(axis=(1, 2)))
    np.testing.assert_allclose(x2[:, 3, 4], x1[:, 6, 8])
    with pytest.raises(ValueError):
        toy_feature_extractor(rgb[:2])


def test_neck_preserves_dot_products(rng):
    q = neck_matrix(9, 16)
    np.testing.assert_allclose(q.T @ q, np.eye(9), atol=1e-12)
    x = rng.random((9, 4, 5))
    f = neck(x, 16)
    assert f.shape == (16, 4, 5)
    np.testing.assert_array_equal(f[-1], 1.0)
    np.testing.assert_allclose(np.einsum("cij,ckl->ijkl", f[:-1], f[:-1]),
                               np.einsum("cij,ckl->ijkl", x, x), atol=1e-12)
    with pytest.raises(ValueError):
        neck_matrix(9, 9)
