import numpy as np
import pytest

from oracles import forward_loop
from saliency_prompt.head import HeadParams, forward, sgd_step


def test_init_shapes_and_determinism():
    p = HeadParams.init(5, 4, 3, seed=2)
    assert p.kernels0.shape == (5, 4)
    assert p.update_weight.shape == (4, 4) and p.update_bias.shape == (4,)
    assert p.cls_weight.shape == (4,) and p.cls_bias.shape == (1,)
    assert p.seed_proj_weight.shape == (4, 3) and p.seed_proj_bias.shape == (4,)
    assert p.fingerprint() == HeadParams.init(5, 4, 3, seed=2).fingerprint()
    assert p.fingerprint() != HeadParams.init(5, 4, 3, seed=3).fingerprint()


@pytest.mark.parametrize("T", [1, 2, 3])
def test_forward_matches_loops(rng, T):
    p = HeadParams.init(3, 4, 2, seed=1)
    feat = rng.normal(size=(4, 3, 5))
    k = p.kernels0 + rng.normal(size=p.kernels0.shape) * 0.1
    tr = forward(p, k, feat, T)
    m, prob = forward_loop(k, p.update_weight, p.update_bias, p.cls_weight, p.cls_bias[0], feat, T)
    assert tr.stages == T and len(tr.kernels) == T + 1
    np.testing.assert_allclose(tr.masks[-1], m, rtol=0, atol=1e-12)
    np.testing.assert_allclose(tr.prob, prob, rtol=0, atol=1e-12)
    assert tr.final_masks().shape == (3, 3, 5)


def test_zero_kernels_give_half_masks():
    p = HeadParams.init(2, 3, 1)
    p.update_weight[:] = 0
    p.update_bias[:] = 0
    tr = forward(p, np.zeros((2, 3)), np.ones((3, 2, 2)), 2)
    assert np.all(tr.masks[0] == 0.5)


def test_forward_shape_errors():
    p = HeadParams.init(2, 3, 1)
    with pytest.raises(ValueError):
        forward(p, p.kernels0, np.ones((4, 2, 2)))
    with pytest.raises(ValueError):
        forward(p, p.kernels0[:1], np.ones((3, 2, 2)))
    with pytest.raises(ValueError):
        forward(p, p.kernels0, np.ones((3, 2, 2)), T=0)


def test_sgd_momentum():
    p = HeadParams.init(2, 3, 1)
    g = p.zeros_like()
    g.kernels0[:] = 1.0
    p1, v1 = sgd_step(p, g, lr=0.1, momentum=0.9)
    np.testing.assert_allclose(p1.kernels0, p.kernels0 - 0.1)
    p2, v2 = sgd_step(p1, g, lr=0.1, momentum=0.9, velocity=v1)
    np.testing.assert_allclose(v2.kernels0, 1.9)
    np.testing.assert_allclose(p2.kernels0, p.kernels0 - 0.1 - 0.19)
    np.testing.assert_array_equal(p2.cls_weight, p.cls_weight)
