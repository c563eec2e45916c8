import numpy as np
import pytest

from oracles import rel_err
from saliency_prompt.grad import StaleTraceError, backward
from saliency_prompt.head import HeadParams, forward
from saliency_prompt.losses import LossWeights, total_loss


def _numeric(p, inj, feat, z, sf, w, pairs, T, h=1e-5):
    def f(pp):
        return total_loss(pp, forward(pp, inj(pp), feat, T), z, sf, w, pairs).total
    out = {}
    for name, v in p.items():
        num = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            a = p.copy()
            getattr(a, name)[idx] += h
            b = p.copy()
            getattr(b, name)[idx] -= h
            num[idx] = (f(a) - f(b)) / (2 * h)
        out[name] = num
    return out


@pytest.mark.parametrize("weights", [
    LossWeights(),
    LossWeights(ker_include_initial=True),
    LossWeights(cls=0.5, dice=0.0, ce=3.0, ker=2.0, focal_gamma=1.5, focal_alpha=0.4),
])
@pytest.mark.parametrize("T", [1, 3])
def test_backward_matches_fd(weights, T):
    rng = np.random.default_rng(T)
    p = HeadParams.init(3, 4, 2, seed=T)
    feat = rng.normal(size=(4, 5, 5))
    prompts = rng.normal(size=(3, 4)) * 0.3
    z = rng.random((2, 5, 5)) > 0.5
    sf = rng.normal(size=(2, 2))
    inj = lambda pp: pp.kernels0 + prompts  # noqa: E731
    tr = forward(p, inj(p), feat, T)
    g, loss = backward(p, tr, z, sf, weights)
    num = _numeric(p, inj, feat, z, sf, weights, loss.match.pairs, T)
    for name, v in g.items():
        assert rel_err(v, num[name]) < 1e-6, name


def test_backward_loss_matches_total(rng):
    p = HeadParams.init(3, 4, 2)
    feat = rng.normal(size=(4, 4, 4))
    z = rng.random((2, 4, 4)) > 0.5
    sf = rng.normal(size=(2, 2))
    tr = forward(p, p.kernels0, feat, 2)
    _, loss = backward(p, tr, z, sf, LossWeights())
    assert loss.total == total_loss(p, tr, z, sf, LossWeights()).total


def test_stale_trace_rejected(rng):
    p = HeadParams.init(2, 3, 1)
    tr = forward(p, p.kernels0, rng.normal(size=(3, 2, 2)), 2)
    q = p.copy()
    q.cls_bias[0] += 1.0
    with pytest.raises(StaleTraceError):
        backward(q, tr, np.ones((1, 2, 2)), np.ones((1, 1)), LossWeights())


def test_backward_without_proposals():
    rng = np.random.default_rng(0)
    p = HeadParams.init(3, 4, 2)
    feat = rng.normal(size=(4, 3, 3))
    z = np.zeros((0, 3, 3))
    sf = np.zeros((0, 2))
    w = LossWeights()
    g, loss = backward(p, forward(p, p.kernels0, feat, 2), z, sf, w)
    num = _numeric(p, lambda pp: pp.kernels0, feat, z, sf, w, [], 2)
    for name, v in g.items():
        assert rel_err(v, num[name]) < 1e-6, name
    assert not g.seed_proj_weight.any()
