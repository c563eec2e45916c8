import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saliency_prompt.tensor import (BadMagicError, TruncatedPayloadError, avg_pool_region, cosine,
                                    dot_conv, linear_normalize, read_tensor, sigmoid, write_tensor)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_avg_pool_constant():
    t = np.full((4, 5, 6), 3.0)
    np.testing.assert_array_equal(avg_pool_region(t, (1, 1, 4, 3)), np.full(4, 3.0))


def test_avg_pool_full_and_single():
    t = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    assert avg_pool_region(t, (0, 0, 1, 1)).tolist() == [2.5]
    assert avg_pool_region(t, (0, 0, 0, 0)).tolist() == [1.0]


@pytest.mark.parametrize("box", [(0, 0, 2, 1), (-1, 0, 0, 0), (1, 0, 0, 0)])
def test_avg_pool_rejects_bad_box(box):
    with pytest.raises(ValueError):
        avg_pool_region(np.zeros((1, 2, 2)), box)


def test_cosine_examples():
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-15)
    assert cosine([0, 0], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        cosine([1, 2], [1, 2, 3])


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(u, v, alpha):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    assert abs(cosine(alpha * u, v) - cosine(u, v)) <= 1e-12


def test_linear_normalize_examples():
    np.testing.assert_array_equal(linear_normalize([[0.5, 0], [0, 0.5]]), [[1, 0], [0, 1]])
    np.testing.assert_array_equal(linear_normalize(np.full((3, 3), 7.0)), np.zeros((3, 3)))
    x = np.array([[0.0, 0.25], [1.0, 0.5]])
    np.testing.assert_array_equal(linear_normalize(x), x)


@given(arrays(np.float64, (4, 4), elements=finite))
def test_linear_normalize_range(x):
    y = linear_normalize(x)
    if x.max() > x.min():
        assert y.min() == 0.0 and y.max() == 1.0
    else:
        assert not y.any()


def test_sigmoid():
    assert sigmoid(np.array(0.0)) == 0.5
    assert abs(sigmoid(np.array([100.0]))[0] - 1.0) < 1e-12
    x = np.linspace(-50, 50, 101)
    np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)
    y = sigmoid(np.array([-700.0, 700.0]))
    assert np.all(np.isfinite(y))


def test_dot_conv_examples(rng):
    assert not dot_conv(np.zeros(3), rng.normal(size=(3, 4, 4))).any()
    np.testing.assert_array_equal(dot_conv([2.0], [[[1.0, 3.0]]]), [[2.0, 6.0]])
    w = rng.normal(size=2)
    f = rng.normal(size=(2, 2, 2))
    loop = np.zeros((2, 2))
    for y in range(2):
        for x in range(2):
            loop[y, x] = w[0] * f[0, y, x] + w[1] * f[1, y, x]
    np.testing.assert_allclose(dot_conv(w, f), loop, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        dot_conv(np.ones(3), f)


@settings(max_examples=50)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_dot_conv_linear(a, b, seed):
    r = np.random.default_rng(seed)
    w1, w2 = r.normal(size=3), r.normal(size=3)
    f = r.normal(size=(3, 5, 4))
    lhs = dot_conv(a * w1 + b * w2, f)
    rhs = a * dot_conv(w1, f) + b * dot_conv(w2, f)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(7,), (2, 3), (2, 3, 4), (2, 1, 3, 2)])
def test_roundtrip_bit_exact(tmp_path, rng, dtype, shape):
    t = rng.normal(size=shape).astype(dtype)
    p = tmp_path / "t.spt"
    write_tensor(p, t)
    back = read_tensor(p)
    assert back.dtype == t.dtype and back.shape == t.shape
    assert back.tobytes() == t.tobytes()


def test_header_layout(tmp_path):
    p = tmp_path / "t.spt"
    write_tensor(p, np.arange(6, dtype=np.float64).reshape(2, 3))
    raw = p.read_bytes()
    assert raw[:8] == b"SPTENSR1"
    assert int.from_bytes(raw[8:12], "little") == 1
    assert raw[12] == 1 and raw[13] == 2
    assert int.from_bytes(raw[14:22], "little") == 2
    assert int.from_bytes(raw[22:30], "little") == 3
    assert len(raw) == 30 + 6 * 8
    assert read_tensor(p).shape == (2, 3)


def test_float32_widened(tmp_path):
    p = tmp_path / "t.spt"
    write_tensor(p, np.ones((2, 2), dtype=np.float32))
    assert read_tensor(p, widen=True).dtype == np.float64


def test_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "t.spt"
    write_tensor(p, np.ones(4))
    raw = p.read_bytes()
    p.write_bytes(b"XX" + raw[2:])
    with pytest.raises(BadMagicError):
        read_tensor(p)
    p.write_bytes(raw[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_tensor(p)
    assert BadMagicError.code != TruncatedPayloadError.code
