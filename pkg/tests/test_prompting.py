import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saliency_prompt.proposals import MaskProposal
from saliency_prompt.prompting import (assign, inject, make_prompts, match_cosine, match_random,
                                       match_sequential, rescale_box, similarity_matrix)

GOLDEN = Path(__file__).parent / "golden"


def _box_prop(box, hw):
    m = np.zeros(hw, bool)
    x0, y0, x1, y1 = box
    m[y0:y1 + 1, x0:x1 + 1] = True
    return MaskProposal(m, 1.0, box)


def test_make_prompts_box_means(rng):
    feat = rng.normal(size=(3, 6, 5))
    props = [_box_prop((1, 2, 3, 4), (6, 5)), _box_prop((0, 0, 0, 0), (6, 5))]
    ps = make_prompts(feat, props)
    assert len(ps) == 2
    np.testing.assert_allclose(ps.prompts[0], feat[:, 2:5, 1:4].mean(axis=(1, 2)))
    np.testing.assert_array_equal(ps.prompts[1], feat[:, 0, 0])
    assert make_prompts(feat, []).prompts.shape == (0, 3)


def test_rescale_box_outward():
    assert rescale_box((1, 1, 2, 2), (8, 8), (4, 4)) == (0, 0, 1, 1)
    assert rescale_box((0, 0, 7, 7), (8, 8), (4, 4)) == (0, 0, 3, 3)
    assert rescale_box((2, 0, 2, 0), (4, 4), (8, 8)) == (4, 0, 5, 1)


def test_cosine_match_and_ties():
    e = np.array([[0.1, 0.9, 0.9], [0.5, 0.2, 0.1], [-1.0, -1.0, -1.0]])
    a = match_cosine(e)
    assert a.delta.tolist() == [1, 0, 0]
    doc = json.loads(a.dumps())
    assert doc["N"] == 3 and doc["L"] == 3 and doc["row_max"] == [0.9, 0.5, -1.0]


def test_cosine_match_example():
    k = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    p = np.array([[0.0, 2.0], [3.0, 0.1]])
    assert assign("cosine", k, p).delta.tolist() == [1, 0, 1]


def test_sequential_and_random():
    assert match_sequential(5, 2).delta.tolist() == [0, 1, 0, 1, 0]
    g = json.loads((GOLDEN / "match_random_seed3.json").read_text())
    assert match_random(g["n"], g["l"], g["rng_seed"]).delta.tolist() == g["delta"]
    a, b = match_random(50, 7, 11), match_random(50, 7, 11)
    assert np.array_equal(a.delta, b.delta) and a.delta.max() < 7


def test_assign_none_and_empty():
    k = np.ones((3, 2))
    assert assign("none", k, np.ones((2, 2))) is None
    assert assign("cosine", k, np.zeros((0, 2))) is None
    with pytest.raises(ValueError):
        assign("nearest", k, np.ones((1, 2)))
    with pytest.raises(ValueError):
        similarity_matrix(k, np.zeros((0, 2)))


def test_inject():
    k = np.zeros((3, 2))
    p = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(inject(k, p, [1, 0, 1]), [[3, 4], [1, 2], [3, 4]])
    np.testing.assert_array_equal(inject(k, np.zeros((0, 2)), []), k)
    with pytest.raises(IndexError):
        inject(k, p, [0, 2, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 6))
def test_cosine_injection_permutation_invariant(seed, n, l):
    r = np.random.default_rng(seed)
    k = r.normal(size=(n, 4))
    p = r.normal(size=(l, 4))
    perm = r.permutation(l)
    a = inject(k, p, assign("cosine", k, p).delta)
    b = inject(k, p[perm], assign("cosine", k, p[perm]).delta)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_cosine_assignment_scale_invariant(seed, alpha):
    r = np.random.default_rng(seed)
    k = r.normal(size=(6, 3))
    p = r.normal(size=(4, 3))
    assert assign("cosine", k, p).delta.tolist() == assign("cosine", k, alpha * p).delta.tolist()
