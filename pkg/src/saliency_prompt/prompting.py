"""Saliency prompts and prompt-to-kernel assignment.

Prompts are box-pooled features of the proposals. Each initial kernel is
paired with one prompt (several kernels may share a prompt) and the prompt
is added to it. Three assignment strategies are provided: cosine argmax,
sequential (``n mod L``) and random.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .tensor import avg_pool_region, cosine_rows

STRATEGIES = ("cosine", "sequential", "random", "none")


@dataclass
class PromptSet:
    prompts: np.ndarray  # L x C
    source: list

    def __len__(self) -> int:
        return self.prompts.shape[0]


@dataclass
class Assignment:
    delta: np.ndarray  # length N, int
    similarity: np.ndarray | None = None  # N x L, cosine strategy only
    strategy: str = "cosine"

    def to_json(self) -> dict:
        """Debug dump: sizes, strategy, delta and per-kernel best similarity."""
        n = int(self.delta.size)
        doc = {"N": n, "L": None, "strategy": self.strategy,
               "delta": [int(d) for d in self.delta], "row_max": None}
        if self.similarity is not None:
            doc["L"] = int(self.similarity.shape[1])
            doc["row_max"] = [float(v) for v in self.similarity.max(axis=1)]
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def rescale_box(box, src_hw, dst_hw) -> tuple[int, int, int, int]:
    """Map an inclusive box between resolutions, rounding outward."""
    (sh, sw), (dh, dw) = src_hw, dst_hw
    x0, y0, x1, y1 = box
    fx, fy = dw / sw, dh / sh
    return (
        max(0, math.floor(x0 * fx)),
        max(0, math.floor(y0 * fy)),
        min(dw - 1, math.ceil((x1 + 1) * fx) - 1),
        min(dh - 1, math.ceil((y1 + 1) * fy) - 1),
    )


def make_prompts(feat: np.ndarray, proposals, mask_hw=None) -> PromptSet:
    """Average-pool ``feat`` (C x H x W) over each proposal's tight box.

    ``mask_hw`` is the resolution the proposal boxes live in; when it
    differs from the feature map the boxes are rescaled outward first.
    """
    feat = np.asarray(feat, dtype=np.float64)
    c, h, w = feat.shape
    rows = []
    for p in proposals:
        box = p.box
        if mask_hw is not None and tuple(mask_hw) != (h, w):
            box = rescale_box(box, mask_hw, (h, w))
        rows.append(avg_pool_region(feat, box))
    prompts = np.array(rows) if rows else np.zeros((0, c))
    return PromptSet(prompts, list(range(len(rows))))


def similarity_matrix(kernels: np.ndarray, prompts: np.ndarray) -> np.ndarray:
    prompts = np.asarray(prompts)
    if prompts.ndim != 2 or prompts.shape[0] < 1:
        raise ValueError("need at least one prompt")
    return cosine_rows(kernels, prompts)


def match_cosine(similarity: np.ndarray) -> Assignment:
    e = np.asarray(similarity, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] < 1:
        raise ValueError("similarity must be N x L with L >= 1")
    # np.argmax returns the first maximum, i.e. the lowest prompt index on ties
    return Assignment(np.argmax(e, axis=1), e, "cosine")


def match_sequential(n: int, l: int) -> Assignment:
    if l < 1:
        raise ValueError("need at least one prompt")
    return Assignment(np.arange(n) % l, None, "sequential")


def match_random(n: int, l: int, rng_seed: int) -> Assignment:
    """``delta[k] = SplitMix64(rng_seed).below(l)`` drawn for k = 0..n-1."""
    if l < 1:
        raise ValueError("need at least one prompt")
    rng = SplitMix64(rng_seed)
    return Assignment(np.array([rng.below(l) for _ in range(n)], dtype=np.int64), None, "random")


def assign(strategy: str, kernels: np.ndarray, prompts: np.ndarray, rng_seed: int = 0) -> Assignment | None:
    """Dispatch on strategy name; ``None`` when there is nothing to inject."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown assignment strategy {strategy!r}")
    n, l = kernels.shape[0], prompts.shape[0]
    if strategy == "none" or l == 0:
        return None
    if strategy == "cosine":
        return match_cosine(similarity_matrix(kernels, prompts))
    if strategy == "sequential":
        return match_sequential(n, l)
    return match_random(n, l, rng_seed)


def inject(kernels: np.ndarray, prompts: np.ndarray, delta) -> np.ndarray:
    kernels = np.asarray(kernels, dtype=np.float64)
    prompts = np.asarray(prompts, dtype=np.float64)
    if prompts.shape[0] == 0:
        return kernels.copy()
    delta = np.asarray(delta, dtype=np.int64)
    if delta.shape != (kernels.shape[0],):
        raise ValueError(f"delta has shape {delta.shape}, expected ({kernels.shape[0]},)")
    if delta.min() < 0 or delta.max() >= prompts.shape[0]:
        raise IndexError("delta refers to a missing prompt")
    return kernels + prompts[delta]
