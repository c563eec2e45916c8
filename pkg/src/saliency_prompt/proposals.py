"""Saliency mask proposals from a dense feature map.

Pipeline per image: pool a grid of seed features, use each seed as 1x1
convolution weights over the map, min-max normalize the response,
threshold it, drop near-empty masks, score, and run greedy mask NMS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import mask_iou, mask_to_box
from .rng import SplitMix64
from .tensor import dot_conv, linear_normalize


@dataclass(frozen=True)
class ProposalConfig:
    grid_h: int = 10
    grid_w: int = 10
    binarize_threshold: float = 0.5
    nms_iou_threshold: float = 0.5
    min_area_fraction: float = 0.005

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if not 0.0 < self.nms_iou_threshold < 1.0:
            raise ValueError("nms_iou_threshold must lie in (0, 1)")
        if not 0.0 <= self.min_area_fraction < 1.0:
            raise ValueError("min_area_fraction must lie in [0, 1)")

    def min_area(self, h: int, w: int) -> int:
        return max(1, math.ceil(self.min_area_fraction * h * w))

    def to_dict(self) -> dict:
        return {
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "binarize_threshold": self.binarize_threshold,
            "nms_iou_threshold": self.nms_iou_threshold,
            "min_area_fraction": self.min_area_fraction,
        }


@dataclass
class SeedGrid:
    grid_h: int
    grid_w: int
    seed_features: np.ndarray  # H' x W' x D
    seed_boxes: list = field(default_factory=list)  # raster order, (x0, y0, x1, y1)

    def feature(self, i: int, j: int) -> np.ndarray:
        return self.seed_features[i, j]


@dataclass
class MaskProposal:
    mask: np.ndarray  # bool, H x W
    score: float
    box: tuple
    seed_index: tuple | None = None

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def _splits(n: int, parts: int) -> list[tuple[int, int]]:
    # equal cells, the last one absorbs the remainder
    step = n // parts
    edges = [k * step for k in range(parts)] + [n]
    return [(edges[k], edges[k + 1] - 1) for k in range(parts)]


def sample_seeds(x: np.ndarray, grid: tuple[int, int]) -> SeedGrid:
    """Average-pool an ``H x W x D`` map over a ``H' x W'`` grid of rects."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected H x W x D, got {x.shape}")
    h, w, d = x.shape
    gh, gw = grid
    if gh < 1 or gw < 1 or gh > h or gw > w:
        raise ValueError(f"grid {grid} does not fit a {h}x{w} map")
    rows = _splits(h, gh)
    cols = _splits(w, gw)
    feats = np.empty((gh, gw, d))
    boxes = []
    for i, (y0, y1) in enumerate(rows):
        for j, (x0, x1) in enumerate(cols):
            feats[i, j] = x[y0:y1 + 1, x0:x1 + 1].mean(axis=(0, 1))
            boxes.append((x0, y0, x1, y1))
    return SeedGrid(gh, gw, feats, boxes)


def dense_saliency(seed, x: np.ndarray) -> np.ndarray:
    """Normalized response of one seed convolved over ``x`` (H x W x D)."""
    x = np.asarray(x, dtype=np.float64)
    raw = dot_conv(seed, np.moveaxis(x, -1, 0))
    return linear_normalize(raw)


def binarize(y: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(y) >= threshold


def _nms_key(p: MaskProposal):
    seed = p.seed_index if p.seed_index is not None else (math.inf, math.inf)
    return (-p.score, -p.area, tuple(seed))


def mask_nms(proposals, iou_threshold: float) -> list[MaskProposal]:
    """Greedy mask NMS.

    Candidates are visited by score (desc), then area (desc), then seed
    raster order; a candidate survives when its mask IoU with every kept
    proposal is below ``iou_threshold``.
    """
    kept: list[MaskProposal] = []
    for cand in sorted(proposals, key=_nms_key):
        if all(mask_iou(cand.mask, k.mask) < iou_threshold for k in kept):
            kept.append(cand)
    return kept


def propose_masks(x: np.ndarray, cfg: ProposalConfig | None = None) -> list[MaskProposal]:
    """Full proposal pipeline on an ``H x W x D`` feature map.

    May return an empty list, e.g. for a featureless map.
    """
    cfg = cfg or ProposalConfig()
    x = np.asarray(x, dtype=np.float64)
    h, w, _ = x.shape
    seeds = sample_seeds(x, (cfg.grid_h, cfg.grid_w))
    min_area = cfg.min_area(h, w)
    cands = []
    for i in range(seeds.grid_h):
        for j in range(seeds.grid_w):
            sal = dense_saliency(seeds.feature(i, j), x)
            mask = binarize(sal, cfg.binarize_threshold)
            area = int(mask.sum())
            if area < min_area:
                continue
            cands.append(MaskProposal(
                mask=mask,
                score=float(sal[mask].mean()),
                box=mask_to_box(mask),
                seed_index=(i, j),
            ))
    return mask_nms(cands, cfg.nms_iou_threshold)


def proposal_seed_features(x: np.ndarray, proposals, cfg: ProposalConfig | None = None) -> np.ndarray:
    """Seed feature (D-vector) behind each proposal, stacked as ``L x D``.

    Proposals without a seed (random or imported boxes) fall back to the
    mean feature inside their box.
    """
    cfg = cfg or ProposalConfig()
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if not proposals:
        return np.zeros((0, d))
    seeds = None
    out = np.empty((len(proposals), d))
    for k, p in enumerate(proposals):
        if p.seed_index is not None:
            if seeds is None:
                seeds = sample_seeds(x, (cfg.grid_h, cfg.grid_w))
            out[k] = seeds.feature(*p.seed_index)
        else:
            x0, y0, x1, y1 = p.box
            out[k] = x[y0:y1 + 1, x0:x1 + 1].mean(axis=(0, 1))
    return out


def random_proposals(h: int, w: int, count: int, rng_seed: int,
                     min_area_fraction: float = 0.005) -> list[MaskProposal]:
    """Random axis-aligned rectangles, the bad pseudo-label baseline.

    Per proposal, draws with :class:`SplitMix64` in this order: x-corner a,
    x-corner b, y-corner a, y-corner b (each ``below(w)`` or ``below(h)``),
    redrawing all four until the inclusive area reaches the minimum; then
    ``score = 1 - uniform()``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    min_area = max(1, math.ceil(min_area_fraction * h * w))
    if min_area > h * w:
        raise ValueError("min area exceeds the image")
    rng = SplitMix64(rng_seed)
    out = []
    for _ in range(count):
        while True:
            xa, xb = rng.below(w), rng.below(w)
            ya, yb = rng.below(h), rng.below(h)
            x0, x1 = min(xa, xb), max(xa, xb)
            y0, y1 = min(ya, yb), max(ya, yb)
            if (x1 - x0 + 1) * (y1 - y0 + 1) >= min_area:
                break
        mask = np.zeros((h, w), dtype=bool)
        mask[y0:y1 + 1, x0:x1 + 1] = True
        out.append(MaskProposal(mask=mask, score=1.0 - rng.uniform(),
                                box=(x0, y0, x1, y1), seed_index=None))
    return out
