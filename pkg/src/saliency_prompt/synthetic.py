"""Synthetic blob scenes and a fixed filter-bank feature extractor.

Scenes are small RGB images in [0, 1]: a grey background with uniform
noise and a few disjoint constant-colour rectangles or ellipses.

The extractor maps ``3 x H x W`` RGB to ``9 x H x W`` (``D = 9``), or to
``9 x ceil(H/s) x ceil(W/s)`` with ``stride = s`` (s x s average pooling,
partial cells at the border):

====  =====================================================================
0-2   ``max(rgb - median_rgb, 0)``, median taken per channel over the image
3-5   ``max(median_rgb - rgb, 0)``
6     ``GRAD_GAIN * |d lum / dx|``, central difference, edge-replicated
7     ``GRAD_GAIN * |d lum / dy|``
8     ``STD_GAIN * std of lum over a 3x3 window`` (edge-replicated)
====  =====================================================================

with ``lum = mean(rgb)``. All channels are non-negative, so the seed
responses used for proposals never go negative.

The head does not read these features directly: :func:`neck` lifts them to
``C`` channels with a fixed orthonormal embedding plus a constant channel,
which preserves dot products and gives the kernels a bias input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

FEATURE_DIM = 9
GRAD_GAIN = 0.25
STD_GAIN = 0.5
NECK_SEED = 20230101

PALETTE = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
])


@dataclass(frozen=True)
class SceneSpec:
    height: int = 32
    width: int = 32
    min_blobs: int = 2
    max_blobs: int = 4
    min_size: int = 7
    max_size: int = 13
    noise: float = 0.05
    background: float = 0.5
    shapes: tuple = ("rect", "ellipse")

    def __post_init__(self):
        if self.max_blobs > len(PALETTE):
            raise ValueError(f"at most {len(PALETTE)} blobs (one per palette colour)")
        if not 0 <= self.min_blobs <= self.max_blobs:
            raise ValueError("need 0 <= min_blobs <= max_blobs")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("need 1 <= min_size <= max_size")


@dataclass
class Blob:
    shape: str
    y0: int
    x0: int
    h: int
    w: int
    color: tuple

    def expected_area(self) -> float:
        if self.shape == "rect":
            return float(self.h * self.w)
        return float(np.pi * self.h * self.w / 4.0)

    def raster(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        if self.shape == "rect":
            m[self.y0:self.y0 + self.h, self.x0:self.x0 + self.w] = True
            return m
        yy, xx = np.mgrid[0:height, 0:width]
        cy = self.y0 + (self.h - 1) / 2.0
        cx = self.x0 + (self.w - 1) / 2.0
        m[((yy - cy) / (self.h / 2.0)) ** 2 + ((xx - cx) / (self.w / 2.0)) ** 2 <= 1.0] = True
        return m


@dataclass
class SyntheticScene:
    image: np.ndarray  # 3 x H x W
    masks: np.ndarray  # K x H x W bool
    blobs: list = field(default_factory=list)
    seed: int = 0

    @property
    def hw(self) -> tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]


def make_synthetic_scene(spec: SceneSpec | None = None, seed: int = 0,
                         n_blobs: int | None = None) -> SyntheticScene:
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    k = int(rng.integers(spec.min_blobs, spec.max_blobs + 1)) if n_blobs is None else n_blobs
    if k > len(PALETTE):
        raise ValueError("too many blobs for the palette")
    colors = rng.permutation(len(PALETTE))[:k]
    img = spec.background + rng.uniform(-spec.noise, spec.noise, (3, h, w))
    for _ in range(100):
        placed = _place_blobs(spec, rng, colors)
        if placed is not None:
            break
    else:
        raise RuntimeError("could not place blobs without overlap; enlarge the scene")
    blobs, masks = placed
    for blob, m in zip(blobs, masks):
        img[:, m] = np.array(blob.color)[:, None]
    masks = np.array(masks) if masks else np.zeros((0, h, w), dtype=bool)
    return SyntheticScene(np.clip(img, 0.0, 1.0), masks, blobs, seed)


def _place_blobs(spec, rng, colors):
    h, w = spec.height, spec.width
    occupied = np.zeros((h, w), dtype=bool)
    blobs, masks = [], []
    for ci in colors:
        for _ in range(50):
            bh = int(rng.integers(spec.min_size, min(spec.max_size, h) + 1))
            bw = int(rng.integers(spec.min_size, min(spec.max_size, w) + 1))
            blob = Blob(str(rng.choice(spec.shapes)), int(rng.integers(0, h - bh + 1)),
                        int(rng.integers(0, w - bw + 1)), bh, bw, tuple(PALETTE[ci]))
            m = blob.raster(h, w)
            # one pixel of clearance so blobs never touch
            grown = uniform_filter(m.astype(float), size=3, mode="constant") > 0
            if not (grown & occupied).any():
                break
        else:
            return None
        occupied |= m
        blobs.append(blob)
        masks.append(m)
    return blobs, masks


def make_dataset(count: int, seed: int = 0, spec: SceneSpec | None = None) -> list[SyntheticScene]:
    return [make_synthetic_scene(spec, seed * 100003 + i) for i in range(count)]


def _central_diff(a: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0)] * a.ndim
    pad[axis] = (1, 1)
    p = np.pad(a, pad, mode="edge")
    hi = np.take(p, np.arange(2, a.shape[axis] + 2), axis=axis)
    lo = np.take(p, np.arange(0, a.shape[axis]), axis=axis)
    return (hi - lo) / 2.0


def toy_feature_extractor(rgb: np.ndarray, stride: int = 1) -> np.ndarray:
    """Fixed 9-channel filter bank, see the module docstring."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected 3 x H x W, got {rgb.shape}")
    med = np.median(rgb.reshape(3, -1), axis=1)[:, None, None]
    diff = rgb - med
    lum = rgb.mean(axis=0)
    mean = uniform_filter(lum, size=3, mode="nearest")
    var = np.maximum(uniform_filter(lum * lum, size=3, mode="nearest") - mean * mean, 0.0)
    out = np.concatenate([
        np.maximum(diff, 0.0),
        np.maximum(-diff, 0.0),
        GRAD_GAIN * np.abs(_central_diff(lum, 1))[None],
        GRAD_GAIN * np.abs(_central_diff(lum, 0))[None],
        STD_GAIN * np.sqrt(var)[None],
    ])
    if stride > 1:
        out = _pool(out, stride)
    return out


def _pool(x: np.ndarray, s: int) -> np.ndarray:
    c, h, w = x.shape
    oh, ow = -(-h // s), -(-w // s)
    out = np.empty((c, oh, ow))
    for i in range(oh):
        for j in range(ow):
            out[:, i, j] = x[:, i * s:(i + 1) * s, j * s:(j + 1) * s].mean(axis=(1, 2))
    return out


def neck_matrix(d: int, c: int, seed: int = NECK_SEED) -> np.ndarray:
    """Fixed ``(c - 1) x d`` matrix with orthonormal columns."""
    if c - 1 < d:
        raise ValueError(f"C={c} must exceed D={d} for a dot-product preserving neck")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(c - 1, d)))
    return q


def neck(x: np.ndarray, c: int) -> np.ndarray:
    """Lift ``D x H x W`` features to the head's ``C x H x W`` input."""
    x = np.asarray(x, dtype=np.float64)
    d, h, w = x.shape
    lifted = np.tensordot(neck_matrix(d, c), x, axes=(1, 0))
    return np.concatenate([lifted, np.ones((1, h, w))])
