"""Proposal manifests: JSON documents with run-length encoded masks.

A manifest looks like::

    {"image_id": "scene_000", "height": 32, "width": 32,
     "config": {...ProposalConfig...},
     "proposals": [{"seed_index": [i, j] | null, "score": 0.93,
                    "box": [x0, y0, x1, y1], "rle": [z0, o0, z1, o1, ...]}]}

``rle`` flattens the mask row-major and alternates run lengths of 0s and
1s, always starting with a (possibly empty) run of 0s.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import mask_to_box
from .proposals import MaskProposal, ProposalConfig


def rle_encode(mask) -> list[int]:
    flat = np.asarray(mask).astype(bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs, h: int, w: int) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs) or sum(runs) != h * w:
        raise ValueError(f"run lengths do not cover a {h}x{w} mask")
    vals = np.arange(len(runs)) % 2 == 1
    return np.repeat(vals, runs).reshape(h, w)


def proposals_to_manifest(image_id, h: int, w: int, proposals,
                          cfg: ProposalConfig | None = None) -> dict:
    return {
        "image_id": image_id,
        "height": int(h),
        "width": int(w),
        "config": (cfg or ProposalConfig()).to_dict(),
        "proposals": [
            {
                "seed_index": list(p.seed_index) if p.seed_index is not None else None,
                "score": float(p.score),
                "box": [int(v) for v in p.box],
                "rle": rle_encode(p.mask),
            }
            for p in proposals
        ],
    }


def manifest_to_proposals(doc: dict) -> tuple[list[MaskProposal], ProposalConfig]:
    h, w = int(doc["height"]), int(doc["width"])
    cfg = ProposalConfig(**doc.get("config", {}))
    out = []
    for rec in doc["proposals"]:
        mask = rle_decode(rec["rle"], h, w)
        box = tuple(int(v) for v in rec["box"])
        if mask_to_box(mask) != box:
            raise ValueError(f"box {box} does not bound its mask")
        seed = rec.get("seed_index")
        out.append(MaskProposal(mask=mask, score=float(rec["score"]), box=box,
                                seed_index=tuple(seed) if seed is not None else None))
    return out, cfg


def write_manifest(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def write_pgm(path, img, vmax: float = 1.0) -> None:
    """Write a 2-D array scaled from [0, vmax] to an 8-bit binary PGM (P5)."""
    arr = np.clip(np.asarray(img, dtype=np.float64) / vmax, 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L").save(path, format="PPM")
