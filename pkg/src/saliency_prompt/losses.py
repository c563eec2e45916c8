"""Set-prediction losses for the kernel head.

Matched kernels are supervised with focal (foreground), Dice, BCE and the
kernel cosine term; unmatched kernels only get a background focal term.
Each term is averaged over the items that contribute to it before the
weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .head import ForwardTrace, HeadParams
from .tensor import ZERO_NORM

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    dice: float = 4.0
    ce: float = 1.0
    ker: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    ker_include_initial: bool = False

    def __post_init__(self):
        for name in ("cls", "dice", "ce", "ker"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class MatchResult:
    pairs: list  # (kernel index, proposal index), ordered by proposal
    unmatched: list
    total_cost: float


@dataclass
class LossResult:
    total: float
    terms: dict
    match: MatchResult = field(repr=False)


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def focal_loss(p, target, gamma: float = 2.0, alpha: float = 0.25):
    """Binary focal loss, elementwise over ``p`` and ``target``."""
    p = _clamp(np.asarray(p, dtype=np.float64))
    t = np.asarray(target, dtype=np.float64)
    p_t = np.where(t == 1, p, 1.0 - p)
    a_t = np.where(t == 1, alpha, 1.0 - alpha)
    out = -a_t * (1.0 - p_t) ** gamma * np.log(p_t)
    return float(out) if out.ndim == 0 else out


def dice_loss(pred, gt, eps: float = 1.0) -> float:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    return float(1.0 - (2.0 * (p * g).sum() + eps) / (p.sum() + g.sum() + eps))


def bce_loss(pred, gt) -> float:
    p = _clamp(np.asarray(pred, dtype=np.float64))
    g = np.asarray(gt, dtype=np.float64)
    return float(-(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)).mean())


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        return 0.0
    return float(a @ b / (na * nb))


def kernel_stages(trace: ForwardTrace, include_initial: bool = False) -> range:
    return range(0 if include_initial else 1, len(trace.kernels))


def kernel_loss(params: HeadParams, trace: ForwardTrace, pairs, seed_feats,
                include_initial: bool = False) -> float:
    """Sum over matched pairs and update stages of ``1 - cos(W_s S_l + b_s, K_i[n_l])``."""
    seed_feats = np.asarray(seed_feats, dtype=np.float64)
    total = 0.0
    for n, l in pairs:
        q = params.seed_proj_weight @ seed_feats[l] + params.seed_proj_bias
        for i in kernel_stages(trace, include_initial):
            total += 1.0 - _cos(q, trace.kernels[i][n])
    return total


def match_hungarian(cost) -> MatchResult:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] < 1 or cost.shape[1] < 1:
        raise ValueError(f"cost must be a non-empty 2-D matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cols, kind="stable")
    pairs = [(int(rows[k]), int(cols[k])) for k in order]
    used = {n for n, _ in pairs}
    if len(used) != len(pairs) or len({l for _, l in pairs}) != len(pairs):
        raise AssertionError("assignment is not injective")
    unmatched = [n for n in range(cost.shape[0]) if n not in used]
    return MatchResult(pairs, unmatched, float(cost[rows, cols].sum()))


def as_target_stack(proposals, hw=None) -> np.ndarray:
    """Stack proposal masks (or pass through an array) as ``L x P`` floats."""
    if isinstance(proposals, np.ndarray):
        arr = proposals.astype(np.float64)
    else:
        proposals = list(proposals)
        if not proposals:
            p = int(np.prod(hw)) if hw is not None else 0
            return np.zeros((0, p))
        arr = np.stack([np.asarray(p.mask, dtype=np.float64) for p in proposals])
    if arr.shape[0] == 0:
        return np.zeros((0, int(np.prod(arr.shape[1:])) if arr.ndim > 1 else 0))
    return arr.reshape(arr.shape[0], -1)


def build_cost(trace: ForwardTrace, proposals, weights: LossWeights) -> np.ndarray:
    """Matching cost ``N x L`` on the final-stage masks."""
    z = as_target_stack(proposals, trace.hw)
    m = trace.masks[-1]
    inter = m @ z.T
    dice = 1.0 - (2.0 * inter + weights.dice_eps) / (
        m.sum(1)[:, None] + z.sum(1)[None, :] + weights.dice_eps)
    mc = _clamp(m)
    bce = -(np.log(mc) @ z.T + np.log(1.0 - mc) @ (1.0 - z).T) / m.shape[1]
    return weights.cls * (-trace.prob)[:, None] + weights.dice * dice + weights.ce * bce


def total_loss(params: HeadParams, trace: ForwardTrace, proposals, seed_feats,
               weights: LossWeights, pairs=None) -> LossResult:
    """Weighted set-prediction loss for one image.

    ``pairs`` pins the kernel/proposal assignment; by default it comes from
    Hungarian matching on :func:`build_cost`.
    """
    z = as_target_stack(proposals, trace.hw)
    n, l = trace.prob.shape[0], z.shape[0]
    if pairs is None:
        if l == 0:
            match = MatchResult([], list(range(n)), 0.0)
        else:
            match = match_hungarian(build_cost(trace, z, weights))
    else:
        used = {k for k, _ in pairs}
        match = MatchResult(list(pairs), [k for k in range(n) if k not in used], float("nan"))
    targets = np.zeros(n)
    for k, _ in match.pairs:
        targets[k] = 1.0
    l_cls = float(np.mean(focal_loss(trace.prob, targets, weights.focal_gamma, weights.focal_alpha)))
    l_dice = l_ce = l_ker = 0.0
    if match.pairs:
        m = trace.masks[-1]
        k = len(match.pairs)
        l_dice = sum(dice_loss(m[a], z[b], weights.dice_eps) for a, b in match.pairs) / k
        l_ce = sum(bce_loss(m[a], z[b]) for a, b in match.pairs) / k
        l_ker = kernel_loss(params, trace, match.pairs, seed_feats, weights.ker_include_initial) / k
    terms = {"cls": l_cls, "dice": l_dice, "ce": l_ce, "ker": l_ker}
    total = (weights.cls * l_cls + weights.dice * l_dice
             + weights.ce * l_ce + weights.ker * l_ker)
    return LossResult(float(total), terms, match)
