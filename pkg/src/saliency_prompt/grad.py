"""Analytic gradients of :func:`losses.total_loss` for every head parameter.

The kernel/proposal matching is treated as a constant. Prompt injection is
additive with constant prompts, so the gradient for ``kernels0`` is the
gradient for the injected kernels.
"""

from __future__ import annotations

import numpy as np

from .head import ForwardTrace, HeadParams
from .losses import (PROB_CLAMP, LossResult, LossWeights, as_target_stack,
                     kernel_stages, total_loss)
from .tensor import ZERO_NORM


class StaleTraceError(ValueError):
    """The trace was produced with different parameter values."""


def _focal_dp(p, target, gamma, alpha):
    clipped = (p < PROB_CLAMP) | (p > 1.0 - PROB_CLAMP)
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = target == 1
    p_t = np.where(pos, p, 1.0 - p)
    a_t = np.where(pos, alpha, 1.0 - alpha)
    one_m = 1.0 - p_t
    d_pt = -a_t * one_m ** gamma / p_t
    if gamma != 0:
        d_pt = d_pt + a_t * gamma * one_m ** (gamma - 1) * np.log(p_t)
    d_p = np.where(pos, d_pt, -d_pt)
    return np.where(clipped, 0.0, d_p)


def _cos_grads(q, k):
    nq, nk = np.linalg.norm(q), np.linalg.norm(k)
    if nq < ZERO_NORM or nk < ZERO_NORM:
        return np.zeros_like(q), np.zeros_like(k)
    c = q @ k / (nq * nk)
    return k / (nq * nk) - c * q / nq**2, q / (nq * nk) - c * k / nk**2


def backward(params: HeadParams, trace: ForwardTrace, proposals, seed_feats,
             weights: LossWeights, pairs=None) -> tuple[HeadParams, LossResult]:
    """Return ``(grads, loss)`` where ``grads`` mirrors ``params`` field by field."""
    if trace.params_token != params.fingerprint():
        raise StaleTraceError("trace does not belong to these parameters")
    loss = total_loss(params, trace, proposals, seed_feats, weights, pairs)
    z = as_target_stack(proposals, trace.hw)
    seed_feats = np.asarray(seed_feats, dtype=np.float64)
    g = params.zeros_like()
    T = trace.stages
    n = trace.prob.shape[0]
    f = trace.feat
    pairs = loss.match.pairs
    dK = [np.zeros_like(k) for k in trace.kernels]

    # classification head on K[T]
    targets = np.zeros(n)
    for a, _ in pairs:
        targets[a] = 1.0
    p = trace.prob
    dz = weights.cls / n * _focal_dp(p, targets, weights.focal_gamma, weights.focal_alpha) * p * (1.0 - p)
    g.cls_weight += dz @ trace.kernels[T]
    g.cls_bias += dz.sum()
    dK[T] += np.outer(dz, params.cls_weight)

    dM_last = np.zeros_like(trace.masks[-1])
    if pairs:
        npairs = len(pairs)
        m_last = trace.masks[-1]
        eps = weights.dice_eps
        n_pix = m_last.shape[1]
        for a, b in pairs:
            m, t = m_last[a], z[b]
            inter = 2.0 * (m * t).sum() + eps
            den = m.sum() + t.sum() + eps
            d_dice = -(2.0 * t * den - inter) / den**2
            mc = np.clip(m, PROB_CLAMP, 1.0 - PROB_CLAMP)
            d_bce = (-t / mc + (1.0 - t) / (1.0 - mc)) / n_pix
            d_bce = np.where(mc != m, 0.0, d_bce)
            dM_last[a] += (weights.dice * d_dice + weights.ce * d_bce) / npairs

        # kernel supervision
        scale = weights.ker / npairs
        for a, b in pairs:
            s = seed_feats[b]
            q = params.seed_proj_weight @ s + params.seed_proj_bias
            dq = np.zeros_like(q)
            for i in kernel_stages(trace, weights.ker_include_initial):
                gq, gk = _cos_grads(q, trace.kernels[i][a])
                dq -= scale * gq
                dK[i][a] -= scale * gk
            g.seed_proj_weight += np.outer(dq, s)
            g.seed_proj_bias += dq

    # unroll the kernel updates
    for i in range(T - 1, -1, -1):
        dk_next = dK[i + 1]
        pooled, mass, m = trace.pooled[i], trace.mass[i], trace.masks[i]
        g.update_weight += dk_next.T @ pooled
        g.update_bias += dk_next.sum(axis=0)
        dK[i] += dk_next
        d_pooled = dk_next @ params.update_weight
        d_mass = -(d_pooled * pooled).sum(axis=1) / mass
        dM = (d_pooled / mass[:, None]) @ f + d_mass[:, None]
        if i == T - 1:
            dM = dM + dM_last
        dK[i] += (dM * m * (1.0 - m)) @ f.T
    g.kernels0 += dK[0]
    return g, loss
