"""Minimal kernel-mask head.

For stages ``i = 0 .. T-1``::

    M[i]   = sigmoid(K[i] @ F)                       # N x P masks
    g[i]   = (M[i] @ F.T) / (M[i].sum(1) + 1e-6)     # mask-pooled features
    K[i+1] = K[i] + g[i] @ W_u.T + b_u

The last mask stage ``M[T-1]`` is the prediction and the foreground
probability is ``p = sigmoid(K[T] @ w_c + b_c)``. ``F`` is the ``C x H x W``
map flattened to ``C x P``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .tensor import sigmoid

POOL_EPS = 1e-6


@dataclass
class HeadParams:
    kernels0: np.ndarray  # N x C
    update_weight: np.ndarray  # C x C
    update_bias: np.ndarray  # C
    cls_weight: np.ndarray  # C
    cls_bias: np.ndarray  # (1,)
    seed_proj_weight: np.ndarray  # C x D
    seed_proj_bias: np.ndarray  # C

    @classmethod
    def init(cls, n: int, c: int, d: int, seed: int = 0) -> "HeadParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every field."""
        rng = np.random.default_rng(seed)
        bc = 1.0 / np.sqrt(c)
        bd = 1.0 / np.sqrt(d)
        return cls(
            kernels0=rng.uniform(-bc, bc, (n, c)),
            update_weight=rng.uniform(-bc, bc, (c, c)),
            update_bias=rng.uniform(-bc, bc, c),
            cls_weight=rng.uniform(-bc, bc, c),
            cls_bias=rng.uniform(-bc, bc, 1),
            seed_proj_weight=rng.uniform(-bd, bd, (c, d)),
            seed_proj_bias=rng.uniform(-bd, bd, c),
        )

    @property
    def n(self) -> int:
        return self.kernels0.shape[0]

    @property
    def c(self) -> int:
        return self.kernels0.shape[1]

    @property
    def d(self) -> int:
        return self.seed_proj_weight.shape[1]

    def names(self) -> list[str]:
        return [f.name for f in fields(self)]

    def items(self):
        for name in self.names():
            yield name, getattr(self, name)

    def copy(self) -> "HeadParams":
        return HeadParams(**{k: v.copy() for k, v in self.items()})

    def zeros_like(self) -> "HeadParams":
        return HeadParams(**{k: np.zeros_like(v) for k, v in self.items()})

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for _, v in self.items():
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        return h.hexdigest()

    def check(self) -> None:
        n, c, d = self.n, self.c, self.d
        expected = {
            "kernels0": (n, c), "update_weight": (c, c), "update_bias": (c,),
            "cls_weight": (c,), "cls_bias": (1,), "seed_proj_weight": (c, d),
            "seed_proj_bias": (c,),
        }
        for name, v in self.items():
            if v.shape != expected[name]:
                raise ValueError(f"{name} has shape {v.shape}, expected {expected[name]}")
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"{name} holds non-finite values")


@dataclass
class ForwardTrace:
    kernels: list  # K[0..T], each N x C; K[0] is the injected kernel set
    logits: list  # per stage, N x P
    masks: list  # per stage, N x P
    pooled: list  # g per stage, N x C
    mass: list  # per stage, M.sum(1) + eps
    cls_logit: np.ndarray  # N
    prob: np.ndarray  # N
    feat: np.ndarray  # C x P
    hw: tuple
    params_token: str

    @property
    def stages(self) -> int:
        return len(self.masks)

    def final_masks(self) -> np.ndarray:
        """Last-stage masks reshaped to ``N x H x W``."""
        return self.masks[-1].reshape(-1, *self.hw)


def forward(params: HeadParams, injected_kernels: np.ndarray, feat: np.ndarray, T: int = 2) -> ForwardTrace:
    if T < 1:
        raise ValueError("T must be >= 1")
    feat = np.asarray(feat, dtype=np.float64)
    k = np.asarray(injected_kernels, dtype=np.float64)
    if feat.ndim != 3 or feat.shape[0] != params.c:
        raise ValueError(f"feature shape {feat.shape} does not match C={params.c}")
    if k.shape != params.kernels0.shape:
        raise ValueError(f"injected kernels {k.shape} vs kernels0 {params.kernels0.shape}")
    c, h, w = feat.shape
    f = feat.reshape(c, h * w)
    kernels, logits, masks, pooled, mass = [k], [], [], [], []
    for _ in range(T):
        a = k @ f
        m = sigmoid(a)
        s = m.sum(axis=1) + POOL_EPS
        g = (m @ f.T) / s[:, None]
        k = k + g @ params.update_weight.T + params.update_bias
        logits.append(a)
        masks.append(m)
        pooled.append(g)
        mass.append(s)
        kernels.append(k)
    z = k @ params.cls_weight + params.cls_bias[0]
    return ForwardTrace(kernels, logits, masks, pooled, mass, z, sigmoid(z),
                        f, (h, w), params.fingerprint())


def sgd_step(params: HeadParams, grads: HeadParams, lr: float, momentum: float = 0.9,
             velocity: HeadParams | None = None) -> tuple[HeadParams, HeadParams]:
    """Momentum SGD: ``v <- mu * v + g``; ``theta <- theta - lr * v``.

    Returns new ``(params, velocity)``; inputs are left untouched.
    """
    velocity = velocity if velocity is not None else params.zeros_like()
    new_p, new_v = {}, {}
    for name, theta in params.items():
        v = momentum * getattr(velocity, name) + getattr(grads, name)
        new_v[name] = v
        new_p[name] = theta - lr * v
    return HeadParams(**new_p), HeadParams(**new_v)
