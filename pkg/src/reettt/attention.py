"""Temporal (squeeze-and-excitation) and motion-gated attention over (B, T, C, H, W) features."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .nn import Module, kaiming, param, zeros
from .tensor import Tensor


class TemporalAttention(Module):
    """Gate each (time, channel) slice by an SE descriptor of its spatial mean."""

    def __init__(self, t: int, c: int, reduction: int = 4, rng: np.random.Generator | None = None):
        tc = t * c
        if reduction < 1 or tc % reduction:
            raise ValueError(f"reduction ratio {reduction} must divide T*C = {tc}")
        rng = rng or np.random.default_rng(0)
        hidden = tc // reduction
        self.reduction = reduction
        self.t, self.c = t, c
        self.reduce_w = kaiming(rng, (tc, hidden), tc)
        self.reduce_b = zeros(hidden)
        self.expand_w = kaiming(rng, (hidden, tc), hidden, gain=0.5)
        self.expand_b = zeros(tc)

    def forward(self, h: Tensor) -> Tensor:
        return temporal_attention(h, self)


class MotionAttention(Module):
    """Sigmoid gate from a 3x3 convolution over frame differences, applied as h * (1 + m)."""

    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.c = c
        self.kernel = kaiming(rng, (c, c, 3, 3), 9 * c, gain=0.5)
        self.bias = zeros(c)

    def forward(self, h: Tensor) -> Tensor:
        return motion_attention(h, self)


def temporal_attention(h: Tensor, p: TemporalAttention) -> Tensor:
    b, t, c, _, _ = h.shape
    if t * c != p.reduce_w.shape[0]:
        raise ValueError(f"feature T*C = {t * c} does not match attention width {p.reduce_w.shape[0]}")
    desc = F.global_avg_pool_spatial(h).reshape(b, t * c)
    hidden = F.relu(desc @ p.reduce_w + p.reduce_b)
    gate = F.sigmoid(hidden @ p.expand_w + p.expand_b)
    return h * gate.reshape(b, t, c, 1, 1)


def motion_gate(h: Tensor, p: MotionAttention) -> Tensor:
    b, t, c, hh, ww = h.shape
    if c != p.kernel.shape[1]:
        raise ValueError(f"feature channels {c} do not match motion kernel {p.kernel.shape[1]}")
    diff = F.temporal_difference(h).reshape(b * t, c, hh, ww)
    logits = F.conv2d(diff, p.kernel, p.bias, stride=1, pad=1)
    return F.sigmoid(logits).reshape(b, t, c, hh, ww)


def motion_attention(h: Tensor, p: MotionAttention) -> Tensor:
    return h * (motion_gate(h, p) + 1.0)


def skip_branch(h_low: Tensor, pm: MotionAttention, pt: TemporalAttention) -> Tensor:
    """Unweighted mean of the motion and temporal attention branches."""
    return (motion_attention(h_low, pm) + temporal_attention(h_low, pt)) * 0.5


class SkipBranch(Module):
    def __init__(self, t: int, c: int, reduction: int = 4, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.motion = MotionAttention(c, rng)
        self.temporal = TemporalAttention(t, c, reduction, rng)

    def forward(self, h_low: Tensor) -> Tensor:
        return skip_branch(h_low, self.motion, self.temporal)


def neutral_temporal(t: int, c: int, reduction: int = 4) -> TemporalAttention:
    """Zero weights and biases: every gate equals sigmoid(0) = 0.5."""
    p = TemporalAttention(t, c, reduction)
    for name in ("reduce_w", "reduce_b", "expand_w", "expand_b"):
        setattr(p, name, param(np.zeros_like(getattr(p, name).data)))
    return p
