"""Spatio-temporal test-time-training layer.

Three views of the encoded features drive a per-sequence inner model:

* training view  ``h^K = h @ theta_k`` (per-token linear map),
* label view     ``h^V = TA(h)`` (temporal attention),
* test view      ``h^Q = ME(h)`` (motion attention).

Tokens are scanned spatial-major (all positions of frame t before frame t+1).
At each token the fast weights take ``steps_per_token`` gradient steps on
``|f(k; W) - v|^2`` and the token's output is ``f(q; W)`` with the current W.
Fast weights start from the learnable ``W0`` on every call and are never kept.

For the linear inner model the scan is one fused tape node whose reverse
pass walks the tokens backwards, so the outer loss differentiates through the
unrolled inner loop at the cost of one stored ``W`` per inner step.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import functional as F
from .attention import MotionAttention, TemporalAttention, motion_attention, temporal_attention
from .nn import Module, kaiming, param, zeros
from .tensor import NonFiniteError, Tensor, concat, is_grad_enabled


@dataclass(frozen=True)
class TTTConfig:
    steps_per_token: int = 1
    eta_in: float = 0.01
    inner_model: str = "linear"  # "linear" or "mlp"
    differentiate_inner: bool = True
    w0_scale: float = 0.9
    view_mode: str = "attention"  # "attention" or "linear" (ablation)
    reduction: int = 4

    def __post_init__(self):
        if self.eta_in <= 0:
            raise ValueError("eta_in must be positive")
        if self.steps_per_token < 0:
            raise ValueError("steps_per_token must be non-negative")
        if self.inner_model not in ("linear", "mlp"):
            raise ValueError(f"unknown inner model {self.inner_model!r}")
        if self.view_mode not in ("attention", "linear"):
            raise ValueError(f"unknown view mode {self.view_mode!r}")


# -- inner model primitives (single token, plain arrays) ----------------------

@dataclass
class InnerState:
    W: np.ndarray
    tokens_consumed: int = 0


def inner_loss(tok_k: np.ndarray, tok_v: np.ndarray, W: np.ndarray) -> float:
    r = tok_k @ W - tok_v
    return float(r @ r)


def inner_grad(tok_k: np.ndarray, tok_v: np.ndarray, W: np.ndarray) -> np.ndarray:
    return 2.0 * np.outer(tok_k, tok_k @ W - tok_v)


def inner_step(state: InnerState, tok_k: np.ndarray, tok_v: np.ndarray, eta_in: float) -> InnerState:
    if eta_in <= 0:
        raise ValueError("eta_in must be positive")
    with np.errstate(over="ignore", invalid="ignore"):
        grad = inner_grad(np.asarray(tok_k, float), np.asarray(tok_v, float), state.W)
    if not np.isfinite(grad).all():
        raise NonFiniteError("non-finite inner gradient; eta_in is likely too large")
    W = state.W - eta_in * grad
    if not np.isfinite(W).all():
        raise NonFiniteError("inner loop diverged")
    return InnerState(W, state.tokens_consumed + 1)


def inner_step_autodiff(state: InnerState, tok_k: np.ndarray, tok_v: np.ndarray, eta_in: float) -> InnerState:
    """Same update as :func:`inner_step`, with the gradient taken from the tape."""
    W = Tensor(state.W, requires_grad=True)
    k = Tensor(np.asarray(tok_k, float).reshape(1, -1))
    v = Tensor(np.asarray(tok_v, float).reshape(1, -1))
    r = k @ W - v
    (r * r).sum().backward()
    return InnerState(state.W - eta_in * W.grad, state.tokens_consumed + 1)


def batch_inner_loss(K: np.ndarray, V: np.ndarray, W: np.ndarray) -> float:
    r = K @ W - V
    return float((r * r).sum())


def batch_inner_step(W: np.ndarray, K: np.ndarray, V: np.ndarray, eta_in: float) -> np.ndarray:
    """One full-batch gradient step over a fixed token set (rows of K, V)."""
    return W - eta_in * 2.0 * K.T @ (K @ W - V)


def gram_step_bound(K: np.ndarray) -> float:
    """Largest step 1/lambda_max(K^T K) for which batch descent cannot increase the loss."""
    return 1.0 / float(np.linalg.eigvalsh(K.T @ K)[-1])


# -- fused linear scan --------------------------------------------------------

def ttt_scan(K: Tensor, V: Tensor, Q: Tensor, W0: Tensor, eta: float, steps: int,
             differentiate_inner: bool = True) -> Tensor:
    """Online linear TTT over tokens ``(B, N, d)``; returns outputs ``(B, N, d)``.

    With ``differentiate_inner=False`` the inner increments are treated as
    constants: K and V receive no gradient and W0 gets the identity path only.
    """
    Kd, Vd, Qd = K.data, V.data, Q.data
    b, n, d = Kd.shape
    if Vd.shape != Kd.shape or Qd.shape != Kd.shape or W0.shape != (d, d):
        raise ValueError("view and fast-weight shapes are inconsistent")
    two_eta = 2.0 * eta
    record = is_grad_enabled() and any(x.requires_grad for x in (K, V, Q, W0))
    states = np.empty((n * steps + 1 if record else 1, b, d, d))
    states[0] = W0.data
    out = np.empty((b, n, d))
    W = states[0].copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            k = Kd[:, i, :]
            v = Vd[:, i, :]
            for s in range(steps):
                r = np.matmul(k[:, None, :], W)[:, 0] - v
                W = W - two_eta * k[:, :, None] * r[:, None, :]
                if record:
                    states[i * steps + s + 1] = W
            out[:, i, :] = np.matmul(Qd[:, i, None, :], W)[:, 0]
    if not np.isfinite(W).all() or not np.isfinite(out).all():
        raise NonFiniteError("inner loop diverged (non-finite fast weights)")

    def back(go):
        gK = np.zeros_like(Kd)
        gV = np.zeros_like(Vd)
        gQ = np.empty_like(Qd)
        gW = np.zeros((b, d, d))
        for i in range(n - 1, -1, -1):
            Wi = states[(i + 1) * steps]
            g_o = go[:, i, :]
            gQ[:, i, :] = np.matmul(g_o[:, None, :], Wi.transpose(0, 2, 1))[:, 0]
            gW += Qd[:, i, :, None] * g_o[:, None, :]
            if not differentiate_inner:
                continue
            k = Kd[:, i, :]
            v = Vd[:, i, :]
            for s in range(steps - 1, -1, -1):
                Wp = states[i * steps + s]
                r = np.matmul(k[:, None, :], Wp)[:, 0] - v
                kG = np.matmul(k[:, None, :], gW)[:, 0]
                rGt = np.matmul(r[:, None, :], gW.transpose(0, 2, 1))[:, 0]
                kGWt = np.matmul(kG[:, None, :], Wp.transpose(0, 2, 1))[:, 0]
                gK[:, i, :] -= two_eta * (rGt + kGWt)
                gV[:, i, :] += two_eta * kG
                gW = gW - two_eta * k[:, :, None] * kG[:, None, :]
        return gK, gV, gQ, gW.sum(axis=0)

    return Tensor._make(out, (K, V, Q, W0), back, "ttt_scan")


# -- reference scan built from tape ops ---------------------------------------

def _mlp_apply(x: Tensor, W: tuple[Tensor, Tensor]) -> Tensor:
    return F.relu(x @ W[0]) @ W[1]


def ttt_scan_tape(K: Tensor, V: Tensor, Q: Tensor, W0, eta: float, steps: int,
                  inner_model: str = "linear", differentiate_inner: bool = True) -> Tensor:
    """Token-by-token scan assembled from primitive tape operations.

    Slow; used as the independent route for the fused linear scan and as the
    execution path for the two-layer inner model ``relu(x W1) W2``.
    """
    b, n, d = K.shape
    W = W0 if inner_model == "mlp" else (W0,)
    outs = []
    for i in range(n):
        k = K[:, i:i + 1, :]
        v = V[:, i:i + 1, :]
        for _ in range(steps):
            if inner_model == "linear":
                r = k @ W[0] - v
                grads = (k.transpose(0, 2, 1) @ r * 2.0,)
            else:
                z = k @ W[0]
                mask = (z.data > 0).astype(np.float64)
                a = z * mask
                r = a @ W[1] - v
                gW2 = a.transpose(0, 2, 1) @ r * 2.0
                gz = (r @ W[1].transpose(*_swap(W[1].ndim)) * 2.0) * mask
                gW1 = k.transpose(0, 2, 1) @ gz
                grads = (gW1, gW2)
            if differentiate_inner:
                W = tuple(w - g * eta for w, g in zip(W, grads))
            else:
                W = tuple(w - Tensor(g.data * eta) for w, g in zip(W, grads))
        q = Q[:, i:i + 1, :]
        outs.append(q @ W[0] if inner_model == "linear" else _mlp_apply(q, W))
    return concat(outs, axis=1)


def _swap(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# -- layer --------------------------------------------------------------------

class TTTLayer(Module):
    """View projections plus inner-model initialization for one ST-TTT block."""

    def __init__(self, t: int, d: int, cfg: TTTConfig = TTTConfig(), rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.t, self.d = t, d
        eye = np.eye(d)
        self.theta_k = param(eye + 0.1 * rng.standard_normal((d, d)) / np.sqrt(d))
        if cfg.view_mode == "attention":
            self.ta = TemporalAttention(t, d, cfg.reduction, rng)
            self.me = MotionAttention(d, rng)
        else:
            self.theta_v = kaiming(rng, (d, d), d, gain=0.7)
            self.theta_q = kaiming(rng, (d, d), d, gain=0.7)
        if cfg.inner_model == "linear":
            self.W0 = param(cfg.w0_scale * eye)
        else:
            self.W0 = param(eye.copy())
            self.W0b = param(cfg.w0_scale * eye)

    def inner_init(self):
        return self.W0 if self.cfg.inner_model == "linear" else (self.W0, self.W0b)

    def forward(self, h: Tensor, steps: int | None = None) -> Tensor:
        return forward_sequence(h, self, steps=steps)


def _token_map(h: Tensor, w: Tensor) -> Tensor:
    """Apply a d x d matrix to the channel axis of (B, T, C, H, W)."""
    return (h.transpose(0, 1, 3, 4, 2) @ w).transpose(0, 1, 4, 2, 3)


def make_views(h: Tensor, p: TTTLayer) -> tuple[Tensor, Tensor, Tensor]:
    if h.ndim != 5 or h.shape[2] != p.d:
        raise ValueError(f"expected (B, T, {p.d}, H, W) features, got {h.shape}")
    hk = _token_map(h, p.theta_k)
    if p.cfg.view_mode == "attention":
        hv = temporal_attention(h, p.ta)
        hq = motion_attention(h, p.me)
    else:
        hv = _token_map(h, p.theta_v)
        hq = _token_map(h, p.theta_q)
    return hk, hv, hq


def to_tokens(h: Tensor) -> Tensor:
    """(B, T, C, H, W) -> (B, T*H*W, C), spatial-major."""
    b, t, c, hh, ww = h.shape
    return h.transpose(0, 1, 3, 4, 2).reshape(b, t * hh * ww, c)


def from_tokens(tok: Tensor, shape: tuple) -> Tensor:
    b, t, c, hh, ww = shape
    return tok.reshape(b, t, hh, ww, c).transpose(0, 1, 4, 2, 3)


def forward_sequence(h: Tensor, p: TTTLayer, steps: int | None = None, engine: str = "auto") -> Tensor:
    """Adapt fresh fast weights over the token scan and emit ``f(q; W)`` per token."""
    cfg = p.cfg
    steps = cfg.steps_per_token if steps is None else steps
    hk, hv, hq = make_views(h, p)
    K, V, Q = to_tokens(hk), to_tokens(hv), to_tokens(hq)
    if engine == "auto":
        engine = "fused" if cfg.inner_model == "linear" else "tape"
    if engine == "fused":
        if cfg.inner_model != "linear":
            raise ValueError("the fused scan supports only the linear inner model")
        out = ttt_scan(K, V, Q, p.W0, cfg.eta_in, steps, cfg.differentiate_inner)
    else:
        out = ttt_scan_tape(K, V, Q, p.inner_init(), cfg.eta_in, steps, cfg.inner_model,
                            cfg.differentiate_inner)
    return from_tokens(out, h.shape)


class TTTBlock(Module):
    """Pre-norm residual block: x = h + TTT(LN(h)); out = x + FF(LN(x)).

    Operates on merged features ``(B, H', W', T*C)``; the TTT layer sees them
    unfolded to ``(B, T, C, H', W')``.
    """

    def __init__(self, t: int, c: int, cfg: TTTConfig = TTTConfig(), ff_ratio: float = 1.0,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        width = t * c
        hidden = max(1, int(round(width * ff_ratio)))
        self.t, self.c = t, c
        self.ln1_g = param(np.ones(width))
        self.ln1_b = zeros(width)
        self.ttt = TTTLayer(t, c, cfg, rng)
        self.ln2_g = param(np.ones(width))
        self.ln2_b = zeros(width)
        self.ff_w1 = kaiming(rng, (width, hidden), width)
        self.ff_b1 = zeros(hidden)
        self.ff_w2 = kaiming(rng, (hidden, width), hidden, gain=0.5)
        self.ff_b2 = zeros(width)

    def forward(self, z: Tensor, steps: int | None = None) -> Tensor:
        return ttt_block(z, self, steps)


def feedforward(x: Tensor, blk: TTTBlock) -> Tensor:
    return F.gelu(x @ blk.ff_w1 + blk.ff_b1) @ blk.ff_w2 + blk.ff_b2


def ttt_block(z: Tensor, blk: TTTBlock, steps: int | None = None) -> Tensor:
    b, hh, ww, width = z.shape
    t, c = blk.t, blk.c
    if width != t * c:
        raise ValueError(f"merged width {width} != T*C = {t * c}")
    n1 = F.layer_norm(z, blk.ln1_g, blk.ln1_b)
    h = n1.reshape(b, hh, ww, t, c).transpose(0, 3, 4, 1, 2)
    o = forward_sequence(h, blk.ttt, steps)
    x = z + o.transpose(0, 3, 4, 1, 2).reshape(b, hh, ww, width)
    return x + feedforward(F.layer_norm(x, blk.ln2_g, blk.ln2_b), blk)


def with_steps(cfg: TTTConfig, steps: int) -> TTTConfig:
    return replace(cfg, steps_per_token=steps)

