"""Registry of differentiable operations for the finite-difference suite.

Each builder takes a Generator and returns (scalar fn, inputs).  Outputs are
contracted with a fixed random tensor so every output element contributes.
Inputs to kinked ops are kept away from their kinks.
"""
import numpy as np

from reettt import functional as F
from reettt.attention import MotionAttention, TemporalAttention, motion_attention, temporal_attention
from reettt.losses import LossConfig, composite_loss, focal_weight, hffl_frames, weighted_mae
from reettt.tensor import Tensor, concat, stack, where
from reettt.ttt import ttt_scan, ttt_scan_tape


def leaf(rng, *shape, lo=None):
    x = rng.standard_normal(shape)
    if lo is not None:
        # keep magnitudes above lo so kinks at zero are never straddled
        x = np.sign(x) * (lo + np.abs(x))
    return Tensor(x, requires_grad=True)


def contract(out, rng):
    r = np.random.default_rng(int(rng.integers(1 << 31))).standard_normal(out.shape)
    return (out * r).sum()


def unary(method, lo=None, positive=False):
    def build(rng):
        x = leaf(rng, 3, 4, lo=lo)
        if positive:
            x.data = np.abs(x.data) + 0.5
        r = rng.standard_normal(x.shape)
        return (lambda a: (getattr(a, method)() * r).sum()), [x]
    return build


def binary(op):
    def build(rng):
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        if op == "div":
            b.data = np.abs(b.data) + 0.5
        r = rng.standard_normal((3, 4))
        fns = {"add": lambda x, y: x + y, "sub": lambda x, y: x - y,
               "mul": lambda x, y: x * y, "div": lambda x, y: x / y}
        return (lambda x, y: (fns[op](x, y) * r).sum()), [a, b]
    return build


def _pow(rng):
    x = leaf(rng, 3, 4)
    x.data = np.abs(x.data) + 0.5
    r = rng.standard_normal(x.shape)
    return (lambda a: ((a ** 2.5) * r).sum()), [x]


def _matmul(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    r = rng.standard_normal((2, 3, 5))
    return (lambda x, y: ((x @ y) * r).sum()), [a, b]


def _getitem(rng):
    x = leaf(rng, 4, 5)
    idx = (np.array([0, 2, 2, 3]), np.array([1, 1, 4, 0]))
    r = rng.standard_normal(4)
    return (lambda a: (a[idx] * r).sum()), [x]


def _reductions(rng):
    x = leaf(rng, 2, 3, 4)
    r1, r2 = rng.standard_normal((2, 4)), rng.standard_normal(3)
    return (lambda a: (a.sum(axis=1) * r1).sum() + (a.mean(axis=(0, 2)) * r2).sum()), [x]


def _shape_ops(rng):
    x = leaf(rng, 2, 3, 4)
    r = rng.standard_normal((4, 6))
    return (lambda a: (a.transpose(2, 0, 1).reshape(4, 6) * r).sum()), [x]


def _concat_stack(rng):
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)
    r1, r2 = rng.standard_normal((4, 3)), rng.standard_normal((2, 2, 3))
    return (lambda x, y: (concat([x, y], 0) * r1).sum() + (stack([x, y], 1) * r2).sum()), [a, b]


def _where(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 3, 4)
    cond = rng.random((3, 4)) > 0.5
    r = rng.standard_normal((3, 4))
    return (lambda x, y: (where(cond, x, y) * r).sum()), [a, b]


def _clip(rng):
    x = leaf(rng, 3, 4)
    x.data = rng.choice([-1.0, 1.0], (3, 4)) * rng.uniform(0.2, 0.8, (3, 4)) + rng.choice([0.0, 1.5], (3, 4))
    r = rng.standard_normal(x.shape)
    return (lambda a: (a.clip(-0.5, 1.0) * r).sum()), [x]


def _layer_norm(rng):
    x, g, b = leaf(rng, 3, 6), leaf(rng, 6), leaf(rng, 6)
    r = rng.standard_normal((3, 6))
    return (lambda a, gg, bb: (F.layer_norm(a, gg, bb) * r).sum()), [x, g, b]


def _softmax(rng):
    x = leaf(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    return (lambda a: (F.softmax(a, axis=0) * r).sum()), [x]


def conv(stride, pad, bias=True):
    def build(rng):
        x, k = leaf(rng, 2, 3, 6, 5), leaf(rng, 4, 3, 3, 3)
        inputs = [x, k] + ([leaf(rng, 4)] if bias else [])
        r = rng.standard_normal((2, 4, (6 + 2 * pad - 3) // stride + 1, (5 + 2 * pad - 3) // stride + 1))
        return (lambda *a: (F.conv2d(a[0], a[1], a[2] if bias else None, stride, pad) * r).sum()), inputs
    return build


def conv_t(stride, pad):
    def build(rng):
        h, w = 6, 5
        ho, wo = (h + 2 * pad - 3) // stride + 1, (w + 2 * pad - 3) // stride + 1
        y, k, b = leaf(rng, 2, 4, ho, wo), leaf(rng, 4, 3, 3, 3), leaf(rng, 3)
        r = rng.standard_normal((2, 3, h, w))
        return (lambda a, kk, bb: (F.conv_transpose2d(a, kk, bb, stride, pad, output_size=(h, w)) * r).sum()), [y, k, b]
    return build


def _pool_diff(rng):
    x = leaf(rng, 2, 3, 2, 3, 4)
    r1, r2 = rng.standard_normal((2, 3, 2)), rng.standard_normal(x.shape)
    return (lambda a: (F.global_avg_pool_spatial(a) * r1).sum() + (F.temporal_difference(a) * r2).sum()), [x]


def _dft2(rng):
    x = leaf(rng, 2, 4, 6)  # non-power-of-two width exercises the matrix path
    r1, r2 = rng.standard_normal((2, 4, 6)), rng.standard_normal((2, 4, 6))

    def fn(a):
        re, im = F.dft2(a)
        return (re * r1).sum() + (im * r2).sum()
    return fn, [x]


def _dft2_fft(rng):
    x = leaf(rng, 4, 8)
    r1, r2 = rng.standard_normal((4, 8)), rng.standard_normal((4, 8))

    def fn(a):
        re, im = F.dft2(a)
        return (re * r1).sum() + (im * r2).sum()
    return fn, [x]


def _temporal_attention(rng):
    p = TemporalAttention(3, 4, reduction=2, rng=rng)
    h = leaf(rng, 2, 3, 4, 3, 3)
    ws = [p.reduce_w, p.reduce_b, p.expand_w, p.expand_b]
    # bias the hidden pre-activations away from the relu kink
    p.reduce_b.data = rng.choice([-1.0, 1.0], p.reduce_b.shape) * 2.0

    def fn(x, *params):
        p.reduce_w, p.reduce_b, p.expand_w, p.expand_b = params
        return contract_fixed(temporal_attention(x, p))
    r = rng.standard_normal(h.shape)

    def contract_fixed(out):
        return (out * r).sum()
    return fn, [h] + ws


def _motion_attention(rng):
    p = MotionAttention(3, rng=rng)
    h = leaf(rng, 2, 3, 3, 4, 4)
    r = rng.standard_normal(h.shape)

    def fn(x, k, b):
        p.kernel, p.bias = k, b
        return (motion_attention(x, p) * r).sum()
    return fn, [h, p.kernel, p.bias]


def scan(steps, differentiate=True):
    def build(rng):
        b, n, d = 2, 5, 3
        K, V, Q = (leaf(rng, b, n, d) for _ in range(3))
        for t in (K, V, Q):
            t.data *= 0.5
        W0 = Tensor(0.9 * np.eye(d) + 0.1 * rng.standard_normal((d, d)), requires_grad=True)
        r = rng.standard_normal((b, n, d))
        return (lambda k, v, q, w: (ttt_scan(k, v, q, w, 0.05, steps, differentiate) * r).sum()), [K, V, Q, W0]
    return build


def _scan_mlp(rng):
    b, n, d = 1, 4, 3
    K, V, Q = (leaf(rng, b, n, d) for _ in range(3))
    W1 = Tensor(np.eye(d) + 0.1 * rng.standard_normal((d, d)), requires_grad=True)
    W2 = Tensor(0.9 * np.eye(d) + 0.1 * rng.standard_normal((d, d)), requires_grad=True)
    r = rng.standard_normal((b, n, d))
    return (lambda k, v, q, w1, w2: (ttt_scan_tape(k, v, q, (w1, w2), 0.05, 1, "mlp") * r).sum()), [K, V, Q, W1, W2]


def _fields(rng, shape=(2, 3, 1, 8, 8)):
    y = rng.uniform(0.0, 1.0, shape)
    sign = rng.choice([-1.0, 1.0], shape)
    p = np.clip(y + sign * rng.uniform(0.02, 0.2, shape), 0.0, 1.0)
    p = np.where(np.abs(p - y) < 0.01, y + 0.05, p)
    return Tensor(p, requires_grad=True), y


def _weighted_mae(rng):
    p, y = _fields(rng)
    return (lambda a: weighted_mae(a, y)), [p]


def _hffl(rng):
    p, y = _fields(rng)
    cfg = LossConfig(alpha=1.0)
    coef = focal_weight(p.data, y, cfg)
    return (lambda a: hffl_frames(a, y, cfg, focal=coef).sum()), [p]


def _composite(rng):
    p, y = _fields(rng)
    cfg = LossConfig(lam=1.0)
    coef = focal_weight(p.data, y, cfg)
    return (lambda a: composite_loss(a, y, cfg, focal=coef)), [p]


OPS = {
    "add": binary("add"), "sub": binary("sub"), "mul": binary("mul"), "div": binary("div"),
    "neg": unary("__neg__"), "pow": _pow, "matmul": _matmul, "getitem": _getitem,
    "sum_mean": _reductions, "reshape_transpose": _shape_ops, "concat_stack": _concat_stack,
    "where": _where, "exp": unary("exp"), "log": unary("log", positive=True),
    "sqrt": unary("sqrt", positive=True), "abs": unary("abs", lo=0.1), "tanh": unary("tanh"),
    "relu": unary("relu", lo=0.1), "sigmoid": unary("sigmoid"), "gelu": unary("gelu"), "clip": _clip,
    "layer_norm": _layer_norm, "softmax": _softmax,
    "conv2d_s1": conv(1, 1), "conv2d_s2": conv(2, 1), "conv2d_p0": conv(1, 0, bias=False),
    "conv_t_s1": conv_t(1, 1), "conv_t_s2": conv_t(2, 1),
    "pool_and_difference": _pool_diff, "dft2_matrix": _dft2, "dft2_fft": _dft2_fft,
    "temporal_attention": _temporal_attention, "motion_attention": _motion_attention,
    "ttt_scan_0": scan(0), "ttt_scan_1": scan(1), "ttt_scan_2": scan(2), "ttt_scan_mlp": _scan_mlp,
    "weighted_mae": _weighted_mae, "hffl": _hffl, "composite_loss": _composite,
}
