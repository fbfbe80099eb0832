"""Differentiable neural operators built on :mod:`reettt.tensor`.

Convolutions use the cross-correlation convention (no kernel flip) and
accumulate over the nine kernel offsets with one matrix product each, which
keeps peak memory at a single strided patch.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, _lift

__all__ = [
    "relu",
    "gelu",
    "sigmoid",
    "layer_norm",
    "softmax",
    "conv2d",
    "conv_transpose2d",
    "conv_output_size",
    "global_avg_pool_spatial",
    "temporal_difference",
    "dft2",
    "is_power_of_two",
]


def relu(x: Tensor) -> Tensor:
    return _lift(x).relu()


def gelu(x: Tensor) -> Tensor:
    return _lift(x).gelu()


def sigmoid(x: Tensor) -> Tensor:
    return _lift(x).sigmoid()


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the optional affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = _lift(x)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("layer_norm over a zero-length axis")
    data = x.data
    mu = data.mean(axis=-1, keepdims=True)
    xc = data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g = np.ones(n) if gamma is None else gamma.data
    b = np.zeros(n) if beta is None else beta.data
    out = xhat * g + b
    parents = [x]
    if gamma is not None:
        parents.append(gamma)
    if beta is not None:
        parents.append(beta)
    lead = tuple(range(data.ndim - 1))

    def back(grad):
        gxhat = grad * g
        gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        res = [gx]
        if gamma is not None:
            res.append((grad * xhat).sum(axis=lead))
        if beta is not None:
            res.append(grad.sum(axis=lead))
        return tuple(res)

    return Tensor._make(out, tuple(parents), back, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _lift(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), back, "softmax")


# -- convolution --------------------------------------------------------------

def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _check_conv_args(x_shape, k_shape, stride, pad):
    if len(x_shape) != 4 or len(k_shape) != 4:
        raise ValueError("conv expects x of shape (N, C, H, W) and kernel (O, C, kh, kw)")
    if x_shape[1] != k_shape[1]:
        raise ValueError(f"channel mismatch: input {x_shape[1]} vs kernel {k_shape[1]}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    if pad < 0:
        raise ValueError("pad must be non-negative")
    kh, kw = k_shape[2:]
    if x_shape[2] + 2 * pad < kh or x_shape[3] + 2 * pad < kw:
        raise ValueError("kernel larger than padded input")


def _padded_flat(x: np.ndarray, pad: int) -> tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> zero-padded channels-last rows (N * Hp * Wp, C)."""
    n, c, h, w = x.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.zeros((n, hp, wp, c))
    xp[:, pad:pad + h, pad:pad + w, :] = x.transpose(0, 2, 3, 1)
    return xp.reshape(n * hp * wp, c), hp, wp


def _offsets(kh: int, kw: int, wp: int):
    for i in range(kh):
        for j in range(kw):
            yield i, j, i * wp + j


# In the flattened padded layout, kernel offset (i, j) is a plain row shift of
# i * Wp + j, so each offset costs one GEMM on contiguous views.  Rows that
# straddle image boundaries only ever land on discarded positions.

def _conv_forward(x: np.ndarray, k: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    X, hp, wp = _padded_flat(x, pad)
    rows = X.shape[0]
    out = np.zeros((rows, o))
    kt = np.ascontiguousarray(k.transpose(2, 3, 1, 0))  # BLAS needs contiguous operands
    for i, j, sh in _offsets(kh, kw, wp):
        out[:rows - sh] += X[sh:] @ kt[i, j]
    out = out.reshape(n, hp, wp, o)[:, :stride * (ho - 1) + 1:stride, :stride * (wo - 1) + 1:stride, :]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _embed_grad(g: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    n, o, ho, wo = g.shape
    G = np.zeros((n, hp, wp, o))
    G[:, :stride * (ho - 1) + 1:stride, :stride * (wo - 1) + 1:stride, :] = g.transpose(0, 2, 3, 1)
    return G.reshape(n * hp * wp, o)


def _conv_input_grad(g: np.ndarray, k: np.ndarray, stride: int, pad: int, in_hw) -> np.ndarray:
    """Adjoint of ``_conv_forward`` with respect to its input."""
    n = g.shape[0]
    _, c, kh, kw = k.shape
    h, w = in_hw
    hp, wp = h + 2 * pad, w + 2 * pad
    G = _embed_grad(g, stride, hp, wp)
    rows = G.shape[0]
    gX = np.zeros((rows, c))
    kk = np.ascontiguousarray(k.transpose(2, 3, 0, 1))
    for i, j, sh in _offsets(kh, kw, wp):
        gX[sh:] += G[:rows - sh] @ kk[i, j]
    gx = gX.reshape(n, hp, wp, c)[:, pad:pad + h, pad:pad + w, :]
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, stride: int, pad: int, kshape) -> np.ndarray:
    kh, kw = kshape[2:]
    X, hp, wp = _padded_flat(x, pad)
    G = _embed_grad(g, stride, hp, wp)
    rows = X.shape[0]
    gk = np.zeros(kshape)
    for i, j, sh in _offsets(kh, kw, wp):
        gk[:, :, i, j] = G[:rows - sh].T @ X[sh:]
    return gk


def conv2d(x: Tensor, k: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 1) -> Tensor:
    """2-D cross-correlation of ``x`` (N, C, H, W) with ``k`` (O, C, kh, kw)."""
    x, k = _lift(x), _lift(k)
    _check_conv_args(x.shape, k.shape, stride, pad)
    xd, kd = x.data, k.data
    out = _conv_forward(xd, kd, stride, pad)

    def back(g):
        return (_conv_input_grad(g, kd, stride, pad, xd.shape[2:]),
                _conv_kernel_grad(xd, g, stride, pad, kd.shape))

    y = Tensor._make(out, (x, k), back, "conv2d")
    if bias is not None:
        y = y + bias.reshape(1, -1, 1, 1)
    return y


def conv_transpose2d(y: Tensor, k: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 1,
                     output_size: tuple[int, int] | None = None, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`: maps (N, O, h, w) back to (N, C, H, W) with the same kernel.

    ``output_size`` resolves the stride-2 ambiguity; without it the extent is
    ``(h - 1) * stride - 2 * pad + kh + output_padding``.
    """
    y, k = _lift(y), _lift(k)
    if y.ndim != 4 or k.ndim != 4:
        raise ValueError("conv_transpose2d expects (N, O, h, w) input and (O, C, kh, kw) kernel")
    if y.shape[1] != k.shape[0]:
        raise ValueError(f"channel mismatch: input {y.shape[1]} vs kernel {k.shape[0]}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    kh, kw = k.shape[2:]
    if output_size is None:
        output_size = ((y.shape[2] - 1) * stride - 2 * pad + kh + output_padding,
                       (y.shape[3] - 1) * stride - 2 * pad + kw + output_padding)
    h, w = output_size
    if conv_output_size(h, kh, stride, pad) != y.shape[2] or conv_output_size(w, kw, stride, pad) != y.shape[3]:
        raise ValueError(f"output size {output_size} is inconsistent with input {y.shape[2:]}")
    yd, kd = y.data, k.data
    out = _conv_input_grad(yd, kd, stride, pad, (h, w))

    def back(g):
        return (_conv_forward(g, kd, stride, pad), _conv_kernel_grad(g, yd, stride, pad, kd.shape))

    res = Tensor._make(out, (y, k), back, "conv_transpose2d")
    if bias is not None:
        res = res + bias.reshape(1, -1, 1, 1)
    return res


def global_avg_pool_spatial(x: Tensor) -> Tensor:
    """(B, T, C, H, W) -> (B, T, C): exact mean over the two spatial axes."""
    x = _lift(x)
    if x.ndim != 5:
        raise ValueError("expected a (B, T, C, H, W) tensor")
    return x.mean(axis=(3, 4))


def temporal_difference(h: Tensor) -> Tensor:
    """d_t = h_t - h_{t-1} along axis 1, with d_0 = 0."""
    h = _lift(h)
    data = h.data
    out = np.zeros_like(data)
    out[:, 1:] = data[:, 1:] - data[:, :-1]

    def back(g):
        gh = np.zeros_like(g)
        gh[:, 1:] += g[:, 1:]
        gh[:, :-1] -= g[:, 1:]
        return (gh,)

    return Tensor._make(out, (h,), back, "temporal_difference")


# -- discrete Fourier transform ----------------------------------------------

def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def _dft_matrix(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(idx, idx) / n)


def _spectrum(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    if is_power_of_two(h) and is_power_of_two(w):
        return np.fft.fft2(x, axes=(-2, -1))
    return _dft_matrix(h) @ x @ _dft_matrix(w)


def _spectrum_adjoint(g: np.ndarray) -> np.ndarray:
    """Conjugate-transpose of the 2-D DFT applied to a complex array."""
    h, w = g.shape[-2:]
    if is_power_of_two(h) and is_power_of_two(w):
        return np.fft.ifft2(g, axes=(-2, -1)) * (h * w)
    return _dft_matrix(h).conj().T @ g @ _dft_matrix(w).conj().T


def dft2(x: Tensor) -> tuple[Tensor, Tensor]:
    """2-D DFT over the last two axes, returned as (real, imaginary) planes.

    F(u, v) = sum_{h,w} x(h, w) exp(-2 pi i (u h / H + v w / W)).  Power-of-two
    extents take the FFT path; others use explicit DFT matrices.
    """
    x = _lift(x)
    if x.ndim < 2 or min(x.shape[-2:]) < 1:
        raise ValueError("dft2 expects at least a 2-D input with non-empty extents")
    spec = _spectrum(x.data)
    re = Tensor._make(np.ascontiguousarray(spec.real), (x,),
                      lambda g: (_spectrum_adjoint(g.astype(np.complex128)).real,), "dft2.re")
    im = Tensor._make(np.ascontiguousarray(spec.imag), (x,),
                      lambda g: (_spectrum_adjoint(1j * g).real,), "dft2.im")
    return re, im
