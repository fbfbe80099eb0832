"""Intensity-weighted MAE, focal frequency loss with amplitude constraint, and their composite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DBZ_MAX
from .functional import _spectrum, dft2
from .tensor import Tensor, _lift

MASKS = ("both", "radial", "magnitude", "all")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    lam: float = 0.1
    mae_a: float = 16.0
    w_max: float = 30.0
    mask: str = "both"
    radial_cutoff: float = 0.125  # fraction of Nyquist

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.w_max < 1:
            raise ValueError("w_max must be >= 1")
        if self.mae_a <= 0:
            raise ValueError("MAE weight divisor must be positive")
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask {self.mask!r}; expected one of {MASKS}")
        if not 0 <= self.radial_cutoff <= np.sqrt(2):
            raise ValueError("radial cutoff must lie in [0, sqrt(2)]")


def mae_weight(y_dbz, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """min(10^(y / a), w_max) for reflectivity y in dBZ."""
    y = np.asarray(y_dbz, dtype=np.float64)
    if y.size and (y.min() < 0.0 or y.max() > DBZ_MAX):
        raise ValueError("reflectivity outside [0, 70] dBZ")
    return np.minimum(10.0 ** (y / cfg.mae_a), cfg.w_max)


def _check_pair(pred: Tensor, target: np.ndarray, min_ndim: int):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    if pred.ndim < min_ndim:
        raise ValueError(f"expected at least {min_ndim} dimensions, got {pred.ndim}")


def _target_array(y) -> np.ndarray:
    return np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)


def weighted_mae(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """Normalized (B, T', ...) fields: per-lead pixel mean, summed over leads, mean over batch.

    Weights come from the denormalized target.
    """
    pred = _lift(pred)
    y = _target_array(target)
    _check_pair(pred, y, 3)
    b, t = y.shape[:2]
    w = mae_weight(y * DBZ_MAX, cfg).reshape(b, t, -1)
    err = (pred.reshape(b, t, -1) - y.reshape(b, t, -1)).abs() * w
    return err.mean(axis=2).sum(axis=1).mean()


def frequency_mask(target: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Boolean high-frequency mask per frame over the last two axes."""
    y = np.asarray(target, dtype=np.float64)
    h, w = y.shape[-2:]
    if cfg.mask == "all":
        return np.ones(y.shape, dtype=bool)
    fu = np.fft.fftfreq(h)[:, None] / 0.5
    fv = np.fft.fftfreq(w)[None, :] / 0.5
    radial = np.broadcast_to(np.sqrt(fu ** 2 + fv ** 2) > cfg.radial_cutoff, y.shape)
    if cfg.mask == "radial":
        return radial.copy()
    mag = np.abs(_spectrum(y))
    med = np.median(mag.reshape(*mag.shape[:-2], -1), axis=-1)[..., None, None]
    strong = mag > med
    if cfg.mask == "magnitude":
        return strong
    return radial | strong


def focal_weight(pred, target, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Non-differentiated coefficient |dF|^alpha * |F(y)| / max|F(y)|, times the mask.

    A frame whose target spectrum is identically zero gets coefficient 0.
    """
    p = _target_array(pred)
    y = _target_array(target)
    fy = _spectrum(y)
    diff = np.abs(_spectrum(p) - fy)
    amp = np.abs(fy)
    peak = amp.max(axis=(-2, -1), keepdims=True)
    ratio = np.divide(amp, peak, out=np.zeros_like(amp), where=peak > 0)
    return diff ** cfg.alpha * ratio * frequency_mask(y, cfg)


def hffl_frames(pred, target, cfg: LossConfig = LossConfig(), focal: np.ndarray | None = None) -> Tensor:
    """Per-frame focal frequency loss over the last two axes; returns the leading shape.

    ``focal`` overrides the coefficient (used to check gradients with it held fixed).
    """
    pred = _lift(pred)
    y = _target_array(target)
    _check_pair(pred, y, 2)
    h, w = y.shape[-2:]
    coef = focal_weight(pred.data, y, cfg) if focal is None else np.asarray(focal, dtype=np.float64)
    re, im = dft2(pred - y)
    sq = re * re + im * im
    return (sq * (coef / (h * w))).sum(axis=(-2, -1))


def hffl(pred, target, cfg: LossConfig = LossConfig(), focal: np.ndarray | None = None) -> Tensor:
    """Single (H, W) frame."""
    pred = _lift(pred)
    if pred.ndim != 2:
        raise ValueError("hffl expects a single (H, W) frame; use hffl_frames for stacks")
    return hffl_frames(pred, target, cfg, focal)


def frequency_term(pred, target, cfg: LossConfig = LossConfig(), focal: np.ndarray | None = None) -> Tensor:
    """Per-frame losses summed over every non-batch axis, mean over batch."""
    per = hffl_frames(pred, target, cfg, focal)
    b = per.shape[0]
    return per.reshape(b, -1).sum(axis=1).mean()


def composite_loss(pred, target, cfg: LossConfig = LossConfig(), focal: np.ndarray | None = None) -> Tensor:
    mae = weighted_mae(pred, target, cfg)
    if cfg.lam == 0:
        return mae
    return mae + frequency_term(pred, target, cfg, focal) * cfg.lam
