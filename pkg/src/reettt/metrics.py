"""Verification scores: MSE, SSIM and threshold-based POD / FAR / CSI / ETS per lead time.

Undefined rates (zero denominators) are ``None``. They serialize as JSON null and are
left out of the aggregate means, with the number left out recorded alongside.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import DBZ_MAX

THRESHOLDS = (10.0, 25.0, 35.0)
SCORES = ("pod", "far", "csi", "ets")
SSIM_WINDOW = 8
POOLING = "confusion counts pooled over all samples per lead-time slice"


@dataclass(frozen=True)
class ConfusionCounts:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int

    def __post_init__(self):
        for v in (self.hits, self.misses, self.false_alarms, self.correct_negatives):
            if v < 0:
                raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.hits + self.misses + self.false_alarms + self.correct_negatives

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.hits + other.hits, self.misses + other.misses,
                               self.false_alarms + other.false_alarms,
                               self.correct_negatives + other.correct_negatives)


def confusion(pred, target, tau: float) -> ConfusionCounts:
    """Binarize both fields at >= tau (dBZ) and count the four cells."""
    p = np.asarray(pred)
    y = np.asarray(target)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    pb = p >= tau
    yb = y >= tau
    hits = int(np.count_nonzero(pb & yb))
    misses = int(np.count_nonzero(~pb & yb))
    fa = int(np.count_nonzero(pb & ~yb))
    return ConfusionCounts(hits, misses, fa, p.size - hits - misses - fa)


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def pod(c: ConfusionCounts) -> float | None:
    return _ratio(c.hits, c.hits + c.misses)


def far(c: ConfusionCounts) -> float | None:
    return _ratio(c.false_alarms, c.hits + c.false_alarms)


def csi(c: ConfusionCounts) -> float | None:
    return _ratio(c.hits, c.hits + c.misses + c.false_alarms)


def ets(c: ConfusionCounts) -> float | None:
    if c.total == 0:
        return None
    r = (c.hits + c.false_alarms) * (c.hits + c.misses) / c.total
    return _ratio(c.hits - r, c.hits + c.misses + c.false_alarms - r)


SCORE_FNS = {"pod": pod, "far": far, "csi": csi, "ets": ets}


def mse(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    return float(np.mean((p - y) ** 2))


def _window_sums(x: np.ndarray, win: int) -> np.ndarray:
    """Sums over every win x win window (valid positions) via a summed-area table."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    s[1:, 1:] = x.cumsum(0).cumsum(1)
    return s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]


def ssim(pred, target, data_range: float = DBZ_MAX, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all win x win windows of two 2-D fields (uniform window, sample covariances)."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ValueError("ssim expects two 2-D fields of equal shape")
    if win > min(p.shape):
        raise ValueError(f"window {win} larger than image {p.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    n = win * win
    # centre the fields first so the window moments are not lost to cancellation
    shift = 0.5 * (p.mean() + y.mean())
    p = p - shift
    y = y - shift
    mp = _window_sums(p, win) / n
    my = _window_sums(y, win) / n
    corr = n / (n - 1)
    vp = (_window_sums(p * p, win) / n - mp * mp) * corr
    vy = (_window_sums(y * y, win) / n - my * my) * corr
    cov = (_window_sums(p * y, win) / n - mp * my) * corr
    mp, my = mp + shift, my + shift
    num = (2 * mp * my + c1) * (2 * cov + c2)
    den = (mp * mp + my * my + c1) * (vp + vy + c2)
    return float(np.mean(num / den))


def _mean_defined(values) -> tuple[float | None, int]:
    defined = [v for v in values if v is not None]
    excluded = len(values) - len(defined)
    return (float(np.mean(defined)) if defined else None), excluded


@dataclass
class MetricReport:
    """Per-lead-time scores plus aggregates; JSON with stable key order."""

    mse: list[float]
    ssim: list[float]
    scores: dict[str, dict[str, list[float | None]]]  # tau key -> score -> per lead
    counts: dict[str, list[list[int]]]  # tau key -> per lead [H, M, FA, CN]
    fingerprint: str = ""
    settings: dict = field(default_factory=dict)

    @property
    def lead_times(self) -> int:
        return len(self.mse)

    def aggregates(self) -> dict:
        out = {"mse": float(np.mean(self.mse)), "ssim": float(np.mean(self.ssim)), "thresholds": {}}
        for tk, block in self.scores.items():
            agg = {}
            for name in SCORES:
                value, excluded = _mean_defined(block[name])
                agg[name] = value
                agg[f"{name}_excluded"] = excluded
            out["thresholds"][tk] = agg
        return out

    def mean(self, score: str, tau: float = 25.0) -> float | None:
        return self.aggregates()["thresholds"][tau_key(tau)][score]

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "settings": self.settings,
            "per_lead": {"mse": self.mse, "ssim": self.ssim, "scores": self.scores, "counts": self.counts},
            "aggregate": self.aggregates(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        body = json.loads(text)
        per = body["per_lead"]
        return cls(per["mse"], per["ssim"], per["scores"], per["counts"], body["fingerprint"], body["settings"])

    def __eq__(self, other) -> bool:
        return isinstance(other, MetricReport) and self.to_json() == other.to_json()


def tau_key(tau: float) -> str:
    return f"{float(tau):g}"


def evaluate(preds, targets, thresholds=THRESHOLDS, fingerprint: str = "", settings: dict | None = None) -> MetricReport:
    """Score dBZ forecasts of shape (N, T', H, W) (a singleton channel axis is squeezed)."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length/shape mismatch: {p.shape} vs {y.shape}")
    if p.ndim == 5 and p.shape[2] == 1:
        p, y = p[:, :, 0], y[:, :, 0]
    if p.ndim != 4:
        raise ValueError("expected (N, T', H, W) fields")
    n, t = p.shape[:2]
    mse_l = [mse(p[:, i], y[:, i]) for i in range(t)]
    ssim_l = [float(np.mean([ssim(p[j, i], y[j, i]) for j in range(n)])) for i in range(t)]
    scores, counts = {}, {}
    for tau in thresholds:
        cs = [confusion(p[:, i], y[:, i], tau) for i in range(t)]
        scores[tau_key(tau)] = {name: [SCORE_FNS[name](c) for c in cs] for name in SCORES}
        counts[tau_key(tau)] = [[c.hits, c.misses, c.false_alarms, c.correct_negatives] for c in cs]
    settings = dict(settings or {})
    settings.setdefault("pooling", POOLING)
    settings.setdefault("binarization", ">= tau")
    settings.setdefault("ssim_window", SSIM_WINDOW)
    settings.setdefault("samples", n)
    return MetricReport(mse_l, ssim_l, scores, counts, fingerprint, settings)


def fingerprint_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
