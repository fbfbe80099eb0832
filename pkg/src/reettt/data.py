"""Synthetic radar-like reflectivity sequences, sample filtering, windows and RSEQ I/O."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DBZ_MAX = 70.0

MAGIC = b"RSEQ"
VERSION = 1
# magic, version u16, T, H, W, domain_id u32, seed u64 (little-endian)
_HEADER = struct.Struct("<4sHIIIIQ")
_MAX_ELEMENTS = 1 << 31


class FormatError(ValueError):
    """A file does not follow its binary layout."""


@dataclass(frozen=True)
class DomainConfig:
    """Ranges from which per-blob dynamics are drawn.

    Velocities are (dx, dy) in pixels per frame, dx along columns.
    """

    blob_count: tuple[int, int] = (2, 4)
    velocity_x: tuple[float, float] = (-1.0, 1.0)
    velocity_y: tuple[float, float] = (-1.0, 1.0)
    growth: tuple[float, float] = (-0.5, 0.5)
    scale: tuple[float, float] = (3.0, 6.0)
    peak: tuple[float, float] = (35.0, 50.0)
    noise_sigma: float = 1.0

    def __post_init__(self):
        for name in ("blob_count", "velocity_x", "velocity_y", "growth", "scale", "peak"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: {lo} > {hi}")
        if self.blob_count[0] < 0:
            raise ValueError("blob_count must be non-negative")
        if self.scale[0] <= 0:
            raise ValueError("blob scale must be positive")
        if self.peak[1] > DBZ_MAX:
            raise ValueError(f"peak intensity must not exceed {DBZ_MAX} dBZ")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


REGIMES = {
    # slow advection, mild growth: training regime
    "regime-A": DomainConfig(),
    # fast advection, strong growth, higher peaks: shift target
    "regime-B": DomainConfig(
        blob_count=(2, 5),
        velocity_x=(-2.5, 2.5),
        velocity_y=(-2.5, 2.5),
        growth=(-1.0, 2.0),
        scale=(2.0, 5.0),
        peak=(45.0, 65.0),
        noise_sigma=2.0,
    ),
}
DOMAIN_IDS = {"regime-A": 0, "regime-B": 1}


@dataclass
class RadarSequence:
    frames: np.ndarray  # (T, H, W) dBZ
    domain_id: int = 0
    seed: int = 0
    frame_interval_minutes: float = 6.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or min(self.frames.shape) < 1:
            raise ValueError("frames must be a non-empty (T, H, W) array")

    @property
    def shape(self) -> tuple:
        return self.frames.shape


def generate_sequence(cfg: DomainConfig, seed: int, t_total: int, h: int, w: int,
                      domain_id: int = 0) -> RadarSequence:
    """Sum of advected, growing anisotropic Gaussian blobs clamped to [0, 70] dBZ."""
    if t_total < 1 or h < 1 or w < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    n_blobs = int(rng.integers(cfg.blob_count[0], cfg.blob_count[1] + 1))
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    frames = np.zeros((t_total, h, w))
    for _ in range(n_blobs):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        vx, vy = rng.uniform(*cfg.velocity_x), rng.uniform(*cfg.velocity_y)
        grow = rng.uniform(*cfg.growth)
        peak = rng.uniform(*cfg.peak)
        sx, sy = rng.uniform(*cfg.scale), rng.uniform(*cfg.scale)
        theta = rng.uniform(0, np.pi)
        cos, sin = np.cos(theta), np.sin(theta)
        for t in range(t_total):
            dx = xx - (cx + vx * t)
            dy = yy - (cy + vy * t)
            u = cos * dx + sin * dy
            v = -sin * dx + cos * dy
            amp = max(peak + grow * t, 0.0)
            frames[t] += amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))
    if cfg.noise_sigma > 0:
        frames += rng.normal(0.0, cfg.noise_sigma, frames.shape)
    np.clip(frames, 0.0, DBZ_MAX, out=frames)
    # quantize to the float32 storage precision so files round-trip exactly
    frames = frames.astype(np.float32).astype(np.float64)
    return RadarSequence(frames, domain_id=domain_id, seed=seed)


def passes_filter(seq: RadarSequence, tau: float = 25.0, coverage: float = 0.05, min_frames: int = 2) -> bool:
    """True iff at least ``min_frames`` frames have >= ``coverage`` of pixels at >= ``tau`` dBZ."""
    frames = seq.frames
    n_pix = frames.shape[1] * frames.shape[2]
    counts = (frames >= tau).reshape(frames.shape[0], -1).sum(axis=1)
    covered = counts / n_pix >= coverage
    return int(covered.sum()) >= min_frames


def generate_filtered(cfg: DomainConfig, seed: int, t_total: int, h: int, w: int, domain_id: int = 0,
                      max_tries: int = 1000) -> tuple[RadarSequence, int]:
    """Draw sequences from derived seeds until one passes the filter; returns (sequence, retries)."""
    for attempt in range(max_tries):
        sub = seed if attempt == 0 else int(np.random.SeedSequence([seed, attempt]).generate_state(1, np.uint64)[0])
        seq = generate_sequence(cfg, sub, t_total, h, w, domain_id)
        if passes_filter(seq):
            return seq, attempt
    raise RuntimeError(f"no sequence passed the filter after {max_tries} attempts (seed {seed})")


# -- normalization ------------------------------------------------------------

def normalize(x) -> np.ndarray:
    """dBZ in [0, 70] -> [0, 1]."""
    arr = np.asarray(x.frames if isinstance(x, RadarSequence) else x, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > DBZ_MAX):
        raise ValueError("reflectivity outside [0, 70] dBZ")
    return arr / DBZ_MAX


def denormalize(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("normalized value outside [0, 1]")
    return arr * DBZ_MAX


# -- windows and manifests ----------------------------------------------------

def window_starts(length: int, window: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if window < 2 or window % 2:
        raise ValueError("window must be an even length >= 2")
    if length < window:
        raise ValueError(f"sequence of length {length} is shorter than window {window}")
    return list(range(0, length - window + 1, stride))


def split_window(frames: np.ndarray, start: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    half = window // 2
    return frames[start:start + half], frames[start + half:start + window]


@dataclass
class ManifestEntry:
    path: str
    samples: int
    domain_id: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    window: int = 16
    stride: int = 2
    root: str = "."

    def files(self, split: str | None = None, domain_id: int | None = None) -> list[ManifestEntry]:
        return [e for e in self.entries
                if (split is None or e.split == split) and (domain_id is None or e.domain_id == domain_id)]

    def to_json(self) -> str:
        body = {"window": self.window, "stride": self.stride,
                "entries": [asdict(e) for e in self.entries]}
        return json.dumps(body, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            body = json.loads(path.read_text())
            entries = [ManifestEntry(**e) for e in body["entries"]]
            window, stride = int(body["window"]), int(body["stride"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest {path}: {exc}") from None
        return cls(entries, window, stride, str(path.parent))

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else Path(self.root) / p


def sliding_windows(manifest: DatasetManifest, split: str | None = None, domain_id: int | None = None):
    """All full-length (input, target) window pairs, never crossing a file boundary."""
    out = []
    for entry in manifest.files(split, domain_id):
        seq = load(manifest.resolve(entry))
        for s in window_starts(seq.frames.shape[0], manifest.window, manifest.stride):
            out.append(split_window(seq.frames, s, manifest.window))
    return out


def sequence_windows(seq: RadarSequence, window: int, stride: int):
    return [split_window(seq.frames, s, window) for s in window_starts(seq.frames.shape[0], window, stride)]


# -- RSEQ file format ---------------------------------------------------------

def to_bytes(seq: RadarSequence) -> bytes:
    t, h, w = seq.frames.shape
    header = _HEADER.pack(MAGIC, VERSION, t, h, w, seq.domain_id, seq.seed)
    return header + seq.frames.astype("<f4").tobytes()


def from_bytes(buf: bytes) -> RadarSequence:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated RSEQ header")
    magic, version, t, h, w, domain_id, seed = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported RSEQ version {version}")
    n = t * h * w
    if n == 0 or n > _MAX_ELEMENTS:
        raise FormatError(f"dimension overflow: {t}x{h}x{w}")
    need = _HEADER.size + 4 * n
    if len(buf) < need:
        raise FormatError(f"truncated RSEQ payload: need {need} bytes, have {len(buf)}")
    if len(buf) > need:
        raise FormatError("trailing bytes after RSEQ payload")
    frames = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size).reshape(t, h, w)
    return RadarSequence(frames.astype(np.float64), domain_id=domain_id, seed=seed)


def save(seq: RadarSequence, path) -> None:
    Path(path).write_bytes(to_bytes(seq))


def load(path) -> RadarSequence:
    return from_bytes(Path(path).read_bytes())
