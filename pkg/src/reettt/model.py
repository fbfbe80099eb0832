"""Encoder / TTT translator / decoder network with skip branch, SR branch and fused output."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import functional as F
from .attention import SkipBranch
from .nn import Module, kaiming, param, zeros
from .tensor import Tensor, concat
from .ttt import TTTBlock, TTTConfig

STREAMS = ("decoder", "skip", "sr")


@dataclass(frozen=True)
class ModelConfig:
    t: int = 8
    h: int = 32
    w: int = 32
    enc_channels: tuple[int, ...] = (8, 16, 16)
    n_blocks: int = 2
    ff_ratio: float = 1.0
    rrdb_count: int = 2
    rrdb_layers: int = 3
    rrdb_growth: int = 8
    rrdb_beta: float = 0.2
    fusion_init: float = 0.0
    ttt: TTTConfig = field(default_factory=TTTConfig)
    no_skip: bool = False
    no_rrdb: bool = False

    def __post_init__(self):
        scale = 2 ** self.n_down
        if self.h % scale or self.w % scale:
            raise ValueError(f"H and W must be divisible by {scale} for {self.n_down} downsampling stages")
        if len(self.enc_channels) < 1:
            raise ValueError("at least one encoder stage is required")
        if self.t < 1:
            raise ValueError("T must be positive")

    @property
    def n_down(self) -> int:
        return len(self.enc_channels) - 1

    @property
    def latent_hw(self) -> tuple[int, int]:
        s = 2 ** self.n_down
        return self.h // s, self.w // s

    def canonical(self) -> str:
        """Stable text form used for the checkpoint fingerprint."""
        rows = []
        for key, val in sorted(self.__dict__.items()):
            if key == "ttt":
                for tk, tv in sorted(val.__dict__.items()):
                    rows.append(f"ttt.{tk}={tv!r}")
            else:
                rows.append(f"{key}={val!r}")
        return "\n".join(rows) + "\n"


class Encoder(Module):
    """Per-frame 3x3 convolutions: a stride-1 stem then stride-2 stages."""

    def __init__(self, channels: tuple[int, ...], rng):
        self.weights = []
        self.biases = []
        c_in = 1
        for c in channels:
            self.weights.append(kaiming(rng, (c, c_in, 3, 3), 9 * c_in))
            self.biases.append(zeros(c))
            c_in = c

    def forward(self, frames: Tensor) -> tuple[Tensor, Tensor]:
        """(N, 1, H, W) -> (low-level stem features, latent features)."""
        x = F.gelu(F.conv2d(frames, self.weights[0], self.biases[0], stride=1, pad=1))
        low = x
        for w, b in zip(self.weights[1:], self.biases[1:]):
            x = F.gelu(F.conv2d(x, w, b, stride=2, pad=1))
        return low, x


class Decoder(Module):
    """Transposed convolutions mirroring the encoder's stride-2 stages."""

    def __init__(self, channels: tuple[int, ...], rng):
        self.weights = []
        self.biases = []
        for c_out, c_in in zip(channels[:-1][::-1], channels[1:][::-1]):
            # conv_transpose2d kernel is (in, out, 3, 3)
            self.weights.append(kaiming(rng, (c_in, c_out, 3, 3), 9 * c_in))
            self.biases.append(zeros(c_out))

    def forward(self, z: Tensor) -> Tensor:
        x = z
        for w, b in zip(self.weights, self.biases):
            h, ww = x.shape[2] * 2, x.shape[3] * 2
            x = F.gelu(F.conv_transpose2d(x, w, b, stride=2, pad=1, output_size=(h, ww)))
        return x


class ResidualDenseBlock(Module):
    def __init__(self, c: int, growth: int, layers: int, beta: float, rng):
        self.beta = beta
        self.weights = []
        self.biases = []
        for i in range(layers):
            c_in = c + i * growth
            self.weights.append(kaiming(rng, (growth, c_in, 3, 3), 9 * c_in))
            self.biases.append(zeros(growth))
        c_cat = c + layers * growth
        self.fuse_w = kaiming(rng, (c, c_cat, 1, 1), c_cat, gain=0.5)
        self.fuse_b = zeros(c)

    def forward(self, x: Tensor) -> Tensor:
        feats = [x]
        for w, b in zip(self.weights, self.biases):
            inp = feats[0] if len(feats) == 1 else _cat(feats)
            feats.append(F.gelu(F.conv2d(inp, w, b, stride=1, pad=1)))
        out = F.conv2d(_cat(feats), self.fuse_w, self.fuse_b, stride=1, pad=0)
        return x + out * self.beta


class RRDB(Module):
    """Residual-in-residual wrapper around one dense block, both residuals scaled by beta."""

    def __init__(self, c: int, growth: int, layers: int, beta: float, rng):
        self.beta = beta
        self.dense = ResidualDenseBlock(c, growth, layers, beta, rng)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.dense(x) * self.beta


class SRBranch(Module):
    """RRDB stack mapping upsampled features to a high-frequency residual stream."""

    def __init__(self, c: int, cfg: ModelConfig, rng):
        self.blocks = [RRDB(c, cfg.rrdb_growth, cfg.rrdb_layers, cfg.rrdb_beta, rng) for _ in range(cfg.rrdb_count)]
        self.out_w = kaiming(rng, (c, c, 3, 3), 9 * c, gain=0.1)
        self.out_b = zeros(c)

    def forward(self, x: Tensor) -> Tensor:
        y = x
        for blk in self.blocks:
            y = blk(y)
        return F.conv2d(y, self.out_w, self.out_b, stride=1, pad=1)


def _cat(feats):
    return concat(feats, axis=1)


class Translator(Module):
    def __init__(self, cfg: ModelConfig, rng):
        c = cfg.enc_channels[-1]
        self.blocks = [TTTBlock(cfg.t, c, cfg.ttt, cfg.ff_ratio, rng) for _ in range(cfg.n_blocks)]

    def forward(self, h: Tensor, steps: int | None = None) -> Tensor:
        return translate(h, self, steps)


def translate(h: Tensor, tr: Translator, steps: int | None = None) -> Tensor:
    """Fold T into channels, run the residual TTT blocks, unfold. Shape-preserving."""
    b, t, c, hh, ww = h.shape
    if not tr.blocks:
        return h
    z = h.transpose(0, 3, 4, 1, 2).reshape(b, hh, ww, t * c)
    for blk in tr.blocks:
        z = blk(z, steps)
    return z.reshape(b, hh, ww, t, c).transpose(0, 3, 4, 1, 2)


class REETTT(Module):
    """Full predictor mapping (B, T, 1, H, W) normalized inputs to (B, T, 1, H, W) forecasts."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c0 = cfg.enc_channels[0]
        self.encoder = Encoder(cfg.enc_channels, rng)
        self.translator = Translator(cfg, rng)
        self.decoder = Decoder(cfg.enc_channels, rng)
        self.sr = SRBranch(c0, cfg, rng)
        self.skip = SkipBranch(cfg.t, c0, cfg.ttt.reduction, rng)
        self.fusion = param(np.full((len(STREAMS), c0), cfg.fusion_init))
        self.head_w = kaiming(rng, (1, c0, 3, 3), 9 * c0, gain=0.5)
        self.head_b = param(np.full(1, 0.05))

    # -- stages ---------------------------------------------------------------

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, t, c, h, w = x.shape
        if c != 1 or (h, w) != (self.cfg.h, self.cfg.w):
            raise ValueError(f"expected (B, T, 1, {self.cfg.h}, {self.cfg.w}) input, got {x.shape}")
        low, lat = self.encoder(x.reshape(b * t, 1, h, w))
        low = low.reshape(b, t, *low.shape[1:])
        lat = lat.reshape(b, t, *lat.shape[1:])
        return low, lat

    def active_streams(self) -> tuple[str, ...]:
        return tuple(s for s in STREAMS
                     if not (s == "skip" and self.cfg.no_skip) and not (s == "sr" and self.cfg.no_rrdb))

    def fusion_weights(self) -> Tensor:
        """Softmax over the active streams, per channel: (n_active, C0)."""
        idx = [STREAMS.index(s) for s in self.active_streams()]
        logits = self.fusion if len(idx) == len(STREAMS) else self.fusion[idx]
        return F.softmax(logits, axis=0)

    def decode(self, z: Tensor, skip: Tensor | None) -> Tensor:
        b, t = z.shape[:2]
        dec = self.decoder(z.reshape(b * t, *z.shape[2:]))
        streams = {"decoder": dec}
        if "skip" in self.active_streams():
            if skip is None:
                raise ValueError("skip stream required")
            if skip.shape[2:] != dec.shape[1:]:
                raise ValueError(f"skip stream {skip.shape} does not match decoder stream {dec.shape}")
            streams["skip"] = skip.reshape(b * t, *skip.shape[2:])
        if "sr" in self.active_streams():
            streams["sr"] = self.sr(dec)
        weights = self.fusion_weights()
        fused = None
        for i, name in enumerate(self.active_streams()):
            term = streams[name] * weights[i].reshape(1, -1, 1, 1)
            fused = term if fused is None else fused + term
        out = F.conv2d(fused, self.head_w, self.head_b, stride=1, pad=1).clip(0.0, 1.0)
        return out.reshape(b, t, 1, *out.shape[2:])

    def forward(self, x: Tensor, mode: str = "ttt_on") -> Tensor:
        if mode not in ("ttt_on", "ttt_off"):
            raise ValueError(f"unknown mode {mode!r}")
        x = x if isinstance(x, Tensor) else Tensor(x)
        steps = None if mode == "ttt_on" else 0
        low, lat = self.encode(x)
        z = self.translator(lat, steps)
        skip = self.skip(low) if "skip" in self.active_streams() else None
        return self.decode(z, skip)

    # -- parameter partition ----------------------------------------------------

    def partition(self) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        """(backbone, adaptation-side) parameter maps; disjoint and exhaustive."""
        backbone, adapt = {}, {}
        for name, p in self.named_parameters():
            (adapt if is_adaptation_param(name) else backbone)[name] = p
        return backbone, adapt


def is_adaptation_param(name: str) -> bool:
    if name.startswith("skip.") or name == "fusion":
        return True
    return name.startswith("translator.") and name.rsplit(".", 1)[-1] in ("W0", "W0b")


def freeze_backbone(model: REETTT) -> dict[str, Tensor]:
    """Mark backbone tensors non-trainable and return the trainable adaptation subset."""
    backbone, adapt = model.partition()
    for p in backbone.values():
        p.requires_grad = False
        p.grad = None
    for p in adapt.values():
        p.requires_grad = True
    return adapt


def select_params(model: REETTT, names) -> dict[str, Tensor]:
    params = model.parameters()
    unknown = [n for n in names if n not in params]
    if unknown:
        raise KeyError(f"unknown parameter names: {unknown}")
    return {n: params[n] for n in names}


def ablated(cfg: ModelConfig, *, linear_proj: bool = False, no_skip: bool = False, no_rrdb: bool = False) -> ModelConfig:
    ttt = replace(cfg.ttt, view_mode="linear") if linear_proj else cfg.ttt
    return replace(cfg, ttt=ttt, no_skip=cfg.no_skip or no_skip, no_rrdb=cfg.no_rrdb or no_rrdb)
