"""Hierarchical spatial encoder: one embedding per video frame.

Frames are patchified, linearly embedded and offset by fixed 2-D sinusoidal
position codes.  A stack of stages follows; every stage after the first opens
with a block that mean-pools its queries 2x2 (halving each grid extent) and
widens the channels.  Early stages attend inside non-overlapping mask units,
late stages attend globally.  The final tokens are mean-pooled and projected
to the embedding width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .errors import ConfigError, InputError
from .numerics import FeedForward, LayerNorm, Linear, Module, Tensor


@dataclass(frozen=True)
class StageSpec:
    width: int
    depth: int
    pool: int  # 1 (no pooling) or 2
    attention: str  # "local" | "global"
    mask_unit: int  # tokens per side of one local window (output grid); grid side if global
    grid: int  # token grid side after this stage's pooling


@dataclass(frozen=True)
class SpatialConfig:
    image_size: int = 32
    patch_size: int = 4
    num_stages: int = 3
    base_width: int = 16
    depth: int = 1
    embed_dim: int = 64
    mlp_ratio: float = 2.0
    head_dim: int = 8
    num_global_stages: int = 1

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    def stages(self) -> list[StageSpec]:
        self.validate()
        out = []
        for s in range(self.num_stages):
            grid = self.grid >> s
            is_global = s >= self.num_stages - self.num_global_stages or grid <= 2
            unit = grid if is_global else grid // 2
            out.append(
                StageSpec(
                    width=self.base_width * 2**s,
                    depth=self.depth,
                    pool=1 if s == 0 else 2,
                    attention="global" if is_global else "local",
                    mask_unit=unit,
                    grid=grid,
                )
            )
        return out

    def validate(self) -> None:
        if not 1 <= self.num_stages <= 4:
            raise ConfigError("spatial stage count must be in 1..4")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image size {self.image_size} not divisible by patch size {self.patch_size}")
        if self.grid % (1 << (self.num_stages - 1)):
            raise ConfigError(f"token grid {self.grid} cannot be halved {self.num_stages - 1} times")
        if self.base_width % 4 or self.base_width % self.head_dim:
            raise ConfigError("base width must be a multiple of 4 and of the head width")
        if self.depth < 1 or self.num_global_stages < 1:
            raise ConfigError("stage depth and global stage count must be >= 1")

    def single_scale(self) -> "SpatialConfig":
        """Single global stage with the same total block count."""
        return replace(self, num_stages=1, depth=self.depth * self.num_stages, num_global_stages=1)


def sinusoidal_positions_2d(grid_h: int, grid_w: int, channels: int) -> np.ndarray:
    """Fixed [h, w, c] position codes: half the channels encode rows, half columns."""
    if channels % 4:
        raise ConfigError("positional channels must be divisible by 4")
    quarter = channels // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter) / quarter))
    rows = np.arange(grid_h)[:, None] * freqs[None, :]
    cols = np.arange(grid_w)[:, None] * freqs[None, :]
    pe = np.zeros((grid_h, grid_w, channels))
    pe[:, :, 0:quarter] = np.sin(rows)[:, None, :]
    pe[:, :, quarter : 2 * quarter] = np.cos(rows)[:, None, :]
    pe[:, :, 2 * quarter : 3 * quarter] = np.sin(cols)[None, :, :]
    pe[:, :, 3 * quarter :] = np.cos(cols)[None, :, :]
    return pe


def partition(x: Tensor, unit: int) -> Tensor:
    """[N, h, w, C] -> [N * (h/u) * (w/u), u*u, C] non-overlapping windows."""
    n, h, w, c = x.shape
    if h % unit or w % unit:
        raise ConfigError(f"mask unit {unit} does not divide the {h}x{w} token grid")
    x = nx.reshape(x, (n, h // unit, unit, w // unit, unit, c))
    x = nx.transpose(x, (0, 1, 3, 2, 4, 5))
    return nx.reshape(x, (n * (h // unit) * (w // unit), unit * unit, c))


def unpartition(x: Tensor, n: int, h: int, w: int, unit: int) -> Tensor:
    c = x.shape[-1]
    x = nx.reshape(x, (n, h // unit, w // unit, unit, unit, c))
    x = nx.transpose(x, (0, 1, 3, 2, 4, 5))
    return nx.reshape(x, (n, h, w, c))


def pool2x2(x: Tensor) -> Tensor:
    n, h, w, c = x.shape
    x = nx.reshape(x, (n, h // 2, 2, w // 2, 2, c))
    return nx.mean(x, axis=(2, 4))


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, num_heads: int) -> Tensor:
    """Scaled dot-product attention on [B, t, C] inputs, split into heads."""
    b, tq, c = q.shape
    tk = k.shape[1]
    dh = c // num_heads
    qh = nx.transpose(nx.reshape(q, (b, tq, num_heads, dh)), (0, 2, 1, 3))
    kh = nx.transpose(nx.reshape(k, (b, tk, num_heads, dh)), (0, 2, 3, 1))
    vh = nx.transpose(nx.reshape(v, (b, tk, num_heads, dh)), (0, 2, 1, 3))
    w = nx.softmax(nx.mul(nx.matmul(qh, kh), 1.0 / math.sqrt(dh)), axis=-1)
    out = nx.matmul(w, vh)
    return nx.reshape(nx.transpose(out, (0, 2, 1, 3)), (b, tq, c))


class SpatialBlock(Module):
    """Pre-norm transformer block on a token grid, optionally query-pooling."""

    def __init__(self, c_in: int, c_out: int, pool: int, attention: str, mask_unit: int,
                 head_dim: int, mlp_ratio: float, rng: np.random.Generator):
        self.pool = pool
        self.attention = attention
        self.mask_unit = mask_unit
        self.num_heads = max(1, c_out // head_dim)
        self.norm1 = LayerNorm(c_in)
        self.qkv = Linear(c_in, 3 * c_out, rng)
        self.proj = Linear(c_out, c_out, rng)
        self.shortcut = Linear(c_in, c_out, rng) if (pool > 1 or c_in != c_out) else None
        self.norm2 = LayerNorm(c_out)
        self.mlp = FeedForward(c_out, int(c_out * mlp_ratio), rng)

    def forward(self, x: Tensor) -> Tensor:
        n, h, w, _ = x.shape
        xn = self.norm1(x)
        qkv = self.qkv(xn)
        c = qkv.shape[-1] // 3
        q, k, v = qkv[..., :c], qkv[..., c : 2 * c], qkv[..., 2 * c :]
        ho, wo = h // self.pool, w // self.pool
        if self.pool > 1:
            q = pool2x2(q)
        unit = ho if self.attention == "global" else self.mask_unit
        if self.attention == "global" and ho != wo:
            raise ConfigError("global attention expects a square grid")
        qw = partition(q, unit)
        kw = partition(k, unit * self.pool)
        vw = partition(v, unit * self.pool)
        att = unpartition(multihead_attention(qw, kw, vw, self.num_heads), n, ho, wo, unit)
        if self.shortcut is not None:
            res = self.shortcut(xn)
            res = pool2x2(res) if self.pool > 1 else res
        else:
            res = x
        x = nx.add(res, self.proj(att))
        return nx.add(x, self.mlp(self.norm2(x)))


class SpatialStage(Module):
    """Blocks sharing one resolution; the first block pools when ``spec.pool > 1``."""

    def __init__(self, spec: StageSpec, c_in: int, head_dim: int, mlp_ratio: float, rng: np.random.Generator):
        self.spec = spec
        self.blocks = []
        for i in range(spec.depth):
            pool = spec.pool if i == 0 else 1
            self.blocks.append(
                SpatialBlock(c_in, spec.width, pool, spec.attention, spec.mask_unit, head_dim, mlp_ratio, rng)
            )
            c_in = spec.width

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


class SpatialEncoder(Module):
    def __init__(self, cfg: SpatialConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        specs = cfg.stages()
        p = cfg.patch_size
        self.patch_embed = Linear(p * p * 3, specs[0].width, rng)
        self.pos = sinusoidal_positions_2d(cfg.grid, cfg.grid, specs[0].width)
        self.stages = []
        c_prev = specs[0].width
        for spec in specs:
            self.stages.append(SpatialStage(spec, c_prev, cfg.head_dim, cfg.mlp_ratio, rng))
            c_prev = spec.width
        self.norm = LayerNorm(c_prev)
        self.out = Linear(c_prev, cfg.embed_dim, rng)

    def patchify_embed(self, frames) -> Tensor:
        """[N, H, W, 3] pixels in [0, 1] -> [N, H/p, W/p, C0] tokens."""
        frames = nx.as_tensor(frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise InputError(f"expected frames [N, H, W, 3], got {frames.shape}")
        n, hgt, wid, _ = frames.shape
        p = self.cfg.patch_size
        if hgt % p or wid % p:
            raise ConfigError(f"frame {hgt}x{wid} not divisible by patch size {p}")
        if hgt != self.cfg.image_size or wid != self.cfg.image_size:
            raise InputError(f"encoder built for {self.cfg.image_size}px frames, got {hgt}x{wid}")
        x = nx.reshape(frames, (n, hgt // p, p, wid // p, p, 3))
        x = nx.transpose(x, (0, 1, 3, 2, 4, 5))
        x = nx.reshape(x, (n, hgt // p, wid // p, p * p * 3))
        return nx.add(self.patch_embed(x), self.pos)

    def forward(self, frames) -> Tensor:
        """[N, H, W, 3] -> [N, embed_dim]."""
        x = self.patchify_embed(frames)
        for stage in self.stages:
            x = stage(x)
        x = nx.mean(x, axis=(1, 2))
        return self.out(self.norm(x))

    def encode_clip(self, clip) -> Tensor:
        """[B, F, H, W, 3] -> [B, F, embed_dim]; frames are encoded independently."""
        clip = nx.as_tensor(clip)
        if clip.ndim != 5:
            raise InputError(f"expected clips [B, F, H, W, 3], got {clip.shape}")
        b, f = clip.shape[:2]
        z = self(nx.reshape(clip, (b * f,) + clip.shape[2:]))
        return nx.reshape(z, (b, f, z.shape[-1]))
