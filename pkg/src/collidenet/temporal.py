"""Temporal encoder-decoder and the full two-stream TTC model.

Forward pass::

    frames -> spatial encoder -> z            [B, n, d]
    z -> decompose -> (T0, S0)                 input-level trend / seasonality
    z -> normalize -> z', (mu, sigma) -> projector -> (tau, delta)
    z' -> encoder (MSSC + FF, keep seasonal part) -> z_enc
    (S0, T0, z_enc) -> decoder (MSSC, predictive MSSC, FF; trends accumulate) -> z_dec
    z_dec -> denormalize -> readout (time-mean, plus last step) -> regression head -> TTC seconds

The four ablation switches (multi-scale, trend, seasonality, non-stationarity)
remove their component as documented on :class:`Toggles`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .decomposition import decompose
from .errors import ConfigError, InputError
from .numerics import FeedForward, Linear, Module, Tensor
from .segment_attention import MSSCAttention, SegmentAttentionConfig
from .spatial import SpatialConfig, SpatialEncoder
from .stationarity import Projector, Rescalers, SeriesStats, denormalize, normalize, normalize_with


@dataclass(frozen=True)
class Toggles:
    """Ablation switches.

    ms: multi-scale spatial stages and temporal scales (off: one of each).
    trend: the trend stream (off: input trend and layer trends are dropped).
    seasonal: seasonal isolation (off: every decomposition is the identity on
        the main stream).
    ns: normalization, rescalers and de-normalization (off: none of them,
        tau=1 and delta=0).
    """

    ms: bool = True
    trend: bool = True
    seasonal: bool = True
    ns: bool = True

    def as_tuple(self) -> tuple[bool, bool, bool, bool]:
        return (self.ms, self.trend, self.seasonal, self.ns)


@dataclass(frozen=True)
class TemporalConfig:
    seq_len: int = 30
    encoder_layers: int = 2
    decoder_layers: int = 1
    num_heads: int = 4
    base_segment_len: int = 1
    num_scales: int = 3
    ff_dim: int = 128
    window: int = 7
    input_window: int | None = None
    encoder_window: int | None = None
    decoder_window: int | None = None
    predictive: bool = True
    learned_fusion: bool = False
    projector_hidden: int = 64

    def window_at(self, site: str) -> int:
        override = getattr(self, f"{site}_window")
        return self.window if override is None else override

    def attention(self, d_model: int) -> SegmentAttentionConfig:
        if d_model % self.num_heads:
            raise ConfigError(f"embedding width {d_model} not divisible by {self.num_heads} heads")
        return SegmentAttentionConfig(self.base_segment_len, self.num_scales, self.num_heads, d_model // self.num_heads)

    def validate(self) -> None:
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("encoder and decoder need at least one layer")
        for site in ("input", "encoder", "decoder"):
            k = self.window_at(site)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{site} window must be a positive odd integer, got {k}")
            if k > 2 * self.seq_len - 1:
                raise ConfigError(f"{site} window {k} too large for sequence length {self.seq_len}")


@dataclass(frozen=True)
class ModelConfig:
    spatial: SpatialConfig = field(default_factory=SpatialConfig)
    temporal: TemporalConfig = field(default_factory=TemporalConfig)
    toggles: Toggles = field(default_factory=Toggles)
    head_hidden: int = 64
    head_dropout: float = 0.1
    ttc_prior: float = 2.0
    # "mean": time-mean of the output sequence.  "mean_last": that mean
    # concatenated with the final step; the seasonal stream has (near) zero
    # time-mean, so a mean alone hides it from the head.
    readout: str = "mean_last"

    def effective(self) -> "ModelConfig":
        """Resolve the multi-scale switch into concrete stage / scale counts."""
        if self.toggles.ms:
            return self
        return replace(
            self,
            spatial=self.spatial.single_scale(),
            temporal=replace(self.temporal, num_scales=1),
        )

    def validate(self) -> None:
        if self.readout not in READOUTS:
            raise ConfigError(f"unknown readout {self.readout!r}; choose from {READOUTS}")
        eff = self.effective()
        eff.spatial.validate()
        eff.temporal.validate()
        att = eff.temporal.attention(eff.spatial.embed_dim)
        att.validate(eff.temporal.seq_len, predictive=eff.temporal.predictive)


class EncoderLayer(Module):
    def __init__(self, d: int, cfg: TemporalConfig, att: SegmentAttentionConfig, rng: np.random.Generator):
        self.attn = MSSCAttention(d, att, rng, learned_fusion=cfg.learned_fusion)
        self.ff = FeedForward(d, cfg.ff_dim, rng, activation="relu")

    def forward(self, x: Tensor, rescalers: Rescalers, window: int, seasonal: bool) -> Tensor:
        x = nx.add(x, self.attn(x, x, rescalers))
        x = nx.add(x, self.ff(x))
        if seasonal:
            x = decompose(x, window).seasonality
        return x


class DecoderLayer(Module):
    def __init__(self, d: int, cfg: TemporalConfig, att: SegmentAttentionConfig, rng: np.random.Generator,
                 trend: bool = True):
        self.self_attn = MSSCAttention(d, att, rng, learned_fusion=cfg.learned_fusion)
        self.cross_attn = MSSCAttention(d, att, rng, predictive=cfg.predictive, learned_fusion=cfg.learned_fusion)
        self.ff = FeedForward(d, cfg.ff_dim, rng, activation="relu")
        self.trend_proj = Linear(d, d, rng, bias=False, zero=True) if trend else None

    @staticmethod
    def _split(x: Tensor, window: int, seasonal: bool, trend: bool):
        if seasonal:
            parts = decompose(x, window)
            return parts.seasonality, (parts.trend if trend else None)
        if trend:
            return x, nx.moving_average(x, window)
        return x, None

    def forward(self, x, z_enc, rescalers, window: int, seasonal: bool, trend: bool):
        """Return the new seasonal stream and this layer's projected trend (or None)."""
        x = nx.add(x, self.self_attn(x, x, rescalers))
        x, t1 = self._split(x, window, seasonal, trend)
        x = nx.add(x, self.cross_attn(x, z_enc, rescalers))
        x, t2 = self._split(x, window, seasonal, trend)
        x = nx.add(x, self.ff(x))
        x, t3 = self._split(x, window, seasonal, trend)
        if not trend or self.trend_proj is None:
            return x, None
        return x, self.trend_proj(nx.add(nx.add(t1, t2), t3))


READOUTS = ("mean", "mean_last")


def readout(z: Tensor, mode: str) -> Tensor:
    """Summarize a [B, n, d] sequence into the head's input vector."""
    pooled = nx.mean(z, axis=1)
    if mode == "mean":
        return pooled
    return nx.concat([pooled, z[:, -1]], axis=-1)


def readout_width(d: int, mode: str) -> int:
    return d if mode == "mean" else 2 * d


class RegressionHead(Module):
    def __init__(self, d: int, hidden: int, dropout: float, prior: float, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)
        self.fc2.bias.data[:] = prior
        self.dropout = dropout
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        h = nx.relu(self.fc1(x))
        h = nx.dropout(h, self.dropout, self.rng, self.training)
        out = self.fc2(h)
        return nx.reshape(out, out.shape[:-1])


@dataclass
class TemporalState:
    """Intermediate tensors of one forward pass, for inspection and tests."""

    z: Tensor
    trend0: Tensor | None
    seasonal0: Tensor | None
    z_prime: Tensor
    stats: SeriesStats | None
    rescalers: Rescalers
    z_enc: Tensor
    z_dec: Tensor
    z_out: Tensor


class CollideNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.config = cfg
        eff = cfg.effective()
        self.eff = eff
        rng = np.random.default_rng(seed)
        d = eff.spatial.embed_dim
        tc = eff.temporal
        att = tc.attention(d)
        self.spatial = SpatialEncoder(eff.spatial, rng)
        longest = att.segment_lengths[-1]
        self.projector = (
            Projector(d, math.ceil(tc.seq_len / longest), longest, rng, hidden=tc.projector_hidden)
            if cfg.toggles.ns
            else None
        )
        self.encoder = [EncoderLayer(d, tc, att, rng) for _ in range(tc.encoder_layers)]
        self.decoder = [DecoderLayer(d, tc, att, rng, trend=cfg.toggles.trend) for _ in range(tc.decoder_layers)]
        self.head = RegressionHead(readout_width(d, cfg.readout), cfg.head_hidden, cfg.head_dropout, cfg.ttc_prior,
                                   np.random.default_rng(seed + 1))

    @property
    def toggles(self) -> Toggles:
        return self.config.toggles

    def encoder_forward(self, z_prime: Tensor, rescalers: Rescalers) -> Tensor:
        k = self.eff.temporal.window_at("encoder")
        x = z_prime
        for layer in self.encoder:
            x = layer(x, rescalers, k, self.toggles.seasonal)
        return x

    def decoder_forward(self, z_enc: Tensor, trend0, seasonal0, rescalers: Rescalers) -> Tensor:
        """``seasonal0`` seeds the main stream, ``trend0`` (or None) the trend accumulator."""
        k = self.eff.temporal.window_at("decoder")
        tg = self.toggles
        x = seasonal0
        acc = trend0 if tg.trend else None
        for layer in self.decoder:
            x, t = layer(x, z_enc, rescalers, k, tg.seasonal, tg.trend)
            if t is not None:
                acc = t if acc is None else nx.add(acc, t)
        return x if acc is None else nx.add(x, acc)

    def embed(self, x) -> Tensor:
        x = nx.as_tensor(x)
        if x.ndim == 5:
            z = self.spatial.encode_clip(x)
        elif x.ndim == 3:
            z = x
        else:
            raise InputError(f"expected clips [B, F, H, W, 3] or embeddings [B, n, d], got {x.shape}")
        n_expected = self.eff.temporal.seq_len
        if z.shape[1] != n_expected or z.shape[2] != self.eff.spatial.embed_dim:
            raise InputError(f"sequence {z.shape[1:]} does not match configured ({n_expected}, d)")
        return z

    def temporal_forward(self, z: Tensor) -> TemporalState:
        tg = self.toggles
        trend0 = seasonal0 = None
        if tg.trend or tg.seasonal:
            parts = decompose(z, self.eff.temporal.window_at("input"))
            trend0, seasonal0 = parts.trend, parts.seasonality
        if tg.ns:
            z_prime, stats = normalize(z)
            rescalers = self.projector(stats, z)
            if trend0 is not None:
                trend0 = normalize_with(trend0, stats, center=True)
                seasonal0 = normalize_with(seasonal0, stats, center=False)
        else:
            z_prime, stats, rescalers = z, None, Rescalers.identity()
        z_enc = self.encoder_forward(z_prime, rescalers)
        dec_in = seasonal0 if tg.seasonal else z_prime
        z_dec = self.decoder_forward(z_enc, trend0, dec_in, rescalers)
        z_out = denormalize(z_dec, stats) if tg.ns else z_dec
        return TemporalState(z, trend0, seasonal0, z_prime, stats, rescalers, z_enc, z_dec, z_out)

    def forward(self, x) -> Tensor:
        """Clips [B, F, H, W, 3] (or embeddings [B, n, d]) -> TTC seconds [B]."""
        state = self.temporal_forward(self.embed(x))
        return self.head(readout(state.z_out, self.config.readout))


def predict(model: CollideNet, x, batch_size: int = 16) -> np.ndarray:
    """Inference-mode predictions, batched, without recording a tape."""
    was_training = model.training
    model.eval()
    out = []
    try:
        with nx.no_grad():
            for i in range(0, len(x), batch_size):
                out.append(model(np.asarray(x[i : i + batch_size])).data.copy())
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)
