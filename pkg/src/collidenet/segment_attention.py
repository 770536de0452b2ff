"""Segment-wise correlation attention and its multi-scale / predictive forms.

A length-``n`` sequence is cut into ``n / L`` contiguous segments of ``L``
steps.  Query segment ``i`` and key segment ``j`` are compared by the sum of
their time-aligned dot products, scaled by ``1 / (L * sqrt(d))``; the softmax
over ``j`` weights whole value segments.  Score and aggregation cost are both
``(n/L)^2 * L * d`` multiply-adds.

The multi-scale form averages segment attention over lengths
``L, 2L, 4L, ...``.  The predictive form lets query segment ``i - 1`` choose
among keys ``j`` and aggregates the values one segment ahead, ``V_{j+1}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .numerics import Linear, Module, Tensor
from .stationarity import Rescalers

MASK_VALUE = -1e30


@dataclass(frozen=True)
class SegmentAttentionConfig:
    base_segment_len: int = 1
    num_scales: int = 3
    num_heads: int = 4
    head_dim: int = 32

    @property
    def segment_lengths(self) -> tuple[int, ...]:
        return tuple(self.base_segment_len * 2**s for s in range(self.num_scales))

    @property
    def d_model(self) -> int:
        return self.num_heads * self.head_dim

    def validate(self, n: int, predictive: bool = False) -> None:
        if self.base_segment_len < 1 or self.num_scales < 1:
            raise ConfigError("segment length and scale count must be >= 1")
        if self.segment_lengths[-1] > n:
            raise ConfigError(
                f"largest segment length {self.segment_lengths[-1]} exceeds sequence length {n}"
            )
        if predictive:
            for seg in self.segment_lengths:
                if math.ceil(n / seg) < 2:
                    raise ConfigError(f"predictive attention needs >= 2 segments at length {seg}")


def _pad_time(x: Tensor, n_pad: int) -> Tensor:
    n = x.shape[-2]
    if n_pad == n:
        return x
    idx = np.minimum(np.arange(n_pad), n - 1)
    return nx.take(x, idx, axis=-2)


def _attend(q, k, v, seg_len, rescalers, nq_valid, nk_valid, predictive):
    """Segment attention on inputs already padded to multiples of ``seg_len``."""
    nq, nk, d = q.shape[-2], k.shape[-2], q.shape[-1]
    mq, mk = nq // seg_len, nk // seg_len
    lead_q, lead_k = q.shape[:-2], k.shape[:-2]
    qs = nx.reshape(q, lead_q + (mq, seg_len * d))
    ks = nx.reshape(k, lead_k + (mk, seg_len * d))
    vs = nx.reshape(v, v.shape[:-2] + (mk, seg_len * v.shape[-1]))
    mk_valid = math.ceil(nk_valid / seg_len)
    if predictive:
        if mk_valid < 2 or math.ceil(nq_valid / seg_len) < 2:
            raise ConfigError(f"predictive attention needs >= 2 segments at length {seg_len}")
        qs = nx.take(qs, np.maximum(np.arange(mq) - 1, 0), axis=-2)
        vs = nx.take(vs, np.minimum(np.arange(mk) + 1, mk_valid - 1), axis=-2)
    scores = nx.mul(nx.matmul(qs, nx.swapaxes(ks, -1, -2)), 1.0 / (seg_len * math.sqrt(d)))
    if rescalers is not None and not rescalers.is_identity:
        scores = rescalers.apply(scores, seg_len, mk)
    if mk_valid < mk:
        mask = np.where(np.arange(mk) < mk_valid, 0.0, MASK_VALUE)
        scores = nx.add(scores, mask)
    weights = nx.softmax(scores, axis=-1)
    y = nx.matmul(weights, vs)
    y = nx.reshape(y, y.shape[:-2] + (nq, v.shape[-1]))
    return y, weights


def segment_correlation(
    q,
    k,
    v,
    seg_len: int,
    rescalers: Rescalers | None = None,
    pad: bool = False,
    predictive: bool = False,
    return_weights: bool = False,
):
    """Single-scale segment attention on ``[..., n, d]`` inputs."""
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    if seg_len < 1:
        raise ConfigError("segment length must be >= 1")
    nq, nk = q.shape[-2], k.shape[-2]
    if (nq % seg_len or nk % seg_len) and not pad:
        raise ConfigError(f"sequence length not divisible by segment length {seg_len}")
    nq_pad = math.ceil(nq / seg_len) * seg_len
    nk_pad = math.ceil(nk / seg_len) * seg_len
    y, w = _attend(
        _pad_time(q, nq_pad), _pad_time(k, nk_pad), _pad_time(v, nk_pad), seg_len, rescalers, nq, nk, predictive
    )
    if nq_pad != nq:
        y = y[..., :nq, :]
    return (y, w) if return_weights else y


def mssc(
    q,
    k,
    v,
    segment_lengths,
    rescalers: Rescalers | None = None,
    predictive: bool = False,
    scale_weights: Tensor | None = None,
    return_weights: bool = False,
):
    """Average of segment attention over several segment lengths.

    Inputs are padded once, by replicating the final step, to a multiple of
    the largest segment length; fully padded key segments are masked.
    ``scale_weights`` (convex, one per scale) replaces the plain mean.
    """
    if isinstance(segment_lengths, SegmentAttentionConfig):
        segment_lengths = segment_lengths.segment_lengths
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    nq, nk = q.shape[-2], k.shape[-2]
    longest = max(segment_lengths)
    if longest > min(nq, nk):
        raise ConfigError(f"segment length {longest} exceeds sequence length {min(nq, nk)}")
    nq_pad = math.ceil(nq / longest) * longest
    nk_pad = math.ceil(nk / longest) * longest
    qp, kp, vp = _pad_time(q, nq_pad), _pad_time(k, nk_pad), _pad_time(v, nk_pad)
    outs, weights = [], []
    for s, seg in enumerate(segment_lengths):
        y, w = _attend(qp, kp, vp, seg, rescalers, nq, nk, predictive)
        if scale_weights is not None:
            y = nx.mul(y, scale_weights[s])
        outs.append(y)
        weights.append(w)
    y = outs[0]
    for other in outs[1:]:
        y = nx.add(y, other)
    if scale_weights is None and len(outs) > 1:
        y = nx.mul(y, 1.0 / len(outs))
    if nq_pad != nq:
        y = y[..., :nq, :]
    return (y, weights) if return_weights else y


def pre_mssc(q_dec, k_enc, v_enc, segment_lengths, rescalers: Rescalers | None = None, **kw):
    """Predictive multi-scale cross attention: ``Y_i = sum_j w(Q_{i-1}, K_j) V_{j+1}``."""
    return mssc(q_dec, k_enc, v_enc, segment_lengths, rescalers, predictive=True, **kw)


class MSSCAttention(Module):
    """Multi-head projection wrapper around :func:`mssc` / :func:`pre_mssc`."""

    def __init__(
        self,
        d_model: int,
        cfg: SegmentAttentionConfig,
        rng: np.random.Generator,
        predictive: bool = False,
        learned_fusion: bool = False,
    ):
        if d_model % cfg.num_heads:
            raise ConfigError("model width must be divisible by the head count")
        self.cfg = cfg
        self.predictive = predictive
        self.num_heads = cfg.num_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)
        self.fusion_logits = nx.parameter(np.zeros(cfg.num_scales)) if learned_fusion else None

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape[:-2], x.shape[-2], x.shape[-1]
        h = self.num_heads
        x = nx.reshape(x, b + (n, h, d // h))
        nd = x.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        return nx.transpose(x, axes)

    def _merge(self, x: Tensor) -> Tensor:
        nd = x.ndim
        axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
        x = nx.transpose(x, axes)
        return nx.reshape(x, x.shape[:-2] + (x.shape[-2] * x.shape[-1],))

    def forward(self, x_q: Tensor, x_kv: Tensor, rescalers: Rescalers | None = None) -> Tensor:
        q = self._split(self.wq(x_q))
        k = self._split(self.wk(x_kv))
        v = self._split(self.wv(x_kv))
        weights = nx.softmax(self.fusion_logits) if self.fusion_logits is not None else None
        y = mssc(q, k, v, self.cfg.segment_lengths, rescalers, predictive=self.predictive, scale_weights=weights)
        return self.wo(self._merge(y))
