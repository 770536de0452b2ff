"""Per-sequence normalization and the learned attention rescalers tau / delta.

Normalization removes the first two moments of each embedding dimension over
time.  The projector maps those moments back into two attention rescalers: a
positive scale ``tau`` and per-key-segment offsets ``delta`` that enter the
pre-softmax scores as ``tau * s_ij + delta_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError, UsageError
from .numerics import Linear, Module, Tensor

SIGMA_EPS = 1e-5


@dataclass
class SeriesStats:
    mu: Tensor  # [..., d]
    sigma: Tensor  # [..., d], clamped at SIGMA_EPS

    def _expanded(self):
        shape_mu = self.mu.shape[:-1] + (1, self.mu.shape[-1])
        return nx.reshape(self.mu, shape_mu), nx.reshape(self.sigma, shape_mu)


@dataclass
class Rescalers:
    """Attention rescalers; ``None`` fields mean identity (tau=1, delta=0).

    ``tau`` has the batch shape of the sequence (``()`` when unbatched).
    ``delta`` has one extra trailing axis with one entry per key segment of
    length ``delta_segment_len``.
    """

    tau: Tensor | None = None
    delta: Tensor | None = None
    delta_segment_len: int = 1

    @classmethod
    def identity(cls) -> "Rescalers":
        return cls()

    @property
    def is_identity(self) -> bool:
        return self.tau is None and self.delta is None

    def apply(self, scores: Tensor, seg_len: int, num_segments: int) -> Tensor:
        """Return ``tau * scores + delta_j`` for scores of shape [..., m, m]."""
        out = scores
        if self.tau is not None:
            tau = self.tau
            tau = nx.reshape(tau, tau.shape + (1,) * (scores.ndim - tau.ndim))
            out = nx.mul(out, tau)
        if self.delta is not None:
            delta = self.delta
            m_c = delta.shape[-1]
            idx = (np.arange(num_segments) * seg_len) // self.delta_segment_len
            idx = np.minimum(idx, m_c - 1)
            d = delta if (len(idx) == m_c and seg_len == self.delta_segment_len) else nx.take(delta, idx, axis=-1)
            lead = d.shape[:-1]
            d = nx.reshape(d, lead + (1,) * (scores.ndim - 1 - len(lead)) + (num_segments,))
            out = nx.add(out, d)
        return out


def normalize(z) -> tuple[Tensor, SeriesStats]:
    """Standardize each dimension over time (axis -2); population moments."""
    z = nx.as_tensor(z)
    if z.ndim < 2 or z.shape[-2] < 2:
        raise UsageError("normalize needs a sequence of at least two steps")
    mu = nx.mean(z, axis=-2, keepdims=True)
    centered = nx.sub(z, mu)
    var = nx.mean(nx.square(centered), axis=-2, keepdims=True)
    sigma = nx.sqrt(nx.maximum(var, SIGMA_EPS**2))
    z_prime = nx.div(centered, sigma)
    squeeze = mu.shape[:-2] + (mu.shape[-1],)
    return z_prime, SeriesStats(mu=nx.reshape(mu, squeeze), sigma=nx.reshape(sigma, squeeze))


def denormalize(z_dec, stats: SeriesStats) -> Tensor:
    z_dec = nx.as_tensor(z_dec)
    if z_dec.shape[:-2] != stats.mu.shape[:-1] or z_dec.shape[-1] != stats.mu.shape[-1]:
        raise DimensionError(f"sequence {z_dec.shape} does not match stats {stats.mu.shape}")
    mu, sigma = stats._expanded()
    return nx.add(nx.mul(z_dec, sigma), mu)


def normalize_with(x, stats: SeriesStats, center: bool = True) -> Tensor:
    """Map another sequence into the normalized coordinates of ``stats``."""
    mu, sigma = stats._expanded()
    x = nx.as_tensor(x)
    return nx.div(nx.sub(x, mu) if center else x, sigma)


class Projector(Module):
    """Two-layer perceptron from (mu, sigma, mean-pooled z) to (log tau, delta).

    The output layer starts at zero, so an untrained projector yields the
    identity rescaling tau=1, delta=0.
    """

    def __init__(self, d: int, num_segments: int, segment_len: int, rng: np.random.Generator, hidden: int = 64):
        self.num_segments = num_segments
        self.segment_len = segment_len
        self.fc1 = Linear(3 * d, hidden, rng)
        self.fc2 = Linear(hidden, 1 + num_segments, rng, zero=True)

    def forward(self, stats: SeriesStats, z) -> Rescalers:
        z = nx.as_tensor(z)
        pooled = nx.mean(z, axis=-2)
        feats = nx.concat([stats.mu, stats.sigma, pooled], axis=-1)
        out = self.fc2(nx.relu(self.fc1(feats)))
        tau = nx.exp(nx.reshape(out[..., 0], out.shape[:-1]))
        delta = out[..., 1:]
        return Rescalers(tau=tau, delta=delta, delta_segment_len=self.segment_len)


def project_rescalers(stats: SeriesStats, z, params: Projector) -> Rescalers:
    return params(stats, z)
