import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collidenet import numerics as nx
from collidenet.errors import ConfigError
from collidenet.numerics.gradcheck import analytic_grads, check_grads
from collidenet.segment_attention import (
    MSSCAttention,
    SegmentAttentionConfig,
    mssc,
    pre_mssc,
    segment_correlation,
)
from collidenet.stationarity import Rescalers


def dense_attention(q, k, v):
    s = q @ np.swapaxes(k, -1, -2) / math.sqrt(q.shape[-1])
    s = s - s.max(axis=-1, keepdims=True)
    w = np.exp(s)
    return (w / w.sum(axis=-1, keepdims=True)) @ v


def segment_oracle(q, k, v, seg, lag=False):
    """Loop-form segment attention on a single [n, d] sequence."""
    n, d = q.shape
    m = n // seg
    Q = [q[i * seg : (i + 1) * seg] for i in range(m)]
    K = [k[j * seg : (j + 1) * seg] for j in range(m)]
    V = [v[j * seg : (j + 1) * seg] for j in range(m)]
    out = np.zeros_like(v)
    for i in range(m):
        qi = Q[max(i - 1, 0)] if lag else Q[i]
        c = np.array([np.sum(qi * K[j]) / (seg * math.sqrt(d)) for j in range(m)])
        w = np.exp(c - c.max())
        w /= w.sum()
        vals = [V[min(j + 1, m - 1)] if lag else V[j] for j in range(m)]
        out[i * seg : (i + 1) * seg] = sum(wj * vj for wj, vj in zip(w, vals))
    return out


@st.composite
def qkv(draw, batch=True):
    lead = tuple(draw(st.lists(st.integers(1, 3), min_size=0, max_size=2))) if batch else ()
    n = draw(st.integers(1, 12))
    d = draw(st.integers(1, 6))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    return tuple(rng.normal(size=lead + (n, d)) for _ in range(3))


@given(qkv())
def test_unit_segments_equal_dense_attention(data):
    q, k, v = data
    np.testing.assert_allclose(segment_correlation(q, k, v, 1).data, dense_attention(q, k, v), atol=1e-10)


@given(st.sampled_from([1, 2, 3, 4]), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**32 - 1), st.booleans())
def test_matches_loop_oracle(seg, m, d, seed, lag):
    if lag and m < 2:
        m = 2
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(seg * m, d)) for _ in range(3))
    got = segment_correlation(q, k, v, seg, predictive=lag).data
    np.testing.assert_allclose(got, segment_oracle(q, k, v, seg, lag), atol=1e-12)


def test_single_segment_returns_values(rng):
    q, k, v = (rng.normal(size=(6, 3)) for _ in range(3))
    y, w = segment_correlation(q, k, v, 6, return_weights=True)
    assert w.data.shape == (1, 1) and w.data[0, 0] == 1.0
    np.testing.assert_allclose(y.data, v, atol=1e-15)


def orthogonal_segments(m, seg, gain=40.0):
    """Segment i is a scaled one-hot in column i: <Q_i, K_j> = gain^2 * seg * [i == j]."""
    x = np.zeros((m * seg, m))
    for i in range(m):
        x[i * seg : (i + 1) * seg, i] = gain
    return x


def test_orthogonal_segments_attend_to_themselves():
    m, seg = 4, 2
    x = orthogonal_segments(m, seg)
    v = np.repeat(np.arange(m, dtype=float), seg)[:, None]
    _, w = segment_correlation(x, x, v, seg, return_weights=True)
    assert (w.data.argmax(axis=-1) == np.arange(m)).all()


def one_hot_lag_construction(m=5, seg=2, j_star=2):
    """Queries whose previous segment matches only key segment j_star."""
    keys = orthogonal_segments(m, seg)
    q = np.zeros_like(keys)
    for i in range(m):
        q[i * seg : (i + 1) * seg, j_star] = 40.0
    v = np.repeat(10.0 * np.arange(m, dtype=float), seg)[:, None] + np.arange(m * seg)[:, None] * 0.0
    return q, keys, v


def test_predictive_pairing_returns_next_value_segment():
    m, seg, j_star = 5, 2, 2
    q, k, v = one_hot_lag_construction(m, seg, j_star)
    lagged = pre_mssc(q, k, v, (seg,)).data
    plain = mssc(q, k, v, (seg,)).data
    np.testing.assert_allclose(lagged, np.full_like(v, v[(j_star + 1) * seg, 0]), atol=1e-9)
    np.testing.assert_allclose(plain, np.full_like(v, v[j_star * seg, 0]), atol=1e-9)


def test_predictive_boundary_replication():
    m, seg = 3, 1
    q, k, v = one_hot_lag_construction(m, seg, j_star=m - 1)
    np.testing.assert_allclose(pre_mssc(q, k, v, (seg,)).data, v[-1:].repeat(m, 0), atol=1e-9)


def test_constant_keys_and_values_ignore_queries(rng):
    k = np.ones((8, 3))
    v = np.tile(rng.normal(size=(1, 3)), (8, 1))
    q = rng.normal(size=(8, 3))
    np.testing.assert_allclose(pre_mssc(q, k, v, (1, 2, 4)).data, v, atol=1e-12)


def test_constant_sequence_passes_through():
    x = np.full((8, 3), 0.7)
    np.testing.assert_allclose(mssc(x, x, x, (1, 2, 4)).data, x, atol=1e-15)


@given(qkv(batch=False))
def test_single_scale_mssc_is_segment_correlation(data):
    q, k, v = data
    n = q.shape[0]
    seg = max(s for s in (1, 2, 3) if n % s == 0)
    a = mssc(q, k, v, (seg,)).data
    b = segment_correlation(q, k, v, seg).data
    np.testing.assert_array_equal(a, b)


@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_two_scales_average_two_single_scale_calls(m, d, seed):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(4 * m, d)) for _ in range(3))
    both = mssc(q, k, v, (2, 4)).data
    mean = 0.5 * (segment_correlation(q, k, v, 2).data + segment_correlation(q, k, v, 4).data)
    np.testing.assert_allclose(both, mean, atol=1e-12)


@given(st.integers(2, 13), st.integers(0, 2**32 - 1))
def test_padding_masks_fully_padded_segments(n, seed):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.normal(size=(n, 2)) for _ in range(3))
    y, weights = mssc(q, k, v, (1, 2), return_weights=True)
    for w in weights:
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
    # replicated padding keys are masked, so the unit scale sees only real steps
    unit = segment_correlation(q, k, v, 1).data
    pair = segment_correlation(q, k, v, 2, pad=True).data
    np.testing.assert_allclose(y.data, 0.5 * (unit + pair), atol=1e-12)


def test_padding_required_when_indivisible(rng):
    q = rng.normal(size=(7, 2))
    with pytest.raises(ConfigError):
        segment_correlation(q, q, q, 2)
    y = segment_correlation(q, q, q, 2, pad=True)
    assert y.shape == (7, 2)


def test_scale_and_segment_errors(rng):
    x = rng.normal(size=(6, 2))
    with pytest.raises(ConfigError):
        mssc(x, x, x, (1, 2, 4, 8))
    with pytest.raises(ConfigError):
        pre_mssc(x, x, x, (6,))
    with pytest.raises(ConfigError):
        SegmentAttentionConfig(1, 4).validate(6)
    with pytest.raises(ConfigError):
        SegmentAttentionConfig(1, 3).validate(4, predictive=True)


@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_key_value_segment_permutation_invariance(m, seed):
    rng = np.random.default_rng(seed)
    seg, d = 2, 3
    q, k, v = (rng.normal(size=(seg * m, d)) for _ in range(3))
    perm = rng.permutation(m)
    idx = np.concatenate([np.arange(p * seg, (p + 1) * seg) for p in perm])
    np.testing.assert_allclose(segment_correlation(q, k[idx], v[idx], seg).data,
                               segment_correlation(q, k, v, seg).data, atol=1e-12)


def test_rescalers_enter_as_tau_times_score_plus_delta(rng):
    q, k, v = (rng.normal(size=(4, 2)) for _ in range(3))
    tau, delta = 1.7, np.array([0.3, -0.2, 0.5, 0.0])
    r = Rescalers(tau=nx.tensor(tau), delta=nx.tensor(delta), delta_segment_len=1)
    s = q @ k.T / math.sqrt(2) * tau + delta
    w = np.exp(s - s.max(-1, keepdims=True))
    expect = (w / w.sum(-1, keepdims=True)) @ v
    np.testing.assert_allclose(segment_correlation(q, k, v, 1, rescalers=r).data, expect, atol=1e-12)


def test_flop_count_halves_when_segment_length_doubles(rng):
    for n in (64, 128, 256):
        x = nx.tensor(rng.normal(size=(n, 8)))
        counts = []
        for seg in (1, 2, 4, 8):
            with nx.count_flops() as fc:
                segment_correlation(x, x, x, seg)
            counts.append(fc.macs)
            assert fc.macs == 2 * (n // seg) ** 2 * seg * 8
        for a, b in zip(counts, counts[1:]):
            assert abs(b / a - 0.5) <= 0.05


def test_gradients_through_mssc_and_pre_mssc(rng):
    q, k, v = (nx.tensor(rng.normal(size=(2, 8, 3)), requires_grad=True) for _ in range(3))
    delta = nx.tensor(rng.normal(size=(2, 2)), requires_grad=True)
    tau = nx.tensor(np.array([0.8, 1.3]), requires_grad=True)
    r = Rescalers(tau=tau, delta=delta, delta_segment_len=4)
    w = rng.normal(size=(2, 8, 3))
    for fn in (mssc, pre_mssc):
        errs = check_grads(lambda: nx.tsum(nx.mul(fn(q, k, v, (1, 2, 4), r), w)), [q, k, v, tau, delta])
        assert max(errs) < 1e-4, fn.__name__


def test_multihead_module_shapes_and_gradients(rng):
    cfg = SegmentAttentionConfig(1, 2, num_heads=2, head_dim=3)
    att = MSSCAttention(6, cfg, rng, predictive=True, learned_fusion=True)
    x = nx.tensor(rng.normal(size=(2, 8, 6)))
    kv = nx.tensor(rng.normal(size=(2, 8, 6)))
    assert att(x, kv).shape == (2, 8, 6)
    w = rng.normal(size=(2, 8, 6))
    named = dict(att.named_parameters())
    # a shared key offset shifts every score of a row equally: its true gradient is zero
    key_bias = named.pop("wk.bias")
    loss = lambda: nx.tsum(nx.mul(att(x, kv), w))
    errs = check_grads(loss, list(named.values()))
    assert max(errs) < 1e-4
    assert np.abs(analytic_grads(loss, [key_bias])[0]).max() < 1e-12
