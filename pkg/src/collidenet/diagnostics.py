"""Unit-root (ADF) and level-stationarity (KPSS) tests on embedding sequences.

ADF: constant, no deterministic trend; lag order chosen by minimum AIC over
``0..floor(12 (n/100)^(1/4))`` on a common sample, then refit on the full
sample for the chosen lag.  The p-value uses MacKinnon's (1994) response
surface for the constant-only, single-series case.

KPSS: level variant, Bartlett long-run variance with bandwidth
``floor(4 (n/100)^(1/4))``, p interpolated from the four tabulated critical
values and clamped to [0.01, 0.10].
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateError, InputError

MIN_LENGTH = 20

# MacKinnon (1994) tau-statistic response surface, regression with constant, N = 1.
_ADF_TAU_MAX = 2.74
_ADF_TAU_MIN = -18.83
_ADF_TAU_STAR = -1.61
_ADF_SMALLP = (2.1659, 1.4412, 3.8269e-2)
_ADF_LARGEP = (1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2)

KPSS_CRITICAL = (0.347, 0.463, 0.574, 0.739)
KPSS_PVALUES = (0.10, 0.05, 0.025, 0.01)


def _series(x, name: str) -> np.ndarray:
    y = np.asarray(x, dtype=np.float64)
    if y.ndim != 1:
        raise InputError(f"{name} expects a 1-D series, got shape {y.shape}")
    if y.size < MIN_LENGTH:
        raise InputError(f"{name} needs at least {MIN_LENGTH} observations, got {y.size}")
    if not np.isfinite(y).all():
        raise InputError(f"{name} got non-finite values")
    if np.ptp(y) == 0.0:
        raise DegenerateError(f"{name}: constant series")
    return y


def adf_pvalue(stat: float) -> float:
    if stat > _ADF_TAU_MAX:
        return 1.0
    if stat < _ADF_TAU_MIN:
        return 0.0
    coef = _ADF_SMALLP if stat <= _ADF_TAU_STAR else _ADF_LARGEP
    poly = sum(c * stat**i for i, c in enumerate(coef))
    return float(ndtr(poly))


def _adf_design(y: np.ndarray, lags: int, trim: int):
    """Rows t = trim+1 .. n-1: target dy_t, regressors [1, y_{t-1}, dy_{t-1..t-lags}]."""
    dy = np.diff(y)
    rows = dy.size - trim
    cols = [np.ones(rows), y[trim : trim + rows]]
    for i in range(1, lags + 1):
        cols.append(dy[trim - i : trim - i + rows])
    return dy[trim:], np.column_stack(cols)


def _ols(target: np.ndarray, design: np.ndarray):
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateError("ADF regression is rank deficient")
    resid = target - design @ coef
    return coef, resid


def _aic(resid: np.ndarray, k: int) -> float:
    m = resid.size
    ssr = float(resid @ resid)
    if ssr <= 0.0:
        return -math.inf
    llf = -0.5 * m * (math.log(2 * math.pi) + math.log(ssr / m) + 1.0)
    return -2.0 * llf + 2.0 * k


def adf_lag_cap(n: int) -> int:
    return min(int(math.floor(12.0 * (n / 100.0) ** 0.25)), n // 2 - 3)


def adf_test(series, max_lag: int | None = None) -> tuple[float, float, int]:
    """Return ``(t-ratio of the lagged level, p-value, chosen lag)``."""
    y = _series(series, "adf_test")
    cap = adf_lag_cap(y.size) if max_lag is None else int(max_lag)
    if cap < 0 or cap > y.size // 2 - 3:
        raise InputError(f"max_lag {cap} out of range for n={y.size}")
    best, best_aic = 0, math.inf
    for p in range(cap + 1):
        target, design = _adf_design(y, p, cap)
        _, resid = _ols(target, design)
        aic = _aic(resid, design.shape[1])
        if aic < best_aic:
            best, best_aic = p, aic
    target, design = _adf_design(y, best, best)
    coef, resid = _ols(target, design)
    dof = target.size - design.shape[1]
    sigma2 = float(resid @ resid) / dof
    if sigma2 <= 0.0:
        raise DegenerateError("ADF regression has zero residual variance")
    cov = sigma2 * np.linalg.inv(design.T @ design)
    stat = float(coef[1] / math.sqrt(cov[1, 1]))
    return stat, adf_pvalue(stat), best


def kpss_bandwidth(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** 0.25))


def kpss_pvalue(stat: float) -> float:
    return float(np.interp(stat, KPSS_CRITICAL, KPSS_PVALUES))


def kpss_test(series, bandwidth: int | None = None) -> tuple[float, float]:
    """Return ``(stat, p)`` with p clamped to [0.01, 0.10]."""
    y = _series(series, "kpss_test")
    n = y.size
    lags = kpss_bandwidth(n) if bandwidth is None else int(bandwidth)
    if not 0 <= lags < n:
        raise InputError(f"bandwidth {lags} out of range for n={n}")
    e = y - y.mean()
    lrv = float(e @ e)
    for i in range(1, lags + 1):
        lrv += 2.0 * (1.0 - i / (lags + 1.0)) * float(e[i:] @ e[:-i])
    lrv /= n
    if lrv <= 0.0:
        raise DegenerateError("KPSS long-run variance is not positive")
    partial = np.cumsum(e)
    stat = float(partial @ partial) / (n * n * lrv)
    return stat, kpss_pvalue(stat)


# ----------------------------------------------------------------------------
# report


_FIELDS = ("adf_stat", "adf_p", "kpss_stat", "kpss_p")


@dataclass
class StationarityReport:
    """Per-dimension statistics on raw and normalized data plus their medians.

    ``raw[f]`` and ``normalized[f]`` are ``[d]`` arrays for each field in
    ``adf_stat, adf_p, kpss_stat, kpss_p``.
    """

    raw: dict[str, np.ndarray]
    normalized: dict[str, np.ndarray]

    def median(self, which: str, name: str) -> float:
        return float(np.median(getattr(self, which)[name]))

    @property
    def num_dims(self) -> int:
        return int(self.raw["adf_stat"].size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("dim,variant," + ",".join(_FIELDS) + "\n")
        for which in ("raw", "normalized"):
            cols = getattr(self, which)
            for j in range(self.num_dims):
                buf.write(f"{j},{which}," + ",".join(f"{cols[f][j]:.10g}" for f in _FIELDS) + "\n")
            buf.write(f"median,{which}," + ",".join(f"{self.median(which, f):.10g}" for f in _FIELDS) + "\n")
        return buf.getvalue()

    def to_text(self) -> str:
        head = ("", "ADF stat", "ADF p", "KPSS stat", "KPSS p")
        rows = [head]
        for which in ("raw", "normalized"):
            rows.append((which,) + tuple(f"{self.median(which, f):.3f}" for f in _FIELDS))
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def _per_dim(series_2d: np.ndarray) -> dict[str, np.ndarray]:
    out = {f: np.empty(series_2d.shape[1]) for f in _FIELDS}
    for j in range(series_2d.shape[1]):
        s, p, _ = adf_test(series_2d[:, j])
        ks, kp = kpss_test(series_2d[:, j])
        out["adf_stat"][j], out["adf_p"][j], out["kpss_stat"][j], out["kpss_p"][j] = s, p, ks, kp
    return out


def per_sequence_normalizer(seq: np.ndarray) -> np.ndarray:
    from .stationarity import normalize

    return normalize(seq)[0].data


def stationarity_report(embeddings, normalizer: Callable[[np.ndarray], np.ndarray] | None = per_sequence_normalizer
                        ) -> StationarityReport:
    """Test every dimension of a set of ``[n, d]`` sequences, raw vs normalized.

    The sequences are concatenated in time before testing: the tests are
    invariant to an affine map of a whole series, so a per-sequence
    normalizer can only change the statistics of a multi-sequence record.
    ``normalizer=None`` is the identity.
    """
    seqs = [np.asarray(s, dtype=np.float64) for s in (embeddings if not isinstance(embeddings, np.ndarray) or embeddings.ndim == 3 else [embeddings])]
    if not seqs:
        raise InputError("stationarity_report needs at least one sequence")
    if any(s.ndim != 2 or s.shape[1] != seqs[0].shape[1] for s in seqs):
        raise InputError("sequences must all be [n, d] with a common d")
    raw = np.concatenate(seqs, axis=0)
    normed = raw if normalizer is None else np.concatenate([normalizer(s) for s in seqs], axis=0)
    raw_stats = _per_dim(raw)
    norm_stats = raw_stats if normalizer is None else _per_dim(normed)
    return StationarityReport(raw=raw_stats, normalized={k: v.copy() for k, v in norm_stats.items()})
