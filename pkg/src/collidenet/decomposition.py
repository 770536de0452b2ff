"""Trend/seasonality split of embedding sequences by centered moving average."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, as_tensor, moving_average, sub

DEFAULT_WINDOW = 7


@dataclass
class DecompositionResult:
    trend: Tensor
    seasonality: Tensor
    window: int


def decompose(z, k: int = DEFAULT_WINDOW, axis: int = -2) -> DecompositionResult:
    """Split ``z`` ([..., n, d]) into trend = MA_k(z) and seasonality = z - trend."""
    z = as_tensor(z)
    trend = moving_average(z, k, axis=axis)
    return DecompositionResult(trend=trend, seasonality=sub(z, trend), window=k)


def components_csv(result: DecompositionResult) -> tuple[str, str]:
    """Render trend and seasonality of a single [n, d] sequence as CSV text.

    Columns: ``t, dim_0 .. dim_{d-1}``.
    """
    return _to_csv(result.trend.data), _to_csv(result.seasonality.data)


def _to_csv(arr: np.ndarray) -> str:
    if arr.ndim != 2:
        raise ValueError(f"expected an [n, d] sequence, got shape {arr.shape}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"dim_{j}" for j in range(arr.shape[1])])
    for t, row in enumerate(arr):
        w.writerow([t] + [repr(float(v)) for v in row])
    return buf.getvalue()
