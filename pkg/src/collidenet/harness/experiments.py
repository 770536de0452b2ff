"""Ablation grid over the four toggles and one-axis sensitivity sweeps."""
from __future__ import annotations

import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ..config import ExperimentConfig
from ..datagen import Dataset
from ..errors import CollideNetError, ConfigError
from ..temporal import CollideNet, Toggles
from .training import derive_seed, evaluate, train

# (ID, MS, T, S, NS)
ABLATION_ROWS: tuple[tuple[int, int, int, int, int], ...] = (
    (1, 1, 1, 1, 1),
    (2, 0, 1, 1, 1),
    (3, 1, 0, 1, 1),
    (4, 1, 1, 0, 1),
    (5, 1, 1, 1, 0),
    (6, 0, 1, 1, 0),
    (7, 1, 0, 1, 0),
    (8, 1, 0, 0, 1),
    (9, 1, 1, 0, 0),
    (10, 0, 0, 0, 1),
    (11, 0, 0, 1, 0),
    (12, 0, 1, 0, 0),
    (13, 1, 0, 0, 0),
    (14, 0, 0, 0, 0),
)


def toggles_for(row_id: int) -> Toggles:
    for rid, ms, t, s, ns in ABLATION_ROWS:
        if rid == row_id:
            return Toggles(bool(ms), bool(t), bool(s), bool(ns))
    raise ConfigError(f"no ablation row {row_id}")


@dataclass
class RunResult:
    key: object
    seed: int
    mse: float
    error: str = ""
    seconds: float = 0.0  # wall clock; kept out of the CSVs so reruns stay byte-identical

    @property
    def ok(self) -> bool:
        return not self.error


def train_and_score(config: ExperimentConfig, dataset: Dataset, seed: int, key=None) -> RunResult:
    """One isolated run: fresh model, train, test MSE.  Package errors are captured."""
    start = time.perf_counter()
    try:
        model = CollideNet(config.model, seed=derive_seed(seed, "init"))
        result = train(model, dataset, config, seed=derive_seed(seed, "train"))
        mse, error = evaluate(result.checkpoint, dataset, "test").mse, ""
    except (CollideNetError, FloatingPointError) as exc:
        mse, error = float("nan"), f"{type(exc).__name__}: {exc}".replace("\n", " ")
    return RunResult(key, seed, mse, error, time.perf_counter() - start)


def _run_job(job):
    return train_and_score(*job)


def run_jobs(jobs: list, workers: int = 1) -> list[RunResult]:
    """Run ``(config, dataset, seed, key)`` jobs; result order follows ``jobs``."""
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _stats(values: list[float]) -> tuple[float, float]:
    ok = [v for v in values if np.isfinite(v)]
    if not ok:
        return float("nan"), float("nan")
    return float(np.mean(ok)), float(np.std(ok))


@dataclass
class TableResult:
    summary_csv: str
    runs_csv: str
    runs: list[RunResult]


def run_ablation(base: ExperimentConfig, dataset: Dataset, seeds, rows=None, workers: int = 1) -> TableResult:
    """Train and test every toggle row for every seed.

    The summary has columns ``ID, MS, T, S, NS, mse_mean, mse_std`` (always all
    14 rows; rows not requested or fully failed show ``nan``).  The run log
    lists every attempted (row, seed) with its status.
    """
    seeds = list(seeds)
    wanted = {r[0] for r in ABLATION_ROWS} if rows is None else set(rows)
    jobs = []
    for rid, *_ in ABLATION_ROWS:
        if rid not in wanted:
            continue
        cfg = replace(base, model=replace(base.model, toggles=toggles_for(rid)))
        for s in seeds:
            jobs.append((cfg, dataset, s, rid))
    runs = run_jobs(jobs, workers)
    by_row: dict[int, list[float]] = {}
    for r in runs:
        by_row.setdefault(r.key, []).append(r.mse)
    out = io.StringIO()
    out.write("ID,MS,T,S,NS,mse_mean,mse_std\n")
    for rid, ms, t, s, ns in ABLATION_ROWS:
        mean, std = _stats(by_row.get(rid, []))
        out.write(f"{rid},{ms},{t},{s},{ns},{mean!r},{std!r}\n")
    return TableResult(out.getvalue(), _runs_csv("ID", runs), runs)


def _runs_csv(key_name: str, runs: list[RunResult]) -> str:
    out = io.StringIO()
    out.write(f"{key_name},seed,mse,status,error\n")
    for r in runs:
        err = r.error.replace(",", ";").replace('"', "'")
        out.write(f"{r.key},{r.seed},{r.mse!r},{'ok' if r.ok else 'failed'},{err}\n")
    return out.getvalue()


SWEEP_AXES = ("spatial_scales", "temporal_scales", "window_k")
DEFAULT_GRIDS = {
    "spatial_scales": (1, 2, 3, 4),
    "temporal_scales": (1, 2, 3, 4, 5),
    "window_k": (1, 3, 7, 15),
}


def config_for(base: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    m = base.model
    if axis == "spatial_scales":
        model = replace(m, spatial=replace(m.spatial, num_stages=int(value)))
    elif axis == "temporal_scales":
        model = replace(m, temporal=replace(m.temporal, num_scales=int(value)))
    elif axis == "window_k":
        t = replace(m.temporal, window=int(value), input_window=None, encoder_window=None, decoder_window=None)
        model = replace(m, temporal=t)
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    return replace(base, model=model)


def run_sensitivity(base: ExperimentConfig, axis: str, values, dataset: Dataset, seeds,
                    workers: int = 1) -> TableResult:
    """Every value is validated before any training starts."""
    values = list(DEFAULT_GRIDS[axis] if values is None and axis in DEFAULT_GRIDS else values or [])
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = []
    for v in values:
        cfg = config_for(base, axis, v)
        cfg.validate()
        configs.append((v, cfg))
    seeds = list(seeds)
    jobs = [(cfg, dataset, s, v) for v, cfg in configs for s in seeds]
    runs = run_jobs(jobs, workers)
    out = io.StringIO()
    out.write("axis,value,mse_mean,mse_std\n")
    for v, _ in configs:
        mean, std = _stats([r.mse for r in runs if r.key == v])
        out.write(f"{axis},{v},{mean!r},{std!r}\n")
    return TableResult(out.getvalue(), _runs_csv("value", runs), runs)

