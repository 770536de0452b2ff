"""Synthetic data with analytic ground truth.

* Approaching-object videos: a square of physical size ``s`` closes on a
  pinhole camera at constant speed, so its apparent width is
  ``f * s / (d0 - v t)`` pixels and the collision time is ``d0 / v``.
* Clip segmentation: consecutive 1 s clips labeled with the time remaining to
  collision at the clip start.
* Component series: trend + seasonal + drifting-level + heteroscedastic noise,
  for decomposition and stationarity checks.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InputError, ParamError
from .numerics.tensorio import load_tensor, save_tensor


@dataclass(frozen=True)
class JitterRanges:
    """Half-widths of uniform photometric perturbations."""

    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0  # radians

    @property
    def is_zero(self) -> bool:
        return not (self.brightness or self.contrast or self.saturation or self.hue)


@dataclass(frozen=True)
class SceneParams:
    distance: float = 10.0  # m at t = 0
    speed: float = 5.0  # m/s, closing
    size: float = 1.75  # m, object side
    background: str = "static"  # "static" | "drifting"
    fps: int = 30
    duration: float = 4.0  # s
    jitter: JitterRanges = field(default_factory=JitterRanges)
    noise: float = 0.0
    image_size: int = 32
    focal_px: float = 16.0
    center: tuple[float, float] = (16.0, 16.0)  # (x, y) in pixels
    lateral_speed: float = 0.0  # px/s horizontal drift of the object
    color: tuple[float, float, float] = (0.9, 0.2, 0.15)

    @property
    def time_of_collision(self) -> float:
        return self.distance / self.speed

    def validate(self) -> None:
        if self.speed <= 0 or self.distance <= 0 or self.size <= 0:
            raise ParamError("distance, speed and size must be positive")
        if self.time_of_collision > self.duration:
            raise ParamError(
                f"collision at {self.time_of_collision:.3f}s lies outside the {self.duration}s video"
            )
        if self.background not in ("static", "drifting"):
            raise ParamError(f"unknown background mode {self.background!r}")

    def apparent_width(self, t) -> np.ndarray:
        """Analytic on-screen width in pixels; infinite at or after collision."""
        remaining = self.distance - self.speed * np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(remaining > 0, self.focal_px * self.size / np.maximum(remaining, 1e-300), np.inf)


@dataclass
class ClipSample:
    frames: np.ndarray | None  # [T_f, H, W, 3] float32 in [0, 1]
    ttc_label: float
    id: str
    embeddings: np.ndarray | None = None  # [n, d]
    video_id: str = ""
    start_time: float = 0.0

    @property
    def data(self) -> np.ndarray:
        return self.frames if self.frames is not None else self.embeddings


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [i, i+1) covered by the interval [lo, hi]."""
    edges = np.arange(n, dtype=float)
    return np.clip(np.minimum(edges + 1, hi) - np.maximum(edges, lo), 0.0, 1.0)


def _background(params: SceneParams, rng: np.random.Generator, num_frames: int) -> np.ndarray:
    size = params.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    base = rng.uniform(0.3, 0.5, size=3)
    waves = []
    for _ in range(4):
        kx, ky = rng.uniform(-0.6, 0.6, size=2)
        amp = rng.uniform(0.02, 0.06)
        phase = rng.uniform(0, 2 * np.pi)
        tint = rng.uniform(0.5, 1.0, size=3)
        waves.append((kx, ky, amp, phase, tint))
    drift = rng.uniform(4.0, 10.0) * rng.choice([-1.0, 1.0]) if params.background == "drifting" else 0.0
    out = np.empty((num_frames, size, size, 3))
    for f in range(num_frames):
        shift = drift * f / params.fps
        img = np.broadcast_to(base, (size, size, 3)).copy()
        for kx, ky, amp, phase, tint in waves:
            img += (amp * np.sin(kx * (xx - shift) + ky * yy + phase))[..., None] * tint
        out[f] = img
    return out


def _draw_jitter(rng: np.random.Generator, ranges: JitterRanges) -> tuple[float, float, float, float]:
    def draw(r):
        return float(rng.uniform(-r, r)) if r else 0.0

    return draw(ranges.brightness), draw(ranges.contrast), draw(ranges.saturation), draw(ranges.hue)


def photometric(frames: np.ndarray, brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0,
                clip: bool = True) -> np.ndarray:
    """Brightness (additive), contrast and saturation (multiplicative about 1),
    hue (rotation in YIQ chroma plane).  Zero settings are skipped exactly."""
    x = np.asarray(frames, dtype=np.float64)
    if brightness:
        x = x + brightness
    if contrast:
        m = x.mean(axis=(-3, -2, -1), keepdims=True)
        x = (x - m) * (1.0 + contrast) + m
    if saturation:
        gray = x @ np.array([0.299, 0.587, 0.114])
        x = gray[..., None] + (x - gray[..., None]) * (1.0 + saturation)
    if hue:
        to_yiq = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
        c, s = math.cos(hue), math.sin(hue)
        rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
        m = np.linalg.inv(to_yiq) @ rot @ to_yiq
        x = x @ m.T
    return np.clip(x, 0.0, 1.0) if clip else x


def gen_approach_video(params: SceneParams, seed: int) -> tuple[np.ndarray, float]:
    """Render ``[T_f, H, W, 3]`` frames and return them with the collision time."""
    params.validate()
    rng = np.random.default_rng(seed)
    num_frames = int(round(params.duration * params.fps))
    video = _background(params, rng, num_frames)
    size = params.image_size
    color = np.asarray(params.color)
    t = np.arange(num_frames) / params.fps
    widths = params.apparent_width(t)
    cx0, cy = params.center
    for f in range(num_frames):
        w = min(widths[f], 4.0 * size)
        cx = cx0 + params.lateral_speed * t[f]
        cov = np.outer(_coverage(cy - w / 2, cy + w / 2, size), _coverage(cx - w / 2, cx + w / 2, size))
        video[f] = video[f] * (1.0 - cov[..., None]) + cov[..., None] * color
    jit = _draw_jitter(rng, params.jitter)
    if any(jit):
        video = photometric(video, *jit, clip=False)
    if params.noise:
        video = video + rng.normal(0.0, params.noise, video.shape)
    return np.clip(video, 0.0, 1.0), params.time_of_collision


def segment_clips(video: np.ndarray, time_of_collision: float, fps: int = 30, clip_len: float = 1.0,
                  frame_stride: int = 1, video_id: str = "v") -> list[ClipSample]:
    """Cut consecutive non-overlapping clips labeled ``toc - clip_start``.

    Clips starting after the collision, or running past the end of the video,
    are dropped.  A clip starting exactly at the collision (label 0) is kept.
    """
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] == 0:
        raise InputError("expected a non-empty video [T_f, H, W, 3]")
    per_clip = fps * clip_len
    if abs(per_clip - round(per_clip)) > 1e-9:
        raise InputError(f"fps * clip_len must be integral, got {per_clip}")
    per_clip = int(round(per_clip))
    clips = []
    i = 0
    while (i + 1) * per_clip <= video.shape[0]:
        start = i * clip_len
        label = time_of_collision - start
        if label < 0:
            break
        frames = video[i * per_clip : (i + 1) * per_clip : frame_stride]
        clips.append(
            ClipSample(
                frames=np.ascontiguousarray(frames, dtype=np.float32),
                ttc_label=float(label),
                id=f"{video_id}_c{i:02d}",
                video_id=video_id,
                start_time=start,
            )
        )
        i += 1
    return clips


def gen_component_series(trend_slope: float, season_period: float, season_amp: float, noise_sigma: float,
                         mean_drift: float, var_drift: float, n: int, d: int, seed: int):
    """Return ``(z, trend, seasonal)``, each ``[n, d]``.

    ``z = trend + seasonal + level + noise`` where ``level`` is a random walk
    with step scale ``mean_drift`` and the noise scale grows linearly from
    ``noise_sigma`` to ``noise_sigma * (1 + var_drift)``.
    """
    if n < 3 or d < 1 or (season_period > 0 and n <= 2 * season_period):
        raise ParamError("need n > 2 * season_period, n >= 3 and d >= 1")
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)[:, None]
    trend = np.broadcast_to(trend_slope * t, (n, d)).copy()
    phases = rng.uniform(0, 2 * np.pi, size=d)
    seasonal = season_amp * np.sin(2 * np.pi * t / season_period + phases) if season_period > 0 else np.zeros((n, d))
    level = mean_drift * np.cumsum(rng.normal(size=(n, d)), axis=0)
    scale = noise_sigma * (1.0 + var_drift * t / n)
    noise = scale * rng.normal(size=(n, d))
    return trend + seasonal + level + noise, trend, seasonal


def balance_and_augment(samples: list[ClipSample], seed: int, bin_width: float = 1.0,
                        jitter: JitterRanges = JitterRanges(brightness=0.1, contrast=0.1, saturation=0.1, hue=0.1)
                        ) -> list[ClipSample]:
    """Equalize label-histogram bins by duplicating minority clips with jitter."""
    if not samples:
        return []
    if not all(math.isfinite(s.ttc_label) for s in samples):
        raise InputError("cannot balance clips with non-finite labels")
    rng = np.random.default_rng(seed)
    bins: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        bins.setdefault(int(math.floor(s.ttc_label / bin_width)), []).append(i)
    target = max(len(v) for v in bins.values())
    out = list(samples)
    for b in sorted(bins):
        members = bins[b]
        for j in range(target - len(members)):
            src = samples[members[int(rng.integers(len(members)))]]
            jit = _draw_jitter(rng, jitter)
            if src.frames is not None and any(jit):
                frames = photometric(src.frames, *jit).astype(np.float32)
            else:
                frames = None if src.frames is None else src.frames.copy()
            out.append(replace(src, frames=frames, id=f"{src.id}_aug{j}"))
    return out


# ----------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DataConfig:
    num_videos: int = 200
    image_size: int = 32
    fps: int = 30
    clip_len: float = 1.0
    duration: float = 4.0
    frame_stride: int = 1
    train_frac: float = 0.70
    val_frac: float = 0.15
    toc_min: float = 1.0
    toc_max: float = 4.0
    speed_min: float = 4.0
    speed_max: float = 6.0
    size_min: float = 1.5
    size_max: float = 2.0
    focal_px: float = 16.0
    noise: float = 0.02
    drifting_frac: float = 0.5
    jitter: float = 0.05

    @property
    def frames_per_clip(self) -> int:
        return len(range(0, int(round(self.fps * self.clip_len)), self.frame_stride))


@dataclass
class Dataset:
    train: list[ClipSample]
    val: list[ClipSample]
    test: list[ClipSample]

    def split(self, name: str) -> list[ClipSample]:
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown split {name!r}")
        return getattr(self, name)

    def items(self):
        for name in ("train", "val", "test"):
            for s in getattr(self, name):
                yield name, s


def scene_for_video(cfg: DataConfig, rng: np.random.Generator) -> SceneParams:
    toc = rng.uniform(cfg.toc_min, cfg.toc_max)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max)
    mid = cfg.image_size / 2
    hue = rng.uniform(0, 2 * np.pi)
    color = tuple(float(0.55 + 0.4 * np.cos(hue + k * 2 * np.pi / 3)) for k in range(3))
    return SceneParams(
        distance=toc * speed,
        speed=speed,
        size=rng.uniform(cfg.size_min, cfg.size_max),
        background="drifting" if rng.random() < cfg.drifting_frac else "static",
        fps=cfg.fps,
        duration=cfg.duration,
        jitter=JitterRanges(cfg.jitter, cfg.jitter, cfg.jitter, cfg.jitter),
        noise=cfg.noise,
        image_size=cfg.image_size,
        focal_px=cfg.focal_px,
        center=(mid + rng.uniform(-3, 3), mid + rng.uniform(-3, 3)),
        lateral_speed=rng.uniform(-2.0, 2.0),
        color=color,
    )


def make_dataset(cfg: DataConfig, seed: int) -> Dataset:
    """Generate videos, cut clips, split 70/15/15 by video (never by clip)."""
    root = np.random.SeedSequence(seed)
    children = root.spawn(cfg.num_videos + 1)
    order = np.random.default_rng(children[-1]).permutation(cfg.num_videos)
    n_train = int(round(cfg.train_frac * cfg.num_videos))
    n_val = int(round(cfg.val_frac * cfg.num_videos))
    split_of = {}
    for rank, v in enumerate(order):
        split_of[int(v)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    out = {"train": [], "val": [], "test": []}
    for v in range(cfg.num_videos):
        rng = np.random.default_rng(children[v])
        params = scene_for_video(cfg, rng)
        video, toc = gen_approach_video(params, int(rng.integers(2**63 - 1)))
        clips = segment_clips(video, toc, cfg.fps, cfg.clip_len, cfg.frame_stride, video_id=f"v{v:04d}")
        out[split_of[v]].extend(clips)
    return Dataset(**out)


MANIFEST_COLUMNS = ("id", "path", "ttc_label", "split")


def write_dataset(ds: Dataset, out_dir: str | os.PathLike) -> Path:
    """Store every clip as a CNT1 tensor and write ``manifest.csv``."""
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for split, s in ds.items():
            rel = f"clips/{s.id}.cnt1"
            save_tensor(out / rel, s.data)
            w.writerow([s.id, rel, repr(float(s.ttc_label)), split])
    return manifest


def read_dataset(manifest: str | os.PathLike) -> Dataset:
    manifest = Path(manifest)
    out = {"train": [], "val": [], "test": []}
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise InputError(f"manifest columns must be {MANIFEST_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            arr = load_tensor(manifest.parent / row["path"]).astype(np.float32)
            frames, emb = (arr, None) if arr.ndim == 4 else (None, arr)
            if row["split"] not in out:
                raise InputError(f"unknown split {row['split']!r}")
            out[row["split"]].append(
                ClipSample(frames=frames, embeddings=emb, ttc_label=float(row["ttc_label"]), id=row["id"],
                           video_id=row["id"].split("_c")[0])
            )
    return Dataset(**out)
