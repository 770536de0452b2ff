from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from collidenet.datagen import (
    ClipSample,
    DataConfig,
    JitterRanges,
    SceneParams,
    balance_and_augment,
    gen_approach_video,
    gen_component_series,
    make_dataset,
    photometric,
    read_dataset,
    segment_clips,
    write_dataset,
)
from collidenet.diagnostics import adf_test
from collidenet.errors import InputError, ParamError
from collidenet.stationarity import normalize

TINY = DataConfig(num_videos=10, duration=2.0, toc_min=0.5, toc_max=2.0, fps=10, image_size=16, noise=0.0)


def test_time_of_collision():
    assert SceneParams(distance=10.0, speed=5.0).time_of_collision == 2.0


@pytest.mark.parametrize("speed,distance", [(0.0, 10.0), (-1.0, 10.0), (1.0, 10.0)])
def test_invalid_scenes(speed, distance):
    with pytest.raises(ParamError):
        gen_approach_video(SceneParams(distance=distance, speed=speed), 0)


def test_same_seed_same_video():
    p = SceneParams(background="drifting", noise=0.05, jitter=JitterRanges(0.1, 0.1, 0.1, 0.1))
    a, _ = gen_approach_video(p, 7)
    b, _ = gen_approach_video(p, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gen_approach_video(p, 8)[0])


def rendered_width(frame, background, color):
    """Recover per-pixel coverage from the blend and sum it along the centre row."""
    alpha = (frame - background)[..., 0] / (color[0] - background[..., 0])
    row = int(np.argmax(alpha.sum(axis=1)))
    return alpha[row].sum()


@pytest.mark.parametrize("speed", [3.0, 5.0, 8.0])
def test_rendered_width_follows_projection(speed):
    color = (0.95, 0.05, 0.05)
    p = SceneParams(distance=12.0, speed=speed, size=1.5, duration=4.0, color=color, image_size=64, focal_px=12.0,
                    center=(32.0, 32.0))
    video, toc = gen_approach_video(p, 0)
    empty, _ = gen_approach_video(replace(p, size=1e-12), 0)
    w0 = p.apparent_width(0.0)
    for f in range(0, video.shape[0], 7):
        t = f / p.fps
        if t >= toc:
            break
        expected = min(w0 * p.distance / (p.distance - p.speed * t), 64.0)
        assert abs(rendered_width(video[f], empty[f], np.array(color)) - expected) <= 1.0


def test_clip_labels_mid_clip_collision():
    video = np.zeros((120, 4, 4, 3))
    clips = segment_clips(video, 3.5)
    assert [c.ttc_label for c in clips] == [3.5, 2.5, 1.5, 0.5]
    assert all(c.frames.shape[0] == 30 for c in clips)


def test_clip_labels_boundary_collision_keeps_zero_clip():
    clips = segment_clips(np.zeros((120, 4, 4, 3)), 2.0)
    assert [c.ttc_label for c in clips] == [2.0, 1.0, 0.0]


def test_clip_segmentation_errors():
    with pytest.raises(InputError):
        segment_clips(np.zeros((0, 4, 4, 3)), 1.0)
    with pytest.raises(InputError):
        segment_clips(np.zeros((30, 4, 4, 3)), 1.0, fps=30, clip_len=0.55)


def test_frame_stride_subsamples():
    clips = segment_clips(np.arange(60, dtype=float)[:, None, None, None] * np.ones((1, 2, 2, 3)), 1.5,
                          frame_stride=4)
    assert clips[0].frames.shape[0] == 8
    assert clips[1].frames[:, 0, 0, 0].tolist() == list(range(30, 60, 4))


def test_component_generator_zero():
    z, trend, seasonal = gen_component_series(0, 4, 0, 0, 0, 0, 20, 3, 0)
    assert not z.any() and not trend.any() and not seasonal.any()


def test_component_generator_rejects_short_series():
    with pytest.raises(ParamError):
        gen_component_series(0.1, 16, 1.0, 0.0, 0.0, 0.0, 32, 1, 0)


def test_variance_drift_normalization_lowers_adf_p():
    better = total = 0
    for seed in range(20):
        z, _, _ = gen_component_series(0.0, 10, 0.5, 0.5, 0.3, 2.0, 600, 4, seed)
        windows = z.reshape(20, 30, 4)
        normed = normalize(windows)[0].data.reshape(600, 4)
        for j in range(4):
            total += 1
            better += adf_test(z[:, j])[1] > adf_test(normed[:, j])[1]
    assert better / total >= 0.9


def _clip(label, value=0.5, idx=0):
    return ClipSample(frames=np.full((2, 4, 4, 3), value, dtype=np.float32), ttc_label=label, id=f"c{idx}")


def test_balanced_set_is_unchanged():
    samples = [_clip(0.5, idx=0), _clip(1.5, idx=1), _clip(2.5, idx=2)]
    assert len(balance_and_augment(samples, 0)) == 3


@given(st.lists(st.floats(0.0, 3.99), min_size=1, max_size=30), st.integers(0, 1000))
def test_balancing_equalizes_bins_and_keeps_labels(labels, seed):
    samples = [_clip(y, idx=i) for i, y in enumerate(labels)]
    out = balance_and_augment(samples, seed)
    counts = np.bincount([int(s.ttc_label) for s in out])
    assert len(set(counts[counts > 0])) == 1
    originals = {s.id: s.ttc_label for s in samples}
    for s in out:
        assert s.ttc_label == originals[s.id.split("_aug")[0]]


def test_zero_jitter_duplicates_are_bit_identical():
    samples = [_clip(0.5, 0.3, 0), _clip(0.7, 0.3, 1), _clip(1.5, 0.8, 2)]
    out = balance_and_augment(samples, 0, jitter=JitterRanges())
    dup = [s for s in out if "_aug" in s.id]
    assert len(dup) == 1 and np.array_equal(dup[0].frames, samples[2].frames)


def test_brightness_shift_is_exact_before_clipping():
    frames = np.full((1, 2, 2, 3), 0.25)
    assert np.array_equal(photometric(frames, brightness=0.125, clip=False) - frames, np.full_like(frames, 0.125))
    rng = np.random.default_rng(0)
    x = rng.uniform(0.2, 0.6, (2, 3, 3, 3))
    np.testing.assert_allclose(photometric(x, brightness=0.1, clip=False) - x, 0.1, atol=1e-15)


def test_hue_rotation_by_full_turn_is_identity():
    x = np.random.default_rng(0).random((2, 3, 3, 3))
    np.testing.assert_allclose(photometric(x, hue=2 * np.pi), x, atol=1e-12)


def test_dataset_invariants_and_video_level_split():
    ds = make_dataset(TINY, 0)
    vids = {name: {s.video_id for s in ds.split(name)} for name in ("train", "val", "test")}
    assert not (vids["train"] & vids["val"] or vids["train"] & vids["test"] or vids["val"] & vids["test"])
    assert sum(len(v) for v in vids.values()) == TINY.num_videos
    for _, s in ds.items():
        assert 0.0 <= s.ttc_label <= TINY.duration
        assert s.frames.shape == (TINY.frames_per_clip, 16, 16, 3)
        assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0


def test_dataset_is_pure_function_of_config_and_seed():
    a, b = make_dataset(TINY, 5), make_dataset(TINY, 5)
    for (na, sa), (nb, sb) in zip(a.items(), b.items()):
        assert na == nb and sa.id == sb.id and sa.ttc_label == sb.ttc_label
        assert np.array_equal(sa.frames, sb.frames)


def test_manifest_round_trip(tmp_path):
    ds = make_dataset(TINY, 1)
    manifest = write_dataset(ds, tmp_path)
    header = manifest.read_text().splitlines()[0]
    assert header == "id,path,ttc_label,split"
    back = read_dataset(manifest)
    for (na, sa), (nb, sb) in zip(ds.items(), back.items()):
        assert na == nb and sa.id == sb.id and sa.ttc_label == sb.ttc_label
        assert np.array_equal(sa.frames, sb.frames)


def test_manifest_rejects_bad_header(tmp_path):
    (tmp_path / "m.csv").write_text("id,file,label,split\n")
    with pytest.raises(InputError):
        read_dataset(tmp_path / "m.csv")


def test_balancing_rejects_non_finite_labels():
    with pytest.raises(InputError):
        balance_and_augment([_clip(float("nan"))], 0)
