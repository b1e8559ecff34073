import numpy as np
import pytest

from timebalance.datamodel import (
    FINETUNE_AUGMENT, HEADER_SIZE, PRETRAIN_AUGMENT, AugmentSpec, VideoInstance, augment, center_crop_resize,
    class_names, clip_starts, load_dataset, load_videos, read_video, sample_consecutive_clips,
    stratified_split, write_split_manifest, write_video,
)
from timebalance.errors import DataError, SamplingError


def video(T=32, vid="v", label=0, seed=0, H=16, W=16):
    frames = np.random.default_rng(seed).random((T, H, W, 3), dtype=np.float32)
    return VideoInstance(vid, frames, label)


# ------------------------------------------------------------------ container

def test_container_roundtrip_bitwise(tmp_path, rng):
    frames = rng.random((5, 4, 6, 3)).astype(np.float32)
    write_video(tmp_path / "a.tbv", frames)
    raw = (tmp_path / "a.tbv").read_bytes()
    assert raw[:4] == b"TBV1"
    assert len(raw) == HEADER_SIZE + frames.nbytes
    assert np.array_equal(read_video(tmp_path / "a.tbv"), frames)


@pytest.mark.parametrize("damage", ["magic", "truncate", "short_header", "dtype"])
def test_container_corruption_names_file(tmp_path, damage):
    path = tmp_path / "bad.tbv"
    write_video(path, np.zeros((2, 2, 2, 3), np.float32))
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[:4] = b"XXXX"
    elif damage == "truncate":
        raw = raw[:-5]
    elif damage == "short_header":
        raw = raw[:10]
    else:
        raw[20] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="bad.tbv"):
        read_video(path)


def test_instance_rejects_out_of_range_frames():
    with pytest.raises(DataError):
        VideoInstance("x", np.full((2, 2, 2, 3), 1.5, np.float32))
    with pytest.raises(DataError):
        VideoInstance("x", np.full((2, 2, 2, 3), np.nan, np.float32))


# ------------------------------------------------------------------ loading and splits

def test_load_videos_labels_follow_sorted_class_names(tiny_root):
    names = class_names(tiny_root)
    assert names == sorted(names)
    videos = load_videos(tiny_root)
    assert len(videos) == 16
    for v in videos:
        assert names[v.label] in v.id
        assert v.kind in ("atomic", "composite")


def test_load_videos_rejects_short_videos(tiny_root):
    assert load_videos(tiny_root, min_frames=33) == []


def test_load_dataset_rejects_bad_fraction(tiny_root):
    for f in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            load_dataset(tiny_root, f)


def test_load_dataset_missing_root(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


def test_split_counts_and_determinism():
    vids = [video(T=8, vid=f"v{i:03d}", label=i % 5, seed=i, H=2, W=2) for i in range(100)]
    lab, unl = stratified_split(vids, 0.1, 7)
    assert (len(lab), len(unl)) == (10, 90)
    lab2, _ = stratified_split(vids, 0.1, 7)
    assert [v.id for v in lab] == [v.id for v in lab2]
    assert all(v.label is None for v in unl)
    assert sorted(v.id for v in lab + unl) == sorted(v.id for v in vids)
    assert stratified_split(vids, 1.0, 0)[1] == []


def test_split_per_class_deviation_at_most_one():
    # 20 classes with uneven sizes; per-class labeled count within 1 of the exact share
    rng = np.random.default_rng(3)
    sizes = rng.integers(3, 17, size=20)
    vids, k = [], 0
    for c, m in enumerate(sizes):
        for _ in range(m):
            vids.append(video(T=2, vid=f"v{k:04d}", label=c, H=1, W=1))
            k += 1
    for seed in range(5):
        lab, _ = stratified_split(vids, 0.1, seed)
        counts = np.bincount([v.label for v in lab], minlength=20)
        assert np.all(np.abs(counts - 0.1 * sizes) < 1)
        assert counts.sum() == round(0.1 * len(vids))


def test_split_manifest(tmp_path):
    vids = [video(T=2, vid=f"v{i}", label=i % 2, H=1, W=1) for i in range(4)]
    lab, unl = stratified_split(vids, 0.5, 0)
    write_split_manifest(tmp_path / "split.csv", lab, unl)
    rows = [line.split(",") for line in (tmp_path / "split.csv").read_text().split()]
    assert sorted(r[0] for r in rows) == [f"v{i}" for i in range(4)]
    assert sum(r[1] == "labeled" for r in rows) == 2


# ------------------------------------------------------------------ clip sampling

def test_fixed_clip_starts():
    assert clip_starts(32, 4, 8) == [0, 8, 16, 24]
    clips = sample_consecutive_clips(video(32), 4, 8)
    assert clips.timestamps == [0, 8, 16, 24]
    for t, c in enumerate(clips.clips):
        assert np.array_equal(c, video(32).frames[8 * t:8 * t + 8])


def test_short_video_sampling_error():
    with pytest.raises(SamplingError):
        sample_consecutive_clips(video(31), 4, 8)
    with pytest.raises(SamplingError):
        clip_starts(40, 4, 8, start=9)


def test_random_start_disjoint_and_deterministic():
    for seed in range(30):
        starts = clip_starts(64, 4, 8, "uniform_random", seed=seed)
        assert starts == clip_starts(64, 4, 8, "uniform_random", seed=seed)
        assert all(b - a == 8 for a, b in zip(starts, starts[1:]))
        assert starts[0] >= 0 and starts[-1] + 8 <= 64


def test_default_clip_count():
    import inspect
    assert inspect.signature(sample_consecutive_clips).parameters["n"].default == 4


# ------------------------------------------------------------------ augmentation

def test_disabled_augment_is_identity(rng):
    clip = rng.random((8, 16, 16, 3)).astype(np.float32)
    assert np.array_equal(augment(clip, AugmentSpec()), clip)


def test_double_flip_is_identity(rng):
    clip = rng.random((8, 16, 16, 3)).astype(np.float32)
    spec = AugmentSpec(horizontal_flip=1.0)
    once = augment(clip, spec)
    assert np.array_equal(once, clip[:, :, ::-1])
    assert np.array_equal(augment(once, spec), clip)


def test_grayscale_channels_equal(rng):
    out = augment(rng.random((4, 8, 8, 3)).astype(np.float32), AugmentSpec(grayscale=1.0))
    assert np.array_equal(out[..., 0], out[..., 1]) and np.array_equal(out[..., 1], out[..., 2])


@pytest.mark.parametrize("spec", [PRETRAIN_AUGMENT, FINETUNE_AUGMENT,
                                  AugmentSpec(crop=True, crop_size=(8, 8), brightness=0.9, contrast=0.9)])
def test_augment_shape_range_determinism(spec, rng):
    clip = rng.random((8, 16, 16, 3)).astype(np.float32)
    for seed in range(10):
        a = augment(clip, spec.with_seed(seed))
        assert np.array_equal(a, augment(clip, spec.with_seed(seed)))
        size = spec.crop_size or (16, 16)
        assert a.shape == (8, *size, 3)
        assert a.min() >= 0.0 and a.max() <= 1.0


def test_center_crop_full_scale_is_identity(rng):
    frames = rng.random((2, 16, 16, 3)).astype(np.float32)
    assert np.array_equal(center_crop_resize(frames, 1.0), frames)
    assert center_crop_resize(frames, 0.75).shape == frames.shape
