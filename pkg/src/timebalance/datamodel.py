"""Video containers, labeled/unlabeled splits, clip sampling and augmentation.

On-disk format (``.tbv``), one file per video::

    offset  size  field
    0       4     magic b"TBV1"
    4       4     T   (u32, little-endian)
    8       4     H   (u32)
    12      4     W   (u32)
    16      4     Ch  (u32)
    20      4     dtype code (u32, 1 = float32)
    24      8     reserved, zero
    32      ...   frames, row-major [T, H, W, Ch] float32 little-endian

Corpus layout is ``<root>/<class_name>/<video_id>.tbv``; the class index is the
lexicographic rank of ``class_name``. An optional ``<root>/manifest.csv`` written
by :mod:`timebalance.synthgen` supplies the atomic/composite kind of each video.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError, SamplingError

logger = logging.getLogger(__name__)

MAGIC = b"TBV1"
HEADER_SIZE = 32
DTYPE_FLOAT32 = 1
_HEADER = struct.Struct("<4s5I8x")

KINDS = ("atomic", "composite")


@dataclass
class VideoInstance:
    id: str
    frames: np.ndarray  # [T, H, W, Ch] float32 in [0, 1]
    label: Optional[int] = None
    kind: Optional[str] = None

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise DataError(f"{self.id}: frames must be [T, H, W, Ch], got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError(f"{self.id}: non-finite frame values")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise DataError(f"{self.id}: frame values outside [0, 1]")
        if self.kind is not None and self.kind not in KINDS:
            raise DataError(f"{self.id}: unknown kind {self.kind!r}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def unlabeled(self) -> "VideoInstance":
        return VideoInstance(self.id, self.frames, None, self.kind)


@dataclass
class ClipSet:
    video_id: str
    clips: list  # n arrays [F, H, W, Ch]
    timestamps: list  # start frame of each clip

    def __len__(self):
        return len(self.clips)


@dataclass(frozen=True)
class AugmentSpec:
    """Stochastic clip transform. All-zero probabilities and ``crop=False`` is the identity.

    ``brightness``/``contrast``/``saturation`` are maximum relative deviations: a
    factor is drawn uniformly from ``[1 - x, 1 + x]`` once per clip.
    """

    crop: bool = False
    crop_size: Optional[tuple] = None  # output (H', W'); None keeps the input size
    crop_scale: tuple = (0.5, 1.0)  # fraction of the frame area kept
    horizontal_flip: float = 0.0
    grayscale: float = 0.0
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    seed: int = 0

    def with_seed(self, seed: int) -> "AugmentSpec":
        return replace(self, seed=int(seed))


# Self-supervised pretraining. Heavy grayscale removes per-video hue, otherwise
# the easiest cue for telling videos apart.
PRETRAIN_AUGMENT = AugmentSpec(
    crop=True, crop_scale=(0.6, 1.0), horizontal_flip=0.5, grayscale=0.8,
    brightness=0.4, contrast=0.4, saturation=0.4,
)

# Supervised and semi-supervised stages: mild crops, no flips (a flip reverses
# the direction of motion, which some classes are defined by).
FINETUNE_AUGMENT = AugmentSpec(
    crop=True, crop_scale=(0.8, 1.0), brightness=0.2, contrast=0.2, saturation=0.2,
)


# --------------------------------------------------------------------------- #
# container I/O

def write_video(path, frames: np.ndarray) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 4:
        raise DataError(f"{path}: frames must be 4-D, got {frames.shape}")
    T, H, W, Ch = frames.shape
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, T, H, W, Ch, DTYPE_FLOAT32))
            fh.write(frames.tobytes(order="C"))
    except OSError as exc:
        raise DataError(f"{path}: write failed ({exc})") from exc


def read_video(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: read failed ({exc})") from exc
    if len(raw) < HEADER_SIZE:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, T, H, W, Ch, dtype = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if dtype != DTYPE_FLOAT32:
        raise DataError(f"{path}: unsupported dtype code {dtype}")
    expected = T * H * W * Ch * 4
    if len(raw) - HEADER_SIZE != expected:
        raise DataError(f"{path}: payload is {len(raw) - HEADER_SIZE} bytes, header implies {expected}")
    frames = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(T, H, W, Ch)
    return frames.astype(np.float32)


def read_manifest(root) -> dict:
    """``video_id -> kind`` from ``<root>/manifest.csv``; empty if absent."""
    path = Path(root) / "manifest.csv"
    if not path.exists():
        return {}
    with open(path, newline="") as fh:
        return {row["video_id"]: (row.get("kind") or None) for row in csv.DictReader(fh)}


def class_names(root) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset root is not a directory")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def load_videos(root, min_frames: int = 0) -> list:
    """Every video under ``root`` with its label, in (class, id) order.

    Videos shorter than ``min_frames`` are rejected with a warning.
    """
    root = Path(root)
    kinds = read_manifest(root)
    videos = []
    seen = set()
    for label, name in enumerate(class_names(root)):
        for path in sorted((root / name).glob("*.tbv")):
            vid = path.stem
            if vid in seen:
                raise DataError(f"{path}: duplicate video id {vid!r}")
            seen.add(vid)
            frames = read_video(path)
            if frames.shape[0] < min_frames:
                logger.warning("skipping %s: %d frames < %d", path, frames.shape[0], min_frames)
                continue
            try:
                videos.append(VideoInstance(vid, frames, label, kinds.get(vid)))
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from exc
    return videos


def stratified_split(videos: Sequence[VideoInstance], labeled_fraction: float, seed: int):
    """Split labeled videos into (labeled, unlabeled) with per-class quotas.

    The total labeled count is ``round(fraction * N)``, shared out over classes by
    largest remainder so per-class counts differ from the exact proportion by < 1.
    """
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    by_class: dict = {}
    for v in videos:
        by_class.setdefault(v.label, []).append(v)
    classes = sorted(by_class)
    exact = {c: labeled_fraction * len(by_class[c]) for c in classes}
    quota = {c: int(np.floor(exact[c] + 1e-9)) for c in classes}
    total = int(round(labeled_fraction * len(videos)))
    leftover = total - sum(quota.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))[:max(leftover, 0)]:
        quota[c] += 1

    rng = np.random.default_rng(seed)
    labeled_ids = set()
    for c in classes:
        members = sorted(by_class[c], key=lambda v: v.id)
        order = rng.permutation(len(members))
        labeled_ids.update(members[k].id for k in order[: quota[c]])
    labeled = [v for v in videos if v.id in labeled_ids]
    unlabeled = [v.unlabeled() for v in videos if v.id not in labeled_ids]
    return labeled, unlabeled


def load_dataset(root, labeled_fraction: float = 0.1, seed: int = 0, min_frames: int = 0):
    """Load ``root`` and return ``(labeled_set, unlabeled_set)``."""
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    videos = load_videos(root, min_frames=min_frames)
    if not videos:
        raise DataError(f"{root}: no videos found")
    return stratified_split(videos, labeled_fraction, seed)


def write_split_manifest(path, labeled, unlabeled) -> None:
    with open(path, "w") as fh:
        for v in labeled:
            fh.write(f"{v.id},labeled\n")
        for v in unlabeled:
            fh.write(f"{v.id},unlabeled\n")


# --------------------------------------------------------------------------- #
# clip sampling

def clip_starts(T: int, n: int, F: int, start_policy="fixed", start: int = 0, seed: int = 0) -> list:
    if T < n * F:
        raise SamplingError(f"video has {T} frames, need n*F = {n}*{F} = {n * F}")
    if start_policy == "fixed":
        if start < 0 or start + n * F > T:
            raise SamplingError(f"fixed start {start} leaves no room for {n} clips of {F} frames in {T}")
        s = start
    elif start_policy == "uniform_random":
        s = int(np.random.default_rng(seed).integers(0, T - n * F + 1))
    else:
        raise ValueError(f"unknown start_policy {start_policy!r}")
    return [s + t * F for t in range(n)]


def sample_consecutive_clips(video: VideoInstance, n: int = 4, F: int = 8,
                             start_policy: str = "fixed", start: int = 0, seed: int = 0) -> ClipSet:
    """n contiguous, non-overlapping windows of F frames."""
    starts = clip_starts(video.num_frames, n, F, start_policy, start, seed)
    clips = [video.frames[s:s + F] for s in starts]
    return ClipSet(video.id, clips, starts)


# --------------------------------------------------------------------------- #
# augmentation

def resize_frames(frames: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of ``[F, h, w, Ch]`` to ``[F, size[0], size[1], Ch]``."""
    if tuple(frames.shape[1:3]) == tuple(size):
        return frames
    x = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    y = F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)
    return y.permute(0, 2, 3, 1).contiguous().numpy()


def center_crop_resize(frames: np.ndarray, rel: float, size=None) -> np.ndarray:
    _, H, W, _ = frames.shape
    size = size or (H, W)
    ch, cw = max(1, int(round(rel * H))), max(1, int(round(rel * W)))
    top, left = (H - ch) // 2, (W - cw) // 2
    return resize_frames(frames[:, top:top + ch, left:left + cw], size)


def _gray(x):
    return (0.299 * x[..., 0:1] + 0.587 * x[..., 1:2] + 0.114 * x[..., 2:3]).astype(np.float32)


def augment(clip: np.ndarray, spec: AugmentSpec) -> np.ndarray:
    """Crop → flip → color jitter → grayscale, with one draw per clip (temporally consistent)."""
    rng = np.random.default_rng(spec.seed)
    out = np.asarray(clip, dtype=np.float32)
    _, H, W, Ch = out.shape

    if spec.crop:
        size = tuple(spec.crop_size) if spec.crop_size else (H, W)
        lo, hi = spec.crop_scale
        side = float(np.sqrt(rng.uniform(lo, hi)))
        ch, cw = max(1, int(round(side * H))), max(1, int(round(side * W)))
        top = int(rng.integers(0, H - ch + 1))
        left = int(rng.integers(0, W - cw + 1))
        out = resize_frames(out[:, top:top + ch, left:left + cw], size)

    if spec.horizontal_flip > 0 and rng.random() < spec.horizontal_flip:
        out = out[:, :, ::-1]

    if Ch == 3:
        if spec.brightness > 0:
            out = out * rng.uniform(1 - spec.brightness, 1 + spec.brightness)
        if spec.contrast > 0:
            factor = rng.uniform(1 - spec.contrast, 1 + spec.contrast)
            mean = _gray(out).mean()
            out = (out - mean) * factor + mean
        if spec.saturation > 0:
            factor = rng.uniform(1 - spec.saturation, 1 + spec.saturation)
            g = _gray(out)
            out = (out - g) * factor + g
        if spec.grayscale > 0 and rng.random() < spec.grayscale:
            out = np.repeat(_gray(out), 3, axis=-1)

    out = np.clip(out, 0.0, 1.0)

    return np.ascontiguousarray(out, dtype=np.float32)
