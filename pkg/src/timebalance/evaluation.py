"""Video-level inference, accuracy reports and per-class accuracy deltas."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datamodel import center_crop_resize
from .encoder import classify, encode_clip
from .errors import ContractError, SamplingError

SCALES = (1.0, 0.875, 0.75)


@dataclass(frozen=True)
class EvalProtocol:
    num_clips: int = 10
    scales: int = 3
    F: int = 8

    def __post_init__(self):
        if self.num_clips < 1:
            raise ContractError("num_clips must be >= 1")
        if not 1 <= self.scales <= len(SCALES):
            raise ContractError(f"scales must be in 1..{len(SCALES)}")
        if self.F < 1:
            raise ContractError("F must be >= 1")


def eval_clip_starts(T: int, F: int, num_clips: int) -> list:
    """Uniformly spaced starts floor(k (T - F) / (num_clips - 1)); a single clip starts at 0."""
    if T < F:
        raise SamplingError(f"video has {T} frames, fewer than one clip of {F}")
    if num_clips == 1:
        return [0]
    return [k * (T - F) // (num_clips - 1) for k in range(num_clips)]


@torch.no_grad()
def predict_video(weights, video, num_clips=10, scales=3, F=8) -> np.ndarray:
    """Mean softmax over ``num_clips`` clips times the first ``scales`` center-crop sizes."""
    protocol = EvalProtocol(num_clips, scales, F)
    frames = video.frames if hasattr(video, "frames") else np.asarray(video)
    starts = eval_clip_starts(frames.shape[0], F, num_clips)
    views = [center_crop_resize(frames[s:s + F], rel, frames.shape[1:3])
             for s in starts for rel in SCALES[:protocol.scales]]
    was_training = weights.training
    weights.eval()
    try:
        probs = classify(weights, encode_clip(weights, np.stack(views)).pooled)
    finally:
        weights.train(was_training)
    return probs.mean(dim=0).double().numpy()


@dataclass
class EvalReport:
    top1: float
    per_class: dict  # class -> accuracy
    num_videos: int
    protocol: dict
    class_counts: dict = field(default_factory=dict)


def argmax_lowest(p) -> int:
    """Index of the maximum; ties go to the lowest index (numpy's argmax already does this)."""
    return int(np.argmax(np.asarray(p)))


def report_from_predictions(probs, labels, class_names=None, protocol=None) -> EvalReport:
    """Build a report from per-video probability vectors ``probs [N, C]`` and true ``labels``."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=int)
    if probs.shape[0] == 0:
        raise ContractError("cannot evaluate an empty test set")
    pred = np.array([argmax_lowest(p) for p in probs])
    key = (lambda c: class_names[c]) if class_names is not None else int
    per_class, counts = {}, {}
    for c in sorted(set(labels.tolist())):
        mask = labels == c
        per_class[key(c)] = float(np.mean(pred[mask] == c))
        counts[key(c)] = int(mask.sum())
    top1 = float(np.mean(pred == labels))
    proto = {"num_clips": protocol.num_clips, "num_scales": protocol.scales} if protocol else {}
    return EvalReport(top1, per_class, int(len(labels)), proto, counts)


def evaluate(weights, test_set, protocol: EvalProtocol = EvalProtocol(), class_names=None) -> EvalReport:
    if not test_set:
        raise ContractError("cannot evaluate an empty test set")
    probs = [predict_video(weights, v, protocol.num_clips, protocol.scales, protocol.F) for v in test_set]
    return report_from_predictions(probs, [v.label for v in test_set], class_names, protocol)


def classwise_delta(report_distinctive: EvalReport, report_invariant: EvalReport, k=None) -> list:
    """``(class, acc_D - acc_I)`` sorted by descending delta (ties by class).

    With ``k`` only the top-k and bottom-k entries are returned (all of them if 2k
    covers every class).
    """
    a, b = report_distinctive.per_class, report_invariant.per_class
    if set(a) != set(b):
        raise ContractError(f"class sets differ: {sorted(set(a) ^ set(b), key=str)}")
    deltas = sorted(((c, a[c] - b[c]) for c in a), key=lambda cd: (-cd[1], str(cd[0])))
    if k is None or 2 * k >= len(deltas):
        return deltas
    return deltas[:k] + deltas[-k:]


def write_delta_csv(deltas, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "class", "delta"])
        for rank, (c, d) in enumerate(deltas):
            w.writerow([rank, c, repr(float(d))])


def write_report(report: EvalReport, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "videos", "accuracy"])
        for c, acc in report.per_class.items():
            w.writerow([c, report.class_counts.get(c, ""), repr(acc)])
        w.writerow(["__top1__", report.num_videos, repr(report.top1)])


def read_report(path) -> EvalReport:
    """Inverse of :func:`write_report` (protocol details are not stored)."""
    per_class, counts, top1, total = {}, {}, None, None
    try:
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        for name, videos, acc in rows[1:]:
            if name == "__top1__":
                top1, total = float(acc), int(videos)
            else:
                per_class[name] = float(acc)
                counts[name] = int(videos) if videos else 0
    except (OSError, ValueError) as exc:
        raise ContractError(f"{path}: unreadable report ({exc})") from exc
    if top1 is None:
        raise ContractError(f"{path}: missing __top1__ row")
    return EvalReport(top1, per_class, total, {}, counts)
