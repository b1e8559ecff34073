"""Synthetic action corpus with atomic and composite classes.

Atomic classes repeat one motion primitive with a short period, so every clip of
a video looks alike. Composite classes play ``NUM_PHASES`` different primitives
one after another; each primitive changes the actor's state (position, angle,
size) and the change carries over into the following phases. A composite class is
identified by the order of its phases.

Each atomic class has its own shape. Every video draws its own color, start
position, size and orientation (plus a shape for composite videos and a phase
offset for atomic ones).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datamodel import VideoInstance, write_video
from .errors import DataError

NUM_PHASES = 4

ATOMIC_MOTIONS = ("sway", "bob", "pulse", "spin", "flicker")
_ATOMIC_PERIOD = {"sway": 8, "bob": 8, "pulse": 4, "spin": 8, "flicker": 4}

PRIMITIVES = ("run", "lift", "turn", "grow")
_LEAD_ORDERS = [
    ("run", "lift", "turn", "grow"),
    ("grow", "turn", "lift", "run"),
    ("lift", "run", "grow", "turn"),
    ("turn", "grow", "run", "lift"),
    ("run", "grow", "lift", "turn"),
]
COMPOSITE_ORDERS = _LEAD_ORDERS + [p for p in itertools.permutations(PRIMITIVES) if p not in _LEAD_ORDERS]

SHAPES = ("bar", "triangle", "ell", "cross", "disk", "ring")
# atomic class k draws shape ATOMIC_SHAPES[k % 5]; composite videos draw any shape
ATOMIC_SHAPES = ("disk", "ring", "cross", "triangle", "ell")


@dataclass(frozen=True)
class SynthSpec:
    num_classes_atomic: int = 5
    num_classes_composite: int = 5
    videos_per_class: int = 20
    T: int = 64
    H: int = 32
    W: int = 32
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.num_classes_atomic + self.num_classes_composite < 2:
            raise ValueError("need at least two classes")
        if self.num_classes_atomic < 0 or self.num_classes_composite < 0:
            raise ValueError("class counts must be non-negative")
        if self.num_classes_atomic > 2 * len(ATOMIC_MOTIONS):
            raise ValueError(f"at most {2 * len(ATOMIC_MOTIONS)} atomic classes")
        if self.num_classes_composite > len(COMPOSITE_ORDERS):
            raise ValueError(f"at most {len(COMPOSITE_ORDERS)} composite classes")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.T % NUM_PHASES:
            raise ValueError(f"T must be a multiple of {NUM_PHASES}")
        if self.T % 8:
            raise ValueError("T must be a multiple of 8 so every atomic period divides it")

    @property
    def num_classes(self) -> int:
        return self.num_classes_atomic + self.num_classes_composite


def atomic_motion(class_id: int):
    """``(motion, period)`` of atomic class ``class_id``; later classes reuse motions at faster periods."""
    motion = ATOMIC_MOTIONS[class_id % len(ATOMIC_MOTIONS)]
    period = _ATOMIC_PERIOD[motion] >> (class_id // len(ATOMIC_MOTIONS))
    return motion, max(period, 2)


def composite_order(class_id: int, spec: SynthSpec) -> tuple:
    return COMPOSITE_ORDERS[class_id - spec.num_classes_atomic]


def class_name(class_id: int, spec: SynthSpec) -> str:
    if class_id < spec.num_classes_atomic:
        motion, period = atomic_motion(class_id)
        return f"atomic_{class_id:02d}_{motion}{period}"
    k = class_id - spec.num_classes_atomic
    return f"composite_{k:02d}_" + "-".join(composite_order(class_id, spec))


def class_kind(class_id: int, spec: SynthSpec) -> str:
    return "atomic" if class_id < spec.num_classes_atomic else "composite"


# --------------------------------------------------------------------------- #
# rendering

def _shape_sdf(kind, u, v):
    """Signed distance (in actor units, negative inside) of a unit-size shape."""
    if kind == "bar":
        return np.maximum(np.abs(u) - 1.0, np.abs(v) - 0.35)
    if kind == "triangle":
        # apex at +u; base at u = -0.8
        e1 = (np.abs(v) * 0.9 + (u - 1.0) * 0.45) / math.hypot(0.9, 0.45)
        return np.maximum(e1, -0.8 - u)
    if kind == "cross":
        arm1 = np.maximum(np.abs(u) - 1.0, np.abs(v) - 0.3)
        arm2 = np.maximum(np.abs(u) - 0.3, np.abs(v) - 1.0)
        return np.minimum(arm1, arm2)
    if kind == "disk":
        return np.hypot(u, v) - 0.9
    if kind == "ring":
        return np.abs(np.hypot(u, v) - 0.75) - 0.25
    if kind == "ell":
        arm1 = np.maximum(np.abs(u) - 1.0, np.abs(v + 0.65) - 0.35)
        arm2 = np.maximum(np.abs(u + 0.65) - 0.35, np.abs(v) - 1.0)
        return np.minimum(arm1, arm2)
    raise ValueError(kind)


def render_frame(H, W, shape, color, cx, cy, angle, size, brightness):
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = xs + 0.5 - cx, ys + 0.5 - cy
    c, s = math.cos(angle), math.sin(angle)
    u = (c * dx + s * dy) / size
    v = (-s * dx + c * dy) / size
    alpha = np.clip(0.5 - _shape_sdf(shape, u, v) * size, 0.0, 1.0)
    return alpha[..., None] * (brightness * np.asarray(color))[None, None, :]


def _nuisance(rng, spec: SynthSpec, shape=None):
    hue = rng.uniform(0, 2 * math.pi)
    color = 0.6 + 0.35 * np.cos(hue + np.array([0.0, 2.1, 4.2]))
    drawn = SHAPES[int(rng.integers(len(SHAPES)))]
    return dict(
        shape=shape or drawn,
        color=np.clip(color, 0.2, 1.0),
        size=float(rng.uniform(5.0, 6.5)),
        angle=float(rng.uniform(0, math.pi)),
        dx=float(rng.uniform(-2, 2)),
        dy=float(rng.uniform(-2, 2)),
    )


def _finish(frames, rng, spec):
    if spec.noise_std > 0:
        frames = frames + rng.normal(0.0, spec.noise_std, size=frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _rng(spec: SynthSpec, class_id: int, seed: int):
    return np.random.default_rng([spec.seed, class_id, seed])


def gen_atomic(class_id: int, seed: int, spec: SynthSpec, video_id=None) -> VideoInstance:
    """Periodic motion: ``frames[t] == frames[t + period]`` exactly when noise is off."""
    if not 0 <= class_id < spec.num_classes_atomic:
        raise ValueError(f"class {class_id} is not atomic")
    rng = _rng(spec, class_id, seed)
    motion, period = atomic_motion(class_id)
    nz = _nuisance(rng, spec, shape=ATOMIC_SHAPES[class_id % len(ATOMIC_SHAPES)])
    phase = int(rng.integers(period))
    cx0, cy0 = spec.W / 2 + nz["dx"], spec.H / 2 + nz["dy"]

    one_period = []
    for k in range(period):
        w = 2 * math.pi * ((k + phase) % period) / period
        cx, cy, angle, size, bright = cx0, cy0, nz["angle"], nz["size"], 1.0
        if motion == "sway":
            cx = cx0 + 6.0 * math.sin(w)
        elif motion == "bob":
            cy = cy0 + 6.0 * math.sin(w)
        elif motion == "pulse":
            size = nz["size"] * (1.0 + 0.4 * math.sin(w))
        elif motion == "spin":
            angle = nz["angle"] + w
        elif motion == "flicker":
            bright = 0.55 + 0.45 * math.cos(w)
        one_period.append(render_frame(spec.H, spec.W, nz["shape"], nz["color"], cx, cy, angle, size, bright))
    clean = np.stack([one_period[t % period] for t in range(spec.T)])
    frames = _finish(clean, rng, spec)
    vid = video_id or f"{class_name(class_id, spec)}_{seed:04d}"
    return VideoInstance(vid, frames, class_id, "atomic")


def gen_composite(class_id: int, seed: int, spec: SynthSpec, video_id=None) -> VideoInstance:
    """Ordered sub-actions, one per ``T / NUM_PHASES`` frames; state carries across phases."""
    if not spec.num_classes_atomic <= class_id < spec.num_classes:
        raise ValueError(f"class {class_id} is not composite")
    rng = _rng(spec, class_id, seed)
    order = composite_order(class_id, spec)
    nz = _nuisance(rng, spec)
    L = spec.T // NUM_PHASES

    # start left and low so "run" (rightward) and "lift" (upward) stay in frame
    state = dict(cx=spec.W / 2 - 6.0 + nz["dx"], cy=spec.H / 2 + 5.0 + nz["dy"],
                 angle=nz["angle"], size=nz["size"] * 0.8)
    frames = []
    for prim in order:
        start = dict(state)
        for k in range(L):
            u = (k + 1) / L
            cur = dict(start)
            if prim == "run":
                cur["cx"] = start["cx"] + 12.0 * u
            elif prim == "lift":
                cur["cy"] = start["cy"] - 10.0 * u
            elif prim == "turn":
                cur["angle"] = start["angle"] + 0.5 * math.pi * u
            elif prim == "grow":
                cur["size"] = start["size"] * (1.0 + 0.6 * u)
            frames.append(render_frame(spec.H, spec.W, nz["shape"], nz["color"],
                                       cur["cx"], cur["cy"], cur["angle"], cur["size"], 1.0))
            state = cur
    frames = _finish(np.stack(frames), rng, spec)
    vid = video_id or f"{class_name(class_id, spec)}_{seed:04d}"
    return VideoInstance(vid, frames, class_id, "composite")


def gen_video(class_id: int, seed: int, spec: SynthSpec) -> VideoInstance:
    if class_id < spec.num_classes_atomic:
        return gen_atomic(class_id, seed, spec)
    return gen_composite(class_id, seed, spec)


def gen_corpus(spec: SynthSpec, video_offset: int = 0) -> list:
    """All videos of ``spec`` in memory, class-major order.

    ``video_offset`` shifts the per-video seeds, giving a disjoint draw (e.g. a test set).
    """
    return [gen_video(c, video_offset + k, spec)
            for c in range(spec.num_classes) for k in range(spec.videos_per_class)]


def gen_benchmark(spec: SynthSpec, out_root, video_offset: int = 0) -> list:
    """Write the corpus as ``<out_root>/<class_name>/<video_id>.tbv`` plus ``manifest.csv``."""
    out_root = Path(out_root)
    try:
        out_root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out_root}: cannot create output directory ({exc})") from exc
    rows = []
    for c in range(spec.num_classes):
        cdir = out_root / class_name(c, spec)
        try:
            cdir.mkdir(exist_ok=True)
        except OSError as exc:
            raise DataError(f"{cdir}: cannot create class directory ({exc})") from exc
        for k in range(spec.videos_per_class):
            video = gen_video(c, video_offset + k, spec)
            write_video(cdir / f"{video.id}.tbv", video.frames)
            rows.append((video.id, class_name(c, spec), c, video.kind))
    with open(out_root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "class_name", "label", "kind"])
        writer.writerows(rows)
    return rows


def spec_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
