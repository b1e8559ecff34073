"""Staged training: teacher pretraining, teacher finetuning, student distillation."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import losses
from .balance import DEFAULT_SCORE, combine_teachers, lookup_score
from .datamodel import FINETUNE_AUGMENT, PRETRAIN_AUGMENT, AugmentSpec, augment, clip_starts
from .encoder import VideoEncoder, build_encoder, encode_clip, project, temporal_slices, weights_hash
from .errors import CheckpointError, ConfigError, NumericalError

logger = logging.getLogger(__name__)

STAGES = ("pretrain_invariant", "pretrain_distinctive", "finetune_teacher", "train_student")
WEIGHTINGS = ("tstr", "uniform", "invariant", "distinctive")

# desk-scale defaults used when a config leaves epochs / F at 0
STAGE_EPOCHS = {"pretrain_invariant": 30, "pretrain_distinctive": 30, "finetune_teacher": 60, "train_student": 30}
STAGE_CLIP_LEN = {"pretrain_invariant": 16, "pretrain_distinctive": 16, "finetune_teacher": 8, "train_student": 8}
# the classifier is freshly initialized when finetuning; it learns faster than the pretrained backbone
STAGE_HEAD_LR_SCALE = {"pretrain_invariant": 1.0, "pretrain_distinctive": 1.0,
                       "finetune_teacher": 10.0, "train_student": 10.0}
# a slow backbone keeps each teacher's self-supervised character through finetuning
STAGE_BACKBONE_LR_SCALE = {"pretrain_invariant": 1.0, "pretrain_distinctive": 1.0,
                           "finetune_teacher": 0.1, "train_student": 1.0}


@dataclass
class TrainConfig:
    stage: str = "train_student"
    epochs: int = 0  # 0: stage default
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_epochs: int = 10
    patience: int = 3
    plateau_threshold: float = 1e-3
    head_lr_scale: float = 0.0  # head lr = base_lr * scale; 0: stage default
    backbone_lr_scale: float = 0.0  # backbone lr = base_lr * scale; 0: stage default
    omega: float = 1.0
    tau: float = 0.1
    n: int = 4
    F: int = 0  # 0: stage default (16 for pretraining, 8 otherwise)
    seed: int = 0
    labeled_fraction: float = 0.1
    labeled_ratio: float = 0.5  # labeled share of each student batch
    distill: str = "l2"
    teacher_weighting: str = "tstr"
    student_init: str = "ssl"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 0 or self.F < 0:
            raise ConfigError("epochs and F must be >= 0")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        if self.epochs and self.epochs < self.warmup_epochs:
            raise ConfigError(f"epochs ({self.epochs}) < warmup_epochs ({self.warmup_epochs})")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be > 0")
        if self.head_lr_scale < 0 or self.backbone_lr_scale < 0:
            raise ConfigError("head_lr_scale and backbone_lr_scale must be >= 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.omega < 0:
            raise ConfigError("omega must be >= 0")
        if not self.tau > 0:
            raise ConfigError("tau must be > 0")
        if self.n < 1 or self.batch_size < 1:
            raise ConfigError("n and batch_size must be >= 1")
        if not 0 < self.labeled_fraction <= 1:
            raise ConfigError("labeled_fraction must be in (0, 1]")
        if not 0 < self.labeled_ratio <= 1:
            raise ConfigError("labeled_ratio must be in (0, 1]")
        if self.distill not in losses.DIVERGENCES:
            raise ConfigError(f"distill must be one of {losses.DIVERGENCES}")
        if self.teacher_weighting not in WEIGHTINGS:
            raise ConfigError(f"teacher_weighting must be one of {WEIGHTINGS}")
        if self.student_init not in ("ssl", "random"):
            raise ConfigError("student_init must be 'ssl' or 'random'")

    @property
    def num_epochs(self) -> int:
        return self.epochs or STAGE_EPOCHS[self.stage]

    @property
    def head_scale(self) -> float:
        return self.head_lr_scale or STAGE_HEAD_LR_SCALE[self.stage]

    @property
    def backbone_scale(self) -> float:
        return self.backbone_lr_scale or STAGE_BACKBONE_LR_SCALE[self.stage]

    @property
    def clip_len(self) -> int:
        return self.F or STAGE_CLIP_LEN[self.stage]

    def for_stage(self, stage, **overrides) -> "TrainConfig":
        return replace(self, stage=stage, **overrides)


# --------------------------------------------------------------------------- #
# optimizer and schedule

class WarmupPlateau:
    """Linear warmup over epochs 1..warmup, then halve the rate after ``patience``
    post-warmup epochs without a relative loss improvement of ``threshold``."""

    def __init__(self, base_lr, warmup_epochs=10, patience=3, threshold=1e-3, factor=0.5):
        self.base_lr = base_lr
        self.warmup_epochs = warmup_epochs
        self.patience = patience
        self.threshold = threshold
        self.factor = factor
        self.plateau_lr = base_lr
        self.best = math.inf
        self.bad_epochs = 0

    def lr_at(self, epoch: int) -> float:
        if epoch <= self.warmup_epochs:
            return self.base_lr * epoch / self.warmup_epochs
        return self.plateau_lr

    def end_epoch(self, epoch: int, loss: float) -> None:
        if epoch <= self.warmup_epochs:
            return
        if math.isinf(self.best) or loss < self.best - abs(self.best) * self.threshold:
            self.best = loss
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.plateau_lr *= self.factor
            self.bad_epochs = 0

    def state(self) -> dict:
        return {k: getattr(self, k) for k in
                ("base_lr", "warmup_epochs", "patience", "threshold", "factor", "plateau_lr", "best", "bad_epochs")}

    @classmethod
    def from_state(cls, st: dict) -> "WarmupPlateau":
        sched = cls(st["base_lr"], st["warmup_epochs"], st["patience"], st["threshold"], st["factor"])
        sched.plateau_lr, sched.best, sched.bad_epochs = st["plateau_lr"], st["best"], st["bad_epochs"]
        return sched


class OptimizerState:
    """Adam (beta1 0.9, beta2 0.999, eps 1e-8) over named parameters plus the epoch schedule."""

    def __init__(self, named_params, schedule: WarmupPlateau, head_lr_scale=1.0, backbone_lr_scale=1.0):
        self.names = [name for name, _ in named_params]
        self.params = [p for _, p in named_params]
        self.schedule = schedule
        self.head_lr_scale = head_lr_scale
        self.backbone_lr_scale = backbone_lr_scale
        backbone = [p for n, p in named_params if n.startswith("backbone.")]
        heads = [p for n, p in named_params if not n.startswith("backbone.")]
        groups = [{"params": ps, "scale": sc} for ps, sc in ((backbone, backbone_lr_scale), (heads, head_lr_scale)) if ps]
        self.adam = torch.optim.Adam(groups, lr=schedule.base_lr, betas=(0.9, 0.999), eps=1e-8)
        self.lr = schedule.base_lr
        self.epoch = 0

    def _apply_lr(self, lr):
        self.lr = lr
        for g in self.adam.param_groups:
            g["lr"] = lr * g["scale"]

    def start_epoch(self, epoch: int) -> float:
        self.epoch = epoch
        lr = self.schedule.lr_at(epoch)
        self._apply_lr(lr)
        return lr

    def end_epoch(self, loss: float) -> None:
        self.schedule.end_epoch(self.epoch, loss)

    def zero_grad(self):
        self.adam.zero_grad(set_to_none=True)

    def step(self):
        self.adam.step()


def trainable(model: VideoEncoder, freeze_projector=False):
    return [(n, p) for n, p in model.named_parameters()
            if not (freeze_projector and n.startswith("projector."))]


def make_optimizer(config: TrainConfig, named_params) -> OptimizerState:
    sched = WarmupPlateau(config.base_lr, config.warmup_epochs, config.patience, config.plateau_threshold)
    return OptimizerState(list(named_params), sched, config.head_scale, config.backbone_scale)


# --------------------------------------------------------------------------- #
# checkpoints
#
#   b"TBCK" | u32 version | u32 header length | header (UTF-8 JSON, sorted keys)
#   | tensor blobs in header order, little-endian | 32-byte SHA-256 of all preceding bytes
#
# Header: role, architecture, "tensors" [{name, dtype, shape}] for the model state
# in declaration order, then "optimizer" (schedule state, epoch, Adam moments per
# named parameter) or null. float32 for weights and moments, int64 for counters.

CKPT_MAGIC = b"TBCK"
CKPT_VERSION = 1
_DTYPES = {"float32": (torch.float32, "<f4"), "int64": (torch.int64, "<i8")}


def _dtype_name(t):
    if t.dtype == torch.float32:
        return "float32"
    if t.dtype == torch.int64:
        return "int64"
    raise CheckpointError(f"unsupported tensor dtype {t.dtype}")


def _blob(t):
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=_DTYPES[_dtype_name(t)][1]).tobytes()


def save_checkpoint(model: VideoEncoder, opt: OptimizerState | None, path) -> str:
    """Write ``model`` (and optionally ``opt``); returns the content hash."""
    tensors, blobs = [], []
    for name, t in model.state_dict().items():
        tensors.append({"name": name, "dtype": _dtype_name(t), "shape": list(t.shape)})
        blobs.append(_blob(t))
    header = {
        "format": "timebalance-checkpoint",
        "role": model.role,
        "lineage": model.lineage,
        "num_classes": model.num_classes,
        "feature_dim": model.feature_dim,
        "embed_dim": model.embed_dim,
        "in_channels": model.backbone[0][0].in_channels,
        "widths": [model.backbone[i][0].out_channels for i in range(3)],
        "tensors": tensors,
        "optimizer": None,
    }
    if opt is not None:
        moments = []
        for name, p in zip(opt.names, opt.params):
            st = opt.adam.state.get(p)
            if not st:
                continue
            step = float(st["step"])
            for key in ("exp_avg", "exp_avg_sq"):
                moments.append({"param": name, "key": key, "dtype": "float32", "shape": list(st[key].shape)})
                blobs.append(_blob(st[key]))
            moments[-1]["step"] = step
            moments[-2]["step"] = step
        header["optimizer"] = {
            "params": opt.names,
            "lr": opt.lr,
            "head_lr_scale": opt.head_lr_scale,
            "backbone_lr_scale": opt.backbone_lr_scale,
            "epoch": opt.epoch,
            "schedule": opt.schedule.state(),
            "moments": moments,
        }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)
    return digest.hex()


def _read_tensor(raw, offset, spec):
    tdtype, npdtype = _DTYPES[spec["dtype"]]
    count = int(np.prod(spec["shape"])) if spec["shape"] else 1
    nbytes = count * np.dtype(npdtype).itemsize
    if offset + nbytes > len(raw):
        raise CheckpointError("checkpoint payload truncated")
    arr = np.frombuffer(raw, dtype=npdtype, count=count, offset=offset).reshape(spec["shape"])
    return torch.from_numpy(arr.astype(npdtype, copy=True)).to(tdtype), offset + nbytes


def load_checkpoint(path):
    """Returns ``(model, optimizer_state_or_None)``. Raises :class:`CheckpointError` on any corruption."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 + 32 or raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint or truncated")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: content hash mismatch (corrupt or truncated)")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    try:
        header = json.loads(body[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc

    model = VideoEncoder(header["num_classes"], header["feature_dim"], header["embed_dim"],
                         header["in_channels"], header["role"], tuple(header["widths"]))
    model.lineage = header.get("lineage")
    offset = 12 + hlen
    state = {}
    for spec in header["tensors"]:
        state[spec["name"]], offset = _read_tensor(body, offset, spec)
    model.load_state_dict(state)

    opt = None
    oh = header["optimizer"]
    if oh is not None:
        named = dict(model.named_parameters())
        opt = OptimizerState([(n, named[n]) for n in oh["params"]], WarmupPlateau.from_state(oh["schedule"]),
                             oh["head_lr_scale"], oh.get("backbone_lr_scale", 1.0))
        opt.epoch = oh["epoch"]
        opt._apply_lr(oh["lr"])
        for spec in oh["moments"]:
            t, offset = _read_tensor(body, offset, spec)
            st = opt.adam.state[named[spec["param"]]]
            st[spec["key"]] = t
            st["step"] = torch.tensor(spec["step"], dtype=torch.float32)
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} unexpected trailing bytes")
    return model, opt


# --------------------------------------------------------------------------- #
# training loops

def _seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class MetricsLog:
    """One JSON object per line; nothing time-dependent so reruns compare byte-for-byte."""

    def __init__(self, path=None, records=None, **context):
        self.path = Path(path) if path else None
        self.records = [] if records is None else records
        self.context = context

    def bind(self, **context) -> "MetricsLog":
        """A view writing to the same file and list that adds ``context`` to every record."""
        return MetricsLog(self.path, self.records, **{**self.context, **context})

    def append(self, record: dict):
        record = {k: (round(v, 10) if isinstance(v, float) else v) for k, v in {**self.context, **record}.items()}
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        logger.info("%s", record)


def _check_finite(loss, stage, ids):
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite {stage} loss ({loss.item()}) on batch {list(ids)}")


def _clips(video, n, F, seed, epoch, vindex, view, aug: AugmentSpec, start=None):
    """n consecutive clips (random start unless given), each augmented independently."""
    if start is None:
        start = clip_starts(video.num_frames, n, F, "uniform_random", seed=_seed(seed, epoch, vindex, 7))[0]
    out = []
    for t in range(n):
        s = start + t * F
        out.append(augment(video.frames[s:s + F], aug.with_seed(_seed(seed, epoch, vindex, view, t))))
    return out, start


def _to_tensor(clips):
    return torch.from_numpy(np.stack(clips))


def _batches(order, size, drop_singleton=False):
    out = [order[i:i + size] for i in range(0, len(order), size)]
    if drop_singleton and len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


def pretrain_teacher(objective, videos, config: TrainConfig, num_classes, out_dir=None,
                     augment_spec: AugmentSpec = PRETRAIN_AUGMENT, log: MetricsLog = None,
                     epoch_checkpoints=True) -> VideoEncoder:
    """Self-supervised pretraining with the invariant or distinctive objective (labels unused).

    With ``out_dir`` a checkpoint is written after every epoch (unless
    ``epoch_checkpoints`` is off) and once more at the end.
    """
    if objective not in ("invariant", "distinctive"):
        raise ValueError(f"objective must be 'invariant' or 'distinctive', got {objective!r}")
    if not videos:
        raise ValueError("pretraining needs at least one video")
    stage = f"pretrain_{objective}"
    cfg = config.for_stage(stage)
    if objective == "invariant" and len(videos) < 2:
        raise ValueError("invariant pretraining needs at least two videos")
    n, F, E = cfg.n, cfg.clip_len, cfg.num_epochs
    role = f"{objective}_teacher"
    model = build_encoder(num_classes, role=role, seed=_seed(cfg.seed, 1 if objective == "invariant" else 2))
    opt = make_optimizer(cfg, trainable(model))
    out_dir = Path(out_dir) if out_dir else None
    log = log or MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)
    model.train()

    for epoch in range(1, E + 1):
        lr = opt.start_epoch(epoch)
        order = np.random.default_rng(_seed(cfg.seed, epoch, 11)).permutation(len(videos))
        totals = {"loss": 0.0, "L_I": 0.0, "L_D1": 0.0, "L_D2": 0.0}
        nb = 0
        for batch in _batches(order, cfg.batch_size, drop_singleton=True):
            if objective == "invariant" and len(batch) < 2:
                continue
            view1, view2, glob = [], [], []
            for vi in batch:
                v = videos[vi]
                c1, start = _clips(v, n, F, cfg.seed, epoch, vi, 0, augment_spec)
                view1 += c1
                if objective == "distinctive":
                    c2, _ = _clips(v, n, F, cfg.seed, epoch, vi, 1, augment_spec, start=start)
                    view2 += c2
                    g, _ = _clips(v, 1, n * F, cfg.seed, epoch, vi, 2, augment_spec, start=start)
                    glob += g
            Bn = len(batch)
            z = project(model, encode_clip(model, _to_tensor(view1)).pooled).reshape(Bn, n, -1)
            if objective == "invariant":
                loss = losses.loss_invariant(z, cfg.tau)
                parts = {"L_I": loss.item()}
            else:
                z2 = project(model, encode_clip(model, _to_tensor(view2)).pooled).reshape(Bn, n, -1)
                slices = temporal_slices(model, _to_tensor(glob), n)  # [B, n, D]
                zg = project(model, slices.reshape(Bn * n, -1)).reshape(Bn, n, -1)
                l1 = losses.loss_distinctive_pooled(z, z2, cfg.tau)
                l2 = losses.loss_distinctive_unpooled(z, zg, cfg.tau)
                loss = l1 + l2
                parts = {"L_D1": l1.item(), "L_D2": l2.item()}
            _check_finite(loss, stage, [videos[i].id for i in batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
            totals["loss"] += sum(parts.values())
            for k, v in parts.items():
                totals[k] += v
            nb += 1
        means = {k: v / max(nb, 1) for k, v in totals.items() if v != 0.0 or k == "loss"}
        opt.end_epoch(means["loss"])
        log.append({"stage": stage, "epoch": epoch, "lr": lr, **means})
        if out_dir and epoch_checkpoints:
            save_checkpoint(model, opt, out_dir / f"{stage}_epoch{epoch:03d}.ckpt")
    if out_dir:
        save_checkpoint(model, opt, out_dir / f"{stage}.ckpt")
    return model


def _single_clips(videos, idx, F, seed, epoch, aug):
    clips = []
    for vi in idx:
        c, _ = _clips(videos[vi], 1, F, seed, epoch, vi, 3, aug)
        clips += c
    return _to_tensor(clips)


def finetune_teacher(weights: VideoEncoder, labeled, config: TrainConfig, out_dir=None,
                     augment_spec: AugmentSpec = FINETUNE_AUGMENT, log: MetricsLog = None) -> VideoEncoder:
    """Supervised finetuning of backbone and classifier; the projection head stays frozen."""
    if not labeled:
        raise ValueError("finetuning needs a non-empty labeled set")
    cfg = config.for_stage("finetune_teacher")
    model = copy.deepcopy(weights)
    model.lineage = weights_hash(weights)
    for p in model.projector.parameters():
        p.requires_grad_(False)
    opt = make_optimizer(cfg, trainable(model, freeze_projector=True))
    out_dir = Path(out_dir) if out_dir else None
    log = log or MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)
    labels = torch.tensor([v.label for v in labeled])
    salt = 1 if model.role == "invariant_teacher" else 2
    model.train()
    for epoch in range(1, cfg.num_epochs + 1):
        lr = opt.start_epoch(epoch)
        order = np.random.default_rng(_seed(cfg.seed, epoch, 13, salt)).permutation(len(labeled))
        tot, correct, nb = 0.0, 0, 0
        for batch in _batches(order, cfg.batch_size):
            x = _single_clips(labeled, batch, cfg.clip_len, _seed(cfg.seed, salt), epoch, augment_spec)
            out = model(x.permute(0, 4, 1, 2, 3))
            loss = losses.loss_cross_entropy(out, labels[batch])
            _check_finite(loss, "finetune_teacher", [labeled[i].id for i in batch])
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
            correct += int((out.argmax(1) == labels[batch]).sum())
            nb += 1
        opt.end_epoch(tot / nb)
        log.append({"stage": "finetune_teacher", "role": model.role, "epoch": epoch, "lr": lr,
                    "loss": tot / nb, "train_acc": correct / len(labeled)})
    for p in model.projector.parameters():
        p.requires_grad_(True)
    if out_dir:
        save_checkpoint(model, opt, out_dir / f"finetune_{model.role}.ckpt")
    return model


def _teacher_probs(teacher, x):
    teacher.eval()
    with torch.no_grad():
        return torch.softmax(teacher(x), dim=-1)


def train_student(init, theta_I, theta_D, scores, labeled, unlabeled, config: TrainConfig, num_classes,
                  out_dir=None, augment_spec: AugmentSpec = FINETUNE_AUGMENT, log: MetricsLog = None) -> VideoEncoder:
    """Semi-supervised student training with distillation from two frozen teachers.

    ``init`` is an encoder to start from (e.g. a self-supervised checkpoint) or
    ``None`` for random initialization. Labeled samples get cross-entropy plus
    ``omega`` times the distillation loss; unlabeled samples get the distillation
    loss only. ``scores`` maps video id to a :class:`SimilarityRecord`; when it
    carries teacher hashes they must match the pretrained checkpoints the two
    teachers were finetuned from.
    """
    cfg = config.for_stage("train_student")
    if not labeled:
        raise ValueError("student training needs labeled videos")
    if init is None or cfg.student_init == "random":
        student = build_encoder(num_classes, role="student", seed=_seed(cfg.seed, 3))
    else:
        student = copy.deepcopy(init)
        student.role = "student"
    use_teachers = cfg.omega > 0
    if use_teachers and (theta_I is None or theta_D is None):
        raise ValueError("omega > 0 needs both teachers")
    score_hashes = getattr(scores, "hashes", None)
    if use_teachers and cfg.teacher_weighting == "tstr" and score_hashes is not None:
        lineage = (theta_I.lineage, theta_D.lineage)
        if None not in lineage and tuple(score_hashes) != lineage:
            raise CheckpointError("similarity scores were computed with different teachers than the ones given")
    teacher_hashes = [weights_hash(t) for t in (theta_I, theta_D) if t is not None]
    score_snapshot = {vid: rec.s for vid, rec in (scores or {}).items()}

    opt = make_optimizer(cfg, trainable(student, freeze_projector=True))
    out_dir = Path(out_dir) if out_dir else None
    log = log or MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)

    unlabeled = list(unlabeled or [])
    if unlabeled:
        b_lab = min(cfg.batch_size - 1, max(1, int(round(cfg.batch_size * cfg.labeled_ratio))))
        b_unl = cfg.batch_size - b_lab
        steps = math.ceil(len(unlabeled) / b_unl)
    else:
        b_lab, b_unl = cfg.batch_size, 0
        steps = math.ceil(len(labeled) / b_lab)
    # omega = 0 draws the same labeled samples and step count but skips unlabeled
    # samples entirely, since they would contribute nothing to the loss
    pool = list(labeled) + (unlabeled if use_teachers else [])
    is_labeled = np.array([True] * len(labeled) + [False] * (len(pool) - len(labeled)))
    n_unl = len(pool) - len(labeled)

    def weight_of(vid):
        mode = cfg.teacher_weighting
        if mode == "uniform":
            return DEFAULT_SCORE
        if mode == "invariant":
            return 1.0
        if mode == "distinctive":
            return 0.0
        return lookup_score(scores or {}, vid)

    labels = torch.tensor([v.label if v.label is not None else -1 for v in pool])
    weights = torch.tensor([weight_of(v.id) for v in pool], dtype=torch.float32)
    student.train()
    lab_stream = _Stream(len(labeled), _seed(cfg.seed, 17))
    unl_stream = _Stream(n_unl, _seed(cfg.seed, 19)) if n_unl else None

    for epoch in range(1, cfg.num_epochs + 1):
        lr = opt.start_epoch(epoch)
        tot = sup = unsup = 0.0
        n_sup_batches = 0
        for step in range(steps):
            idx = list(lab_stream.take(b_lab))
            if unl_stream is not None:
                idx += [len(labeled) + k for k in unl_stream.take(b_unl)]
            idx = np.array(idx)
            x = _single_clips(pool, idx, cfg.clip_len, cfg.seed, epoch * 1000 + step, augment_spec)
            x = x.permute(0, 4, 1, 2, 3).contiguous()
            out = student(x)
            lab_mask = torch.from_numpy(is_labeled[idx])
            l_sup = losses.loss_cross_entropy(out[lab_mask], labels[idx][lab_mask])
            if use_teachers:
                p_s = torch.softmax(out, dim=-1)
                p_t = combine_teachers(_teacher_probs(theta_I, x), _teacher_probs(theta_D, x), weights[idx])
                l_unsup = losses.loss_distill(p_t, p_s, cfg.distill)
            else:
                l_unsup = torch.zeros(())
            loss = losses.loss_total(l_sup, l_unsup, cfg.omega)
            _check_finite(loss, "train_student", [pool[i].id for i in idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
            sup += l_sup.item()
            unsup += l_unsup.item()
            n_sup_batches += 1
        opt.end_epoch(tot / steps)
        log.append({"stage": "train_student", "epoch": epoch, "lr": lr, "loss": tot / steps,
                    "L_sup": sup / n_sup_batches, "L_unsup": unsup / steps})

    after = [weights_hash(t) for t in (theta_I, theta_D) if t is not None]
    if after != teacher_hashes:
        raise RuntimeError("teacher weights changed during student training")
    if {vid: rec.s for vid, rec in (scores or {}).items()} != score_snapshot:
        raise RuntimeError("similarity scores changed during student training")
    if out_dir:
        save_checkpoint(student, opt, out_dir / "student.ckpt")
    return student


class _Stream:
    """Endless reshuffled passes over ``range(size)``."""

    def __init__(self, size, seed):
        self.size = size
        self.rng = np.random.default_rng(seed)
        self.buf = []

    def take(self, k):
        out = []
        while len(out) < k:
            if not self.buf:
                self.buf = list(self.rng.permutation(self.size))
            out.append(self.buf.pop())
        return out
