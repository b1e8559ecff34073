"""Toy 3-D convolutional video encoder with classifier and projection heads."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ContractError

ROLES = ("invariant_teacher", "distinctive_teacher", "student")
FEATURE_DIM = 128
EMBED_DIM = 32
TEMPORAL_STRIDE = 4


def _block(c_in, c_out, t_pool, conv_stride=1):
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, 3, stride=(1, conv_stride, conv_stride), padding=1, bias=False),
        nn.GroupNorm(4, c_out),
        nn.ReLU(inplace=True),
        nn.MaxPool3d((t_pool, 2, 2) if t_pool > 1 else (1, 2, 2)),
    )


class VideoEncoder(nn.Module):
    """Backbone f, classifier, and projection head g.

    Four conv blocks; the first convolution is spatially strided. Time is halved
    by the last two blocks only, so a clip of F frames yields F/4 unpooled steps.
    """

    def __init__(self, num_classes, feature_dim=FEATURE_DIM, embed_dim=EMBED_DIM,
                 in_channels=3, role="student", widths=(8, 16, 32)):
        super().__init__()
        if role not in ROLES:
            raise ContractError(f"unknown role {role!r}")
        self.role = role
        self.lineage = None  # weights hash of the pretrained checkpoint this one was finetuned from
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        w1, w2, w3 = widths
        self.backbone = nn.Sequential(
            _block(in_channels, w1, 1, conv_stride=2),
            _block(w1, w2, 1),
            _block(w2, w3, 2),
            nn.Sequential(
                nn.Conv3d(w3, feature_dim, 3, padding=1, bias=False),
                nn.GroupNorm(4, feature_dim),
                nn.ReLU(inplace=True),
                nn.MaxPool3d((2, 1, 1)),
            ),
        )
        self.classifier = nn.Linear(feature_dim, num_classes)
        hidden = feature_dim // 4
        self.projector = nn.Sequential(
            nn.Linear(feature_dim, hidden, bias=True),
            nn.BatchNorm1d(hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, embed_dim, bias=False),
            nn.BatchNorm1d(embed_dim),
        )

    def unpooled(self, x):
        """``x`` is ``[B, Ch, F, H, W]``; returns ``[B, F/4, feature_dim]``."""
        h = self.backbone(x)
        return h.mean(dim=(3, 4)).transpose(1, 2)

    def forward(self, x):
        return self.classifier(self.unpooled(x).mean(dim=1))


@dataclass
class ClipFeature:
    unpooled: torch.Tensor  # [..., T', D]
    pooled: torch.Tensor  # [..., D]


def as_batch(clip, like: nn.Module = None) -> torch.Tensor:
    """Channels-last clip(s) ``[F, H, W, Ch]`` or ``[B, F, H, W, Ch]`` -> ``[B, Ch, F, H, W]``."""
    x = torch.as_tensor(np.asarray(clip)) if not torch.is_tensor(clip) else clip
    if x.dim() == 4:
        x = x.unsqueeze(0)
    if x.dim() != 5:
        raise ContractError(f"expected [F,H,W,Ch] or [B,F,H,W,Ch], got {tuple(x.shape)}")
    if like is not None:
        x = x.to(next(like.parameters()).dtype)
    return x.permute(0, 4, 1, 2, 3).contiguous()


def _check_clip(w: VideoEncoder, x: torch.Tensor):
    if x.shape[1] != w.backbone[0][0].in_channels:
        raise ContractError(f"clip has {x.shape[1]} channels, encoder expects {w.backbone[0][0].in_channels}")
    if x.shape[2] % TEMPORAL_STRIDE:
        raise ContractError(f"clip length {x.shape[2]} is not a multiple of {TEMPORAL_STRIDE}")
    if x.shape[3] % 16 or x.shape[4] % 16:
        raise ContractError(f"spatial size {tuple(x.shape[3:])} must be a multiple of 16")


def encode_clip(w: VideoEncoder, clip) -> ClipFeature:
    """Backbone features of one clip ``[F,H,W,Ch]`` or a batch ``[B,F,H,W,Ch]``."""
    single = (clip.dim() if torch.is_tensor(clip) else np.ndim(clip)) == 4
    x = as_batch(clip, w)
    _check_clip(w, x)
    u = w.unpooled(x)
    feat = ClipFeature(u, u.mean(dim=1))
    if single:
        return ClipFeature(feat.unpooled[0], feat.pooled[0])
    return feat


def project(w: VideoEncoder, pooled: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Unit-norm embedding z = g(pooled) / ||g(pooled)||."""
    single = pooled.dim() == 1
    h = w.projector(pooled.unsqueeze(0) if single else pooled)
    z = h / h.norm(dim=-1, keepdim=True).clamp_min(eps)
    return z[0] if single else z


def logits(w: VideoEncoder, pooled: torch.Tensor) -> torch.Tensor:
    return w.classifier(pooled)


def classify(w: VideoEncoder, pooled: torch.Tensor) -> torch.Tensor:
    return torch.softmax(w.classifier(pooled), dim=-1)


def temporal_slices(w: VideoEncoder, global_clip, n: int) -> torch.Tensor:
    """Split the unpooled features of a long clip into n equal segments and mean-pool each.

    Returns ``[n, D]`` for one clip or ``[B, n, D]`` for a batch.
    """
    feat = encode_clip(w, global_clip)
    u = feat.unpooled
    Tp = u.shape[-2]
    if n < 1 or Tp % n:
        raise ContractError(f"{Tp} unpooled steps cannot be split into {n} equal slices")
    return u.reshape(*u.shape[:-2], n, Tp // n, u.shape[-1]).mean(dim=-2)


def weights_hash(w: nn.Module) -> str:
    """SHA-256 over every state tensor (name, dtype, shape, bytes) in declaration order."""
    h = hashlib.sha256()
    for name, t in w.state_dict().items():
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def build_encoder(num_classes, role="student", seed=0, **kwargs) -> VideoEncoder:
    """Freshly initialized encoder; the global torch RNG is left untouched."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return VideoEncoder(num_classes, role=role, **kwargs)
