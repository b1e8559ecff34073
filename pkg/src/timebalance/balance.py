"""Temporal-similarity-based teacher reweighting.

Each video gets a score ``s`` in [0, 1] from the off-diagonal cosine similarities
of its clip embeddings under both teachers. High ``s`` (clips look alike) leans
the combined target toward the invariant teacher, low ``s`` toward the
distinctive one.

Score cache format (text)::

    # timebalance-scores v1
    # invariant <sha256 of invariant teacher weights>
    # distinctive <sha256 of distinctive teacher weights>
    # n <clips> F <frames per clip>
    <video_id> TAB <s> TAB <n(n-1) off-diagonal C_I values> TAB <n(n-1) off-diagonal C_D values>

Off-diagonal values are listed row-major, space separated, ``repr`` precision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datamodel import sample_consecutive_clips
from .encoder import encode_clip, project, weights_hash
from .errors import CheckpointError, ContractError, SamplingError

logger = logging.getLogger(__name__)

CACHE_TAG = "# timebalance-scores v1"
DEFAULT_SCORE = 0.5


@dataclass
class SimilarityRecord:
    video_id: str
    C_I: np.ndarray
    C_D: np.ndarray
    s: float


class ScoreTable(dict):
    """``video_id -> SimilarityRecord`` plus the hashes of the two teachers that produced it."""

    def __init__(self, records=(), hashes=None):
        super().__init__(records)
        self.hashes = hashes


def similarity_matrix(z) -> np.ndarray:
    """Cosine similarity between every pair of clip embeddings ``z [n, d]``."""
    z = z.detach().cpu().double().numpy() if torch.is_tensor(z) else np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ContractError(f"need at least two embeddings of shape [n, d], got {z.shape}")
    u = z / np.linalg.norm(z, axis=1, keepdims=True)
    C = np.clip(u @ u.T, -1.0, 1.0)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


def _off_diagonal(C):
    return C[~np.eye(C.shape[0], dtype=bool)]


def raw_score(C_I, C_D) -> float:
    """Mean of all off-diagonal entries of both matrices, before clamping."""
    C_I, C_D = np.asarray(C_I, dtype=np.float64), np.asarray(C_D, dtype=np.float64)
    if C_I.shape != C_D.shape or C_I.ndim != 2 or C_I.shape[0] != C_I.shape[1]:
        raise ContractError(f"need two equal square matrices, got {C_I.shape} and {C_D.shape}")
    n = C_I.shape[0]
    if n < 2:
        raise ContractError("similarity matrices must be at least 2x2")
    return float((_off_diagonal(C_I).sum() + _off_diagonal(C_D).sum()) / (2 * n * (n - 1)))


def similarity_score(C_I, C_D) -> float:
    return float(np.clip(raw_score(C_I, C_D), 0.0, 1.0))


def combine_teachers(p_I, p_D, s):
    """Convex mix ``s * p_I + (1 - s) * p_D``. ``s`` may be a scalar or one value per row."""
    s_arr = s.detach().cpu().numpy() if torch.is_tensor(s) else np.asarray(s)
    if np.any(s_arr < 0) or np.any(s_arr > 1) or not np.all(np.isfinite(s_arr)):
        raise ContractError(f"teacher weight must lie in [0, 1], got {s}")
    if p_I.shape != p_D.shape:
        raise ContractError(f"teacher predictions differ in shape: {tuple(p_I.shape)} vs {tuple(p_D.shape)}")
    if np.ndim(s_arr) == 1:
        s = s[:, None] if torch.is_tensor(s) else s_arr[:, None]
        if torch.is_tensor(p_I) and not torch.is_tensor(s):
            s = torch.as_tensor(s, dtype=p_I.dtype)
    return s * p_I + (1 - s) * p_D


# --------------------------------------------------------------------------- #
# corpus scoring

@torch.no_grad()
def embed_clips(model, clips) -> torch.Tensor:
    was_training = model.training
    model.eval()
    try:
        feat = encode_clip(model, np.stack(clips))
        return project(model, feat.pooled)
    finally:
        model.train(was_training)


def score_video(theta_I, theta_D, video, n=4, F=16) -> SimilarityRecord:
    clipset = sample_consecutive_clips(video, n, F, start_policy="fixed", start=0)
    C_I = similarity_matrix(embed_clips(theta_I, clipset.clips))
    C_D = similarity_matrix(embed_clips(theta_D, clipset.clips))
    return SimilarityRecord(video.id, C_I, C_D, similarity_score(C_I, C_D))


def precompute_scores(theta_I, theta_D, videos, n=4, F=16, cache_path=None) -> ScoreTable:
    """Score every video with both (pre-finetune) teachers, reusing ``cache_path`` when valid.

    The cache is valid only if both teacher hashes and (n, F) match. Videos too
    short for n clips of F frames are left out; :func:`lookup_score` then falls
    back to 0.5.
    """
    hashes = (weights_hash(theta_I), weights_hash(theta_D))
    if cache_path is not None and Path(cache_path).exists():
        try:
            cached_hashes, cached_nf, records = read_score_cache(cache_path)
        except CheckpointError as exc:
            logger.warning("ignoring unreadable score cache %s: %s", cache_path, exc)
        else:
            wanted = {v.id for v in videos}
            if cached_hashes == hashes and cached_nf == (n, F) and wanted <= set(records):
                return ScoreTable(((vid, records[vid]) for vid in sorted(wanted)), hashes)
            logger.info("score cache %s is stale; recomputing", cache_path)

    records = ScoreTable(hashes=hashes)
    for video in videos:
        try:
            records[video.id] = score_video(theta_I, theta_D, video, n, F)
        except SamplingError as exc:
            logger.warning("no similarity score for %s (%s); using %.1f", video.id, exc, DEFAULT_SCORE)
    if cache_path is not None:
        write_score_cache(cache_path, records, hashes, n, F)
    return records


def lookup_score(records: dict, video_id: str) -> float:
    rec = records.get(video_id)
    if rec is None:
        logger.warning("no cached score for %s; using %.1f", video_id, DEFAULT_SCORE)
        return DEFAULT_SCORE
    return rec.s


def _fmt(values):
    return " ".join(repr(float(x)) for x in values)


def write_score_cache(path, records: dict, hashes, n, F) -> None:
    lines = [CACHE_TAG, f"# invariant {hashes[0]}", f"# distinctive {hashes[1]}", f"# n {n} F {F}"]
    for vid in sorted(records):
        r = records[vid]
        lines.append(f"{vid}\t{r.s!r}\t{_fmt(_off_diagonal(r.C_I))}\t{_fmt(_off_diagonal(r.C_D))}")
    Path(path).write_text("\n".join(lines) + "\n")


def _rebuild(values, n):
    C = np.eye(n)
    C[~np.eye(n, dtype=bool)] = values
    return C


def read_score_cache(path):
    """Returns ``((hash_I, hash_D), (n, F), ScoreTable)``."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 4 or lines[0] != CACHE_TAG:
        raise CheckpointError(f"{path}: not a score cache")
    try:
        hash_I = lines[1].split()[2]
        hash_D = lines[2].split()[2]
        _, _, n, _, F = lines[3].split()
        n, F = int(n), int(F)
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header") from exc
    records = ScoreTable()
    for lineno, line in enumerate(lines[4:], start=5):
        parts = line.split("\t")
        if len(parts) != 4:
            raise CheckpointError(f"{path}:{lineno}: expected 4 tab-separated fields")
        vid, s, ci, cd = parts
        ci = np.array([float(x) for x in ci.split()])
        cd = np.array([float(x) for x in cd.split()])
        if ci.size != n * (n - 1) or cd.size != n * (n - 1):
            raise CheckpointError(f"{path}:{lineno}: expected {n * (n - 1)} values per matrix")
        records[vid] = SimilarityRecord(vid, _rebuild(ci, n), _rebuild(cd, n), float(s))
    records.hashes = (hash_I, hash_D)
    return (hash_I, hash_D), (n, F), records
