"""Contrastive, supervised and distillation objectives.

Every contrastive loss works on cosine similarities divided by ``tau`` and is
evaluated with log-sum-exp, so ``tau = 0.1`` (kernel values up to e^10) is safe.

Conventions:

* Invariant loss: the batch-negative indicator covers only the same-timestamp
  term. The within-video cross-timestamp term runs over every instance, so the
  positive itself sits in the denominator and each term is a proper softmax.
* Distinctive losses sum only over negatives: the positive is *not* in the
  denominator, so values can be negative.
* Per-instance losses are averaged over the batch.
"""
from __future__ import annotations

import torch

from .errors import ContractError

DEFAULT_TAU = 0.1
_EPS = 1e-12


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def _cos(a, b):
    """Cosine similarity along the last axis with broadcasting."""
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    return (a * b).sum(-1)


def kernel_h(u1, u2, tau=DEFAULT_TAU):
    """exp(cos(u1, u2) / tau)."""
    _check_tau(tau)
    u1, u2 = torch.as_tensor(u1), torch.as_tensor(u2)
    return torch.exp(_cos(u1, u2) / tau)


def _pairwise(a, b):
    """Cosine matrix between rows of ``a [..., m, d]`` and ``b [..., k, d]``."""
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    return a @ b.transpose(-1, -2)


def loss_invariant(z, tau=DEFAULT_TAU):
    """Temporally-invariant contrastive loss over ``z [B, n, d]``.

    For anchor clip t1 of video i and positive clip t2 != t1 of the same video,
    the denominator holds h(z_i,t1, z_j,t1) for every other video j and
    h(z_i,t1, z_j,t2) for every video j (including i).
    """
    _check_tau(tau)
    B, n, _ = z.shape
    if B < 2:
        raise ContractError("invariant loss needs at least two videos per batch")
    if n < 2:
        raise ContractError("invariant loss needs at least two clips per video")
    flat = z.reshape(B * n, -1)
    S = (_pairwise(flat, flat) / tau).reshape(B, n, B, n)  # S[i, t, j, u]
    eye_b = torch.eye(B, dtype=torch.bool, device=z.device)

    # same-timestamp negatives: S[i, t1, j, t1] for j != i  -> [B, n, B]
    same_t = torch.diagonal(S, dim1=1, dim2=3)  # [B, B, n] as (i, j, t)
    same_t = same_t.permute(0, 2, 1).masked_fill(eye_b[:, None, :], float("-inf"))
    # cross-timestamp terms: S[i, t1, j, t2] for all j -> [B, n(t1), n(t2), B]
    cross_t = S.permute(0, 1, 3, 2)
    lse = torch.logsumexp(
        torch.cat([same_t[:, :, None, :].expand(B, n, n, B), cross_t], dim=-1), dim=-1
    )  # [B, n, n]
    pos = torch.diagonal(S, dim1=0, dim2=2).permute(2, 0, 1)  # [B, n(t1), n(t2)]
    off = ~torch.eye(n, dtype=torch.bool, device=z.device)
    per_instance = ((lse - pos) * off).sum(dim=(1, 2))
    return per_instance.mean()


def loss_distinctive_pooled(z, z_tilde, tau=DEFAULT_TAU):
    """Clip-level temporal distinctiveness over two views ``z, z_tilde [B, n, d]``.

    Positive: (z_t1, z~_t1). Negatives: h(z_t1, z_t2) + h(z_t1, z~_t2), t2 != t1.
    """
    _check_tau(tau)
    if z.shape != z_tilde.shape:
        raise ContractError(f"view shapes differ: {tuple(z.shape)} vs {tuple(z_tilde.shape)}")
    B, n, _ = z.shape
    if n < 2:
        raise ContractError("distinctive loss needs at least two clips per video")
    zz = _pairwise(z, z) / tau  # [B, n, n]
    zt = _pairwise(z, z_tilde) / tau
    off = ~torch.eye(n, dtype=torch.bool, device=z.device)
    neg = torch.cat([zz.masked_fill(~off, float("-inf")), zt.masked_fill(~off, float("-inf"))], dim=-1)
    pos = torch.diagonal(zt, dim1=1, dim2=2)
    per_instance = (torch.logsumexp(neg, dim=-1) - pos).sum(dim=1)
    return per_instance.mean()


def loss_distinctive_unpooled(local_z, slice_z, tau=DEFAULT_TAU):
    """Local-clip vs. global-slice temporal distinctiveness over ``[B, n, d]`` inputs.

    ``local_z[:, t]`` embeds local clip t, ``slice_z[:, t]`` embeds the t-th
    temporal slice of the long clip spanning all n local clips. Positive: the
    aligned pair (l_t1, g_t1). Negatives, for every t2 != t1: h(l_t1, l_t2),
    h(l_t1, g_t2) and the mirrored misaligned pair h(g_t1, l_t2).
    """
    _check_tau(tau)
    if local_z.dim() == 2:
        local_z, slice_z = local_z[None], slice_z[None]
    if local_z.shape != slice_z.shape:
        raise ContractError(f"{local_z.shape[1]} local clips vs {slice_z.shape[1]} global slices")
    B, n, _ = local_z.shape
    if n < 2:
        raise ContractError("unpooled distinctive loss needs at least two timestamps")
    ll = _pairwise(local_z, local_z) / tau
    lg = _pairwise(local_z, slice_z) / tau  # lg[t1, t2] = cos(l_t1, g_t2)
    gl = lg.transpose(1, 2)  # gl[t1, t2] = cos(g_t1, l_t2)
    off = ~torch.eye(n, dtype=torch.bool, device=local_z.device)
    neg = torch.cat([m.masked_fill(~off, float("-inf")) for m in (ll, lg, gl)], dim=-1)
    pos = torch.diagonal(lg, dim1=1, dim2=2)
    per_instance = (torch.logsumexp(neg, dim=-1) - pos).sum(dim=1)
    return per_instance.mean()


def loss_cross_entropy(logits, y, reduction="mean"):
    """-log softmax(logits)[y]. Passing ``log(p)`` as logits scores a probability vector."""
    logits = torch.as_tensor(logits)
    y = torch.as_tensor(y)
    if logits.dim() == 1:
        return -torch.log_softmax(logits, dim=-1)[y]
    losses = -torch.log_softmax(logits, dim=-1).gather(1, y.long()[:, None])[:, 0]
    return losses.mean() if reduction == "mean" else losses


DIVERGENCES = ("l2", "kl", "js")


def loss_distill(p_t, p_s, kind="l2", reduction="mean"):
    """Distance from frozen teacher probabilities ``p_t`` to student probabilities ``p_s``.

    ``l2``: sum_c (p_t - p_s)^2.  ``kl``: KL(p_t || p_s).  ``js``: Jensen-Shannon.
    Gradients reach ``p_s`` only.
    """
    if p_t.shape != p_s.shape:
        raise ContractError(f"prediction shapes differ: {tuple(p_t.shape)} vs {tuple(p_s.shape)}")
    p_t = p_t.detach()
    if kind == "l2":
        per = ((p_t - p_s) ** 2).sum(-1)
    elif kind == "kl":
        per = (p_t * (torch.log(p_t.clamp_min(_EPS)) - torch.log(p_s.clamp_min(_EPS)))).sum(-1)
    elif kind == "js":
        m = 0.5 * (p_t + p_s)
        log_m = torch.log(m.clamp_min(_EPS))
        per = 0.5 * (p_t * (torch.log(p_t.clamp_min(_EPS)) - log_m)).sum(-1) \
            + 0.5 * (p_s * (torch.log(p_s.clamp_min(_EPS)) - log_m)).sum(-1)
    else:
        raise ValueError(f"unknown divergence {kind!r}; expected one of {DIVERGENCES}")
    if per.dim() == 0 or reduction == "none":
        return per
    return per.mean()


def loss_total(l_sup, l_unsup, omega=1.0):
    """l_sup + omega * l_unsup; an unlabeled sample passes ``l_sup=None``."""
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    if l_sup is None:
        return omega * l_unsup
    return l_sup + omega * l_unsup

