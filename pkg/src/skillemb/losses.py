"""Training objectives.

All functions take torch tensors and are differentiable; entropies use the
natural log.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .config import LossConfig


class DegenerateBatchError(ValueError):
    pass


def similarity_matrix(embeddings: torch.Tensor, kind: str = "dot") -> torch.Tensor:
    if kind == "dot":
        return embeddings @ embeddings.T
    if kind == "neg_sqdist":
        sq = (embeddings ** 2).sum(-1)
        return -(sq[:, None] + sq[None, :] - 2 * embeddings @ embeddings.T).clamp_min(0)
    raise ValueError(f"unknown similarity {kind!r}")


def _masks(labels, negative_mask, m, device):
    labels = torch.as_tensor(labels, device=device)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(m, dtype=torch.bool, device=device)
    pos = same & ~eye
    if negative_mask is None:
        neg = ~same
    else:
        neg = torch.as_tensor(negative_mask, dtype=torch.bool, device=device) & ~same
    return pos, neg


def lifted_asn_loss(embeddings: torch.Tensor, labels, cfg: LossConfig | None = None,
                    negative_mask=None, bound: bool = True) -> torch.Tensor:
    """Lifted structure loss with a bound on positive similarity.

    Sum over anchors ``i`` of::

        log sum_{k pos} (exp(lambda - S_ik) + [S_ik > xi] * S_ik)
      + log sum_{k neg} exp(S_ik)

    Positives share the anchor's label (the anchor itself excluded). Negatives
    have a different label and, when ``negative_mask`` is given, must also be
    set there. Anchors without positives (negatives) drop that term.
    ``bound=False`` removes the indicator term ("normal lifted").
    """
    cfg = cfg or LossConfig()
    if bound and cfg.xi_sim <= 0:
        raise ValueError("xi_sim must be positive")
    m = embeddings.shape[0]
    s = similarity_matrix(embeddings, cfg.similarity)
    pos, neg = _masks(labels, negative_mask, m, embeddings.device)
    has_pos, has_neg = pos.any(1), neg.any(1)
    if not (has_pos & has_neg).any():
        raise DegenerateBatchError("degenerate batch: no anchor has both a positive and a negative")
    ninf = torch.full_like(s, -math.inf)

    # log(sum e^a + sum b) = logsumexp([a, log b]) with b > 0
    pos_exp = torch.where(pos, cfg.lambda_margin - s, ninf)
    terms = [pos_exp]
    if bound:
        over = pos & (s > cfg.xi_sim)
        terms.append(torch.where(over, torch.log(torch.where(over, s, torch.ones_like(s))), ninf))
    pos_term = torch.logsumexp(torch.cat(terms, dim=1), dim=1)
    neg_term = torch.logsumexp(torch.where(neg, s, ninf), dim=1)
    zero = torch.zeros_like(pos_term)
    return torch.where(has_pos, pos_term, zero).sum() + torch.where(has_neg, neg_term, zero).sum()


def triplet_loss(embeddings, labels, cfg: LossConfig | None = None, negative_mask=None):
    """Mean hinge over all (anchor, positive, negative) triplets on squared distances."""
    cfg = cfg or LossConfig()
    m = embeddings.shape[0]
    d = -similarity_matrix(embeddings, "neg_sqdist")
    pos, neg = _masks(labels, negative_mask, m, embeddings.device)
    trip = pos[:, :, None] & neg[:, None, :]
    if not trip.any():
        raise DegenerateBatchError("degenerate batch: no triplets")
    hinge = F.relu(d[:, :, None] - d[:, None, :] + cfg.triplet_margin)
    return hinge[trip].mean()


def npair_loss(embeddings, labels, cfg: LossConfig | None = None, negative_mask=None):
    """Multi-class N-pair loss: ``log(1 + sum_neg exp(S_in - S_ip))`` averaged over valid anchors."""
    m = embeddings.shape[0]
    s = embeddings @ embeddings.T
    pos, neg = _masks(labels, negative_mask, m, embeddings.device)
    valid = pos.any(1) & neg.any(1)
    if not valid.any():
        raise DegenerateBatchError("degenerate batch: no anchor has both a positive and a negative")
    ninf = torch.full_like(s, -math.inf)
    s_pos = torch.where(pos, s, ninf).max(dim=1).values
    logits = torch.where(neg, s - s_pos[:, None], ninf)
    zeros = torch.zeros(m, 1, dtype=s.dtype, device=s.device)
    per_anchor = torch.logsumexp(torch.cat([zeros, logits], dim=1), dim=1)
    return per_anchor[valid].mean()


def metric_loss(embeddings, labels, cfg: LossConfig, negative_mask=None):
    if cfg.metric == "lifted_asn":
        return lifted_asn_loss(embeddings, labels, cfg, negative_mask, bound=True)
    if cfg.metric == "lifted":
        return lifted_asn_loss(embeddings, labels, cfg, negative_mask, bound=False)
    if cfg.metric == "triplet":
        return triplet_loss(embeddings, labels, cfg, negative_mask)
    if cfg.metric == "npair":
        return npair_loss(embeddings, labels, cfg, negative_mask)
    raise ValueError(f"unknown metric loss {cfg.metric!r}")


def _xlogx(p: torch.Tensor) -> torch.Tensor:
    return torch.where(p > 0, p * torch.log(torch.where(p > 0, p, torch.ones_like(p))), torch.zeros_like(p))


def entropy(probs: torch.Tensor) -> torch.Tensor:
    """Row-wise Shannon entropy with ``0 log 0 = 0``."""
    return -_xlogx(probs).sum(-1)


def conditional_entropy(probs: torch.Tensor) -> torch.Tensor:
    """Mean over rows of the per-row entropy."""
    return entropy(probs).mean()


def marginal_entropy(probs: torch.Tensor) -> torch.Tensor:
    """Entropy of the batch-averaged distribution."""
    return entropy(probs.mean(0))


def discriminator_loss(probs, kl_value, cfg: LossConfig | None = None) -> torch.Tensor:
    """``-H_marginal + H_conditional + beta * KL``; minimized by the discriminator."""
    cfg = cfg or LossConfig()
    kl_term = cfg.beta * kl_value
    if not cfg.entropy:
        return kl_term + 0.0 * probs.sum()
    return -marginal_entropy(probs) + conditional_entropy(probs) + kl_term


def encoder_loss(probs, lifted_value, cfg: LossConfig | None = None) -> torch.Tensor:
    """``H_marginal + H_conditional - alpha * metric``; *maximized* by the encoder."""
    cfg = cfg or LossConfig()
    metric_term = -cfg.alpha * lifted_value
    if not (cfg.entropy and cfg.encoder_entropy) or probs is None:
        return metric_term
    return marginal_entropy(probs) + conditional_entropy(probs) + metric_term
