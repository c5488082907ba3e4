"""Threefold BEV-text alignment objective: contrastive, grounded generation, matching."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, InputDomainError, NumericError, ShapeError


@dataclass
class AlignmentBatch:
    query_embeddings: torch.Tensor  # B x Q x D
    pooled_text: torch.Tensor  # B x D
    text_token_ids: torch.Tensor  # B x L
    text_mask: torch.Tensor  # B x L, prefix-monotone
    match_labels: torch.Tensor  # B, in {0, 1}
    temperature: float = 0.07
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    similarity: str = "max"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")
        labels = self.match_labels
        if labels.numel() and not ((labels == 0) | (labels == 1)).all():
            raise InputDomainError("match labels must be 0 or 1")
        m = self.text_mask.long()
        if m.shape[1] > 1 and (m[:, 1:] > m[:, :-1]).any():
            raise InputDomainError("text mask must be prefix-monotone (padding only at the end)")


def similarity_matrix(query_embeddings, pooled_text, similarity="max") -> torch.Tensor:
    """``s[i, j]``: max (or mean) over queries of cos(query_embeddings[i, q], pooled_text[j])."""
    if query_embeddings.dim() != 3 or pooled_text.dim() != 2:
        raise ShapeError("expected B x Q x D query embeddings and B x D pooled text")
    qn = query_embeddings.norm(dim=-1)
    tn = pooled_text.norm(dim=-1)
    if (qn == 0).any() or (tn == 0).any():
        raise NumericError("zero-norm embedding: cosine similarity undefined")
    q = query_embeddings / qn[..., None]
    t = pooled_text / tn[..., None]
    cos = torch.einsum("iqd,jd->ijq", q, t)
    if similarity == "max":
        return cos.max(dim=-1).values
    if similarity == "mean":
        return cos.mean(dim=-1)
    raise ConfigurationError(f"similarity must be 'max' or 'mean', got {similarity!r}")


def btc_loss(batch: AlignmentBatch) -> torch.Tensor:
    """Symmetric InfoNCE over the in-batch similarity matrix, diagonal positives."""
    if batch.query_embeddings.shape[0] < 1:
        raise InputDomainError("contrastive loss needs at least one pair")
    logits = similarity_matrix(batch.query_embeddings, batch.pooled_text, batch.similarity) / batch.temperature
    return contrastive_from_logits(logits)


def contrastive_from_logits(logits: torch.Tensor) -> torch.Tensor:
    targets = torch.arange(logits.shape[0])
    return 0.5 * (F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets))


def btg_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean token cross-entropy over unmasked positions."""
    if logits.shape[:2] != targets.shape or targets.shape != mask.shape:
        raise ShapeError(f"logits {tuple(logits.shape)}, targets {tuple(targets.shape)}, mask {tuple(mask.shape)}")
    keep = mask.bool()
    if not keep.any():
        raise InputDomainError("every target position is masked")
    if targets[keep].max() >= logits.shape[-1] or targets[keep].min() < 0:
        raise InputDomainError("target id outside the logit vocabulary")
    per_token = F.cross_entropy(logits[keep], targets[keep], reduction="none")
    return per_token.mean()


def btm_loss(match_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if match_logits.shape != labels.shape:
        raise ShapeError(f"logits {tuple(match_logits.shape)} vs labels {tuple(labels.shape)}")
    return F.binary_cross_entropy_with_logits(match_logits, labels.to(match_logits.dtype))


def combined_loss(batch: AlignmentBatch, generation_logits: torch.Tensor, match_logits: torch.Tensor):
    """Weighted sum of the three terms; returns ``(total, {"btc", "btg", "btm"})``.

    Generation targets are the next text tokens: position ``t`` of
    ``generation_logits`` is scored against ``text_token_ids[:, t + 1]``.
    """
    w_btc, w_btg, w_btm = batch.loss_weights
    terms = {
        "btc": btc_loss(batch),
        "btg": btg_loss(
            generation_logits[:, :-1], batch.text_token_ids[:, 1:], batch.text_mask[:, 1:]
        ),
        "btm": btm_loss(match_logits, batch.match_labels),
    }
    total = w_btc * terms["btc"] + w_btg * terms["btg"] + w_btm * terms["btm"]
    return total, terms


def in_batch_negatives(batch_size: int, generator: torch.Generator) -> torch.Tensor:
    """For each row i, a uniformly drawn partner index j != i (requires batch_size >= 2)."""
    if batch_size < 2:
        raise InputDomainError("in-batch negatives need at least two pairs")
    offsets = torch.randint(1, batch_size, (batch_size,), generator=generator)
    return (torch.arange(batch_size) + offsets) % batch_size
