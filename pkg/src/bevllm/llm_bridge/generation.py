"""Splicing projected queries into the prompt and decoding captions."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import ShapeError
from .prompt import PromptAssembly


def assemble_llm_input(prompt: PromptAssembly, projected: torch.Tensor, embedding_table: torch.Tensor,
                       upto: int | None = None) -> torch.Tensor:
    """Token embeddings with the ``<bev>`` row replaced by the projected query rows.

    ``upto`` truncates the prompt (e.g. to ``generation_start`` at inference).
    """
    ids = list(prompt.token_ids[:upto])
    slot = prompt.bev_slot
    if not 0 <= slot < len(ids):
        raise RuntimeError(f"bev slot {slot} outside prompt of length {len(ids)}")
    if projected.dim() != 2 or projected.shape[1] != embedding_table.shape[1]:
        raise ShapeError(
            f"projected queries {tuple(projected.shape)} do not match LM width {embedding_table.shape[1]}"
        )
    tokens = embedding_table[torch.tensor(ids, dtype=torch.long)]
    return torch.cat([tokens[:slot], projected.to(tokens.dtype), tokens[slot + 1:]], dim=0)


def spliced_position(prompt: PromptAssembly, token_index: int, num_queries: int) -> int:
    """Index in the assembled sequence of prompt token ``token_index`` (not the slot itself)."""
    if token_index == prompt.bev_slot:
        raise ValueError("the bev slot has no single assembled position")
    return token_index if token_index < prompt.bev_slot else token_index - 1 + num_queries


@dataclass(frozen=True)
class GenerationResult:
    text: str
    token_ids: tuple[int, ...]
    truncated: bool


@torch.no_grad()
def generate_caption(lm, adapters, input_embeds: torch.Tensor, tokenizer, max_new_tokens: int = 32,
                     mode: str = "greedy", temperature: float = 1.0,
                     generator: torch.Generator | None = None) -> GenerationResult:
    """Decode after the assistant header until end-of-message or the token budget."""
    if max_new_tokens <= 0:
        raise ValueError("max_new_tokens must be positive")
    if mode not in ("greedy", "sample"):
        raise ValueError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    seq = input_embeds
    out: list[int] = []
    for _ in range(max_new_tokens):
        logits = lm(seq, adapters)[0, -1]
        if mode == "greedy":
            nxt = int(logits.argmax())
        else:
            probs = torch.softmax(logits / temperature, dim=-1)
            nxt = int(torch.multinomial(probs, 1, generator=generator))
        if nxt == tokenizer.eot_id:
            return GenerationResult(tokenizer.decode(out), tuple(out), truncated=False)
        out.append(nxt)
        if seq.shape[0] >= lm.config.max_len:
            break
        seq = torch.cat([seq, lm.embedding_table[nxt][None].to(seq.dtype)], dim=0)
    return GenerationResult(tokenizer.decode(out), tuple(out), truncated=True)


def answer_targets(prompt: PromptAssembly, num_queries: int) -> tuple[torch.Tensor, torch.Tensor]:
    """``(logit_positions, target_ids)`` for next-token loss on the answer tokens only.

    Answer token ``i`` sits at assembled position ``i - 1 + num_queries`` and is
    predicted from the position before it.
    """
    targets = [i for i, t in enumerate(prompt.target_mask) if t]
    positions = torch.tensor([spliced_position(prompt, i, num_queries) - 1 for i in targets], dtype=torch.long)
    ids = torch.tensor([prompt.token_ids[i] for i in targets], dtype=torch.long)
    return positions, ids
