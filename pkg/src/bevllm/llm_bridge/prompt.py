"""Llama-3 style chat prompt with a single ``<bev>`` insertion slot."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import TemplateError
from .tokenizer import BEV, BOT, EOT, HEADER_CLOSE, HEADER_OPEN, WordTokenizer

ROLES = ("system", "user", "assistant")
DEFAULT_SYSTEM = "You are a driving assistant. Describe the scene around the ego vehicle."


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str


@dataclass(frozen=True)
class PromptAssembly:
    messages: tuple[ChatMessage, ...]
    text: str
    token_ids: tuple[int, ...]
    bev_slot: int
    generation_start: int
    # True where the token is a supervised answer token (training mode only)
    target_mask: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


def header(role: str) -> str:
    return f"{HEADER_OPEN}{role}{HEADER_CLOSE}\n\n"


def render(messages) -> str:
    body = "".join(f"{header(m.role)}{m.text}{EOT}" for m in messages)
    return f"{BOT}{body}{header('assistant')}"


def _check(messages) -> None:
    bev_count = 0
    for m in messages:
        if m.role not in ROLES:
            raise TemplateError(f"unknown role {m.role!r}")
        n = m.text.count(BEV)
        if n and m.role != "user":
            raise TemplateError(f"{BEV} placeholder only allowed in user messages, found in {m.role!r}")
        bev_count += n
    if bev_count != 1:
        raise TemplateError(f"captioning prompt needs exactly one {BEV} placeholder, found {bev_count}")


def build_prompt(messages, tokenizer: WordTokenizer, answer: str | None = None) -> PromptAssembly:
    """Render messages, then the assistant header. ``answer`` appends a supervised reply."""
    messages = tuple(messages)
    _check(messages)
    text = render(messages)
    ids = tokenizer.encode(text)
    generation_start = len(ids)
    target = [False] * len(ids)
    if answer is not None:
        answer_ids = tokenizer.encode(answer) + [tokenizer.eot_id]
        text = f"{text}{answer}{EOT}"
        ids += answer_ids
        target += [True] * len(answer_ids)
    return PromptAssembly(
        messages=messages,
        text=text,
        token_ids=tuple(ids),
        bev_slot=ids.index(tokenizer.bev_id),
        generation_start=generation_start,
        target_mask=tuple(target),
    )


def caption_messages(instruction: str, system: str = DEFAULT_SYSTEM) -> list[ChatMessage]:
    return [ChatMessage("system", system), ChatMessage("user", f"{instruction} {BEV}")]
