"""Captioning metrics: corpus BLEU-1..4, ROUGE-L F1 and greedy-matching BERT-score.

All metrics share one tokenization: lowercase, punctuation stripped, split on
whitespace.
"""

from __future__ import annotations

import hashlib
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmbedderError, InputDomainError

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")

Embedder = Callable[[Sequence[str]], np.ndarray]


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_corpus(candidates, references):
    if len(candidates) != len(references):
        raise InputDomainError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise InputDomainError("empty corpus")


def modified_precision(candidates, references, n: int) -> tuple[int, int]:
    """Corpus totals ``(clipped matches, candidate n-grams)`` for order ``n``."""
    _check_corpus(candidates, references)
    clipped = total = 0
    for cand, ref in zip(candidates, references):
        c = ngrams(tokenize(cand), n)
        r = ngrams(tokenize(ref), n)
        clipped += sum(min(k, r[g]) for g, k in c.items())
        total += sum(c.values())
    return clipped, total


def brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def bleu(candidates, references, n: int = 4, smoothing: bool = False) -> float:
    """Cumulative corpus BLEU-n with uniform weights.

    ``smoothing`` adds one to numerator and denominator of every order above 1.
    """
    if n not in (1, 2, 3, 4):
        raise InputDomainError(f"BLEU order must be 1..4, got {n}")
    _check_corpus(candidates, references)
    log_sum = 0.0
    for k in range(1, n + 1):
        clipped, total = modified_precision(candidates, references, k)
        if smoothing and k > 1:
            clipped, total = clipped + 1, total + 1
        if clipped == 0 or total == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    c = sum(len(tokenize(x)) for x in candidates)
    r = sum(len(tokenize(x)) for x in references)
    return brevity_penalty(c, r) * math.exp(log_sum / n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_f1(candidate: str, reference: str) -> float:
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        raise InputDomainError("ROUGE-L needs non-empty candidate and reference")
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2 * p * rec / (p + rec)


class HashedContextEmbedder:
    """Deterministic stand-in for a contextual encoder.

    A token's vector is its hashed random vector plus ``context_weight`` times
    the mean of its neighbours' within ``window``.
    """

    def __init__(self, dim: int = 64, window: int = 1, context_weight: float = 0.5):
        self.dim = dim
        self.window = window
        self.context_weight = context_weight

    def _word(self, w: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.blake2b(w.encode(), digest_size=8).digest(), "little")
        return np.random.default_rng(seed).standard_normal(self.dim)

    def __call__(self, tokens: Sequence[str]) -> np.ndarray:
        base = np.stack([self._word(t) for t in tokens]) if tokens else np.zeros((0, self.dim))
        out = base.copy()
        for i in range(len(tokens)):
            lo, hi = max(0, i - self.window), min(len(tokens), i + self.window + 1)
            ctx = [j for j in range(lo, hi) if j != i]
            if ctx:
                out[i] += self.context_weight * base[ctx].mean(axis=0)
        return out


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise EmbedderError("embedder returned a zero vector")
    return x / norms


def _embed(embedder: Embedder, tokens) -> np.ndarray:
    try:
        emb = np.asarray(embedder(tokens), dtype=np.float64)
    except EmbedderError:
        raise
    except Exception as exc:
        raise EmbedderError(f"embedder failed: {exc}") from exc
    if emb.ndim != 2 or emb.shape[0] != len(tokens):
        raise EmbedderError(f"embedder returned shape {emb.shape} for {len(tokens)} tokens")
    return emb


def bert_score_pair(candidate, reference, embedder: Embedder) -> tuple[float, float, float]:
    """Greedy cosine matching; ``candidate``/``reference`` are texts or token lists."""
    c = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    r = tokenize(reference) if isinstance(reference, str) else list(reference)
    if not c or not r:
        raise InputDomainError("BERT-score needs non-empty candidate and reference")
    sim = _unit_rows(_embed(embedder, c)) @ _unit_rows(_embed(embedder, r)).T
    p = float(sim.max(axis=1).mean())
    rec = float(sim.max(axis=0).mean())
    f1 = 0.0 if p + rec == 0 else 2 * p * rec / (p + rec)
    return p, rec, f1


def bert_score(candidates, references, embedder: Embedder | None = None) -> tuple[float, float, float]:
    """Corpus means of per-pair precision, recall and F1."""
    _check_corpus(candidates, references)
    embedder = embedder or HashedContextEmbedder()
    scores = np.array([bert_score_pair(c, r, embedder) for c, r in zip(candidates, references)])
    p, r, f = scores.mean(axis=0)
    return float(p), float(r), float(f)


@dataclass
class MetricReport:
    bleu: dict[int, float] = field(default_factory=dict)
    rouge_l_f1: float = 0.0
    bert_precision: float = 0.0
    bert_recall: float = 0.0
    bert_f1: float = 0.0
    corpus_size: int = 0

    def to_dict(self) -> dict:
        return {
            "bleu": {str(k): v for k, v in sorted(self.bleu.items())},
            "rouge_l_f1": self.rouge_l_f1,
            "bert_precision": self.bert_precision,
            "bert_recall": self.bert_recall,
            "bert_f1": self.bert_f1,
            "corpus_size": self.corpus_size,
        }


def evaluate_corpus(candidates, references, embedder: Embedder | None = None,
                    smoothing: bool = False) -> MetricReport:
    _check_corpus(candidates, references)
    p, r, f = bert_score(candidates, references, embedder)
    return MetricReport(
        bleu={n: bleu(candidates, references, n, smoothing) for n in (1, 2, 3, 4)},
        rouge_l_f1=float(np.mean([rouge_l_f1(c, ref) for c, ref in zip(candidates, references)])),
        bert_precision=p,
        bert_recall=r,
        bert_f1=f,
        corpus_size=len(candidates),
    )
