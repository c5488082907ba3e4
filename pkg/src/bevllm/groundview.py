"""Rule-based grounding captions from structured scene annotations.

Quantities are verbalised as "one" (1), "several" (2) and "many" (3 or more);
absent categories are not mentioned. Category order is by descending count,
then alphabetical.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .bev_partition import NUM_VIEWS
from .errors import InputDomainError

log = logging.getLogger(__name__)

ENVIRONMENT_KEYS = ("weather", "lighting", "road")


@lru_cache(maxsize=None)
def load_templates(path: str | None = None) -> dict:
    if path is None:
        text = resources.files("bevllm").joinpath("assets/groundview_templates.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ObjectCount:
    category: str
    view: int
    count: int


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    objects: tuple[ObjectCount, ...] = ()
    environment: dict = field(default_factory=dict)

    def __post_init__(self):
        for o in self.objects:
            if not o.category:
                raise InputDomainError(f"{self.sample_id}: empty object category")
            if o.view not in range(NUM_VIEWS):
                raise InputDomainError(f"{self.sample_id}: view {o.view} outside 0..5")
            if o.count < 0:
                raise InputDomainError(f"{self.sample_id}: negative count for {o.category}")
        unknown = set(self.environment) - set(ENVIRONMENT_KEYS)
        if unknown:
            raise InputDomainError(f"{self.sample_id}: unknown environment tags {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        objects = tuple(
            ObjectCount(str(o["category"]), int(o["view"]), int(o["count"])) for o in d.get("objects", [])
        )
        return cls(str(d["sample_id"]), objects, dict(d.get("environment") or {}))

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "objects": [{"category": o.category, "view": o.view, "count": o.count} for o in self.objects],
            "environment": dict(self.environment),
        }


@dataclass(frozen=True)
class CaptionRecord:
    sample_id: str
    view: int | str
    text: str
    template_version: str

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "view": self.view, "text": self.text,
                "template_version": self.template_version}


def quantify(count: int, templates: dict | None = None) -> str | None:
    """Quantifier word for a count; ``None`` means the category is omitted."""
    if count < 0:
        raise InputDomainError(f"count must be non-negative, got {count}")
    q = (templates or load_templates())["quantifiers"]
    if count == 0:
        return None
    if count == 1:
        return q["1"]
    if count == 2:
        return q["2"]
    return q["many"]


def pluralize(noun: str, templates: dict) -> str:
    if noun in templates["plurals"]:
        return templates["plurals"][noun]
    if noun.endswith(("s", "x", "ch", "sh")):
        return noun + "es"
    return noun + "s"


def _join(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def aggregate_counts(annotation: AnnotationRecord, view_filter) -> Counter:
    counts: Counter = Counter()
    for o in annotation.objects:
        if view_filter == "all" or o.view == view_filter:
            counts[o.category] += o.count
    return counts


def _environment_sentence(env: dict, t: dict) -> str | None:
    if not any(env.get(k) for k in ENVIRONMENT_KEYS):
        return None
    road = ""
    if env.get("road"):
        article = "an" if env["road"][0] in "aeiou" else "a"
        road = t["road_clause"].format(article=article, road=env["road"])
    adjectives = " ".join(env[k] for k in ("weather", "lighting") if env.get(k))
    if adjectives:
        return t["environment_sentence"].format(adjectives=adjectives, road=road)
    return t["environment_sentence_plain"].format(road=road)


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:]


def generate_caption(annotation: AnnotationRecord, view_filter="all", templates: dict | None = None) -> CaptionRecord:
    t = templates or load_templates()
    if view_filter != "all" and view_filter not in range(NUM_VIEWS):
        raise InputDomainError(f"view filter must be 'all' or 0..5, got {view_filter!r}")
    location = t["all_location"] if view_filter == "all" else t["view_location"].format(
        view=t["view_names"][view_filter])
    counts = aggregate_counts(annotation, view_filter)
    ordered = sorted((c for c in counts if counts[c] > 0), key=lambda c: (-counts[c], c))
    phrases = []
    for cat in ordered:
        n = counts[cat]
        noun = cat if n == 1 else pluralize(cat, t)
        phrases.append(f"{quantify(n, t)} {noun}")
    sentences = []
    env = _environment_sentence(annotation.environment, t)
    if env:
        sentences.append(env)
    if phrases:
        verb = "is" if counts[ordered[0]] == 1 else "are"
        sentences.append(t["object_sentence"].format(location=location, verb=verb, objects=_join(phrases)))
    elif env is None:
        sentences.append(t["empty_scene"].format(location=location))
    text = " ".join(_capitalize(s) for s in sentences)
    return CaptionRecord(annotation.sample_id, view_filter, text, t["version"])


@dataclass
class CorpusStats:
    records: int = 0
    skipped: int = 0
    captions: int = 0
    vocabulary_size: int = 0
    quantifiers: dict = field(default_factory=dict)
    template_version: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _views(mode) -> list:
    if mode == "per-view":
        return list(range(NUM_VIEWS))
    return [mode]


def generate_corpus(in_path, out_path, view="all", templates: dict | None = None,
                    max_skip_fraction: float = 0.01) -> tuple[CorpusStats, bool]:
    """Caption every record in a JSONL annotation file.

    Writes captions to ``out_path`` and stats to ``<out_path>.stats.json``.
    Returns ``(stats, ok)``; ``ok`` is False when more than ``max_skip_fraction``
    of the non-blank lines were malformed.
    """
    t = templates or load_templates()
    views = _views(view)
    stats = CorpusStats(template_version=t["version"])
    vocab: set[str] = set()
    quant: Counter = Counter()
    out_lines = []
    with open(in_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = AnnotationRecord.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                stats.skipped += 1
                log.warning("line %d: skipped malformed record (%s)", lineno, exc)
                continue
            stats.records += 1
            for v in views:
                cap = generate_caption(record, v, t)
                out_lines.append(json.dumps(cap.to_dict(), sort_keys=True))
                vocab.update(cap.text.lower().replace(".", " ").replace(",", " ").split())
                for n in aggregate_counts(record, v).values():
                    word = quantify(n, t)
                    if word:
                        quant[word] += 1
    stats.captions = len(out_lines)
    stats.vocabulary_size = len(vocab)
    stats.quantifiers = dict(sorted(quant.items()))
    with open(out_path, "w") as fh:
        fh.writelines(line + "\n" for line in out_lines)
    Path(str(out_path) + ".stats.json").write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
    total = stats.records + stats.skipped
    ok = total == 0 or stats.skipped / total <= max_skip_fraction
    return stats, ok
