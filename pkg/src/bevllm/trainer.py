"""Desk-scale training harness: synthetic scenes, the frozen/trainable split, overfit smoke run."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import tensor_io
from .bev_partition import NUM_VIEWS, VIEW_NAMES, GridSpec, ViewClassificationMap, build_view_map, view_mask
from .config import PipelineConfig
from .errors import InputDomainError, NumericError
from .groundview import AnnotationRecord, ObjectCount, generate_caption
from .llm_bridge import (
    ProjectionMlp,
    ToyFrozenLm,
    WordTokenizer,
    answer_targets,
    assemble_llm_input,
    build_prompt,
    caption_messages,
    generate_caption as decode_caption,
    make_adapters,
)
from .llm_bridge.prompt import DEFAULT_SYSTEM
from .losses import AlignmentBatch, btc_loss, btm_loss, combined_loss, in_batch_negatives
from .pos_encoding import BevFeatureMap, PositionalEncodingMap, apply_positional_encoding, build_positional_map
from .qformer import QFormer, init_qformer

log = logging.getLogger(__name__)

CATEGORIES = ("barrier", "bicycle", "bus", "car", "motorcycle", "pedestrian", "traffic cone", "truck")
WEATHER = ("clear", "cloudy", "rainy")
LIGHTING = ("day", "night")
ROADS = ("highway", "residential", "urban")
FROZEN = ("bev_provider", "toy_lm")
TRAINABLE = ("qformer", "mlp", "lora")


class SyntheticBevProvider(nn.Module):
    """Frozen stand-in for the BEV encoder: per-category and per-tag codes painted into view sectors."""

    def __init__(self, channels: int, seed: int = 4321):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.channels = channels
        self.category_codes = nn.Parameter(torch.randn(len(CATEGORIES), channels, generator=gen))
        tags = len(WEATHER) + len(LIGHTING) + len(ROADS)
        self.environment_codes = nn.Parameter(torch.randn(tags, channels, generator=gen))
        self.requires_grad_(False)

    def _tag_index(self, key, value):
        offsets = {"weather": (0, WEATHER), "lighting": (len(WEATHER), LIGHTING),
                   "road": (len(WEATHER) + len(LIGHTING), ROADS)}
        base, names = offsets[key]
        return base + names.index(value)

    @torch.no_grad()
    def forward(self, annotation: AnnotationRecord, view_map: ViewClassificationMap, noise_seed: int) -> BevFeatureMap:
        grid = view_map.grid
        gen = torch.Generator().manual_seed(noise_seed)
        values = 0.1 * torch.randn(self.channels, grid.height, grid.width, generator=gen)
        for key, value in annotation.environment.items():
            values += 0.5 * self.environment_codes[self._tag_index(key, value)][:, None, None]
        for obj in annotation.objects:
            mask = torch.from_numpy(view_mask(view_map, obj.view))
            code = self.category_codes[CATEGORIES.index(obj.category)]
            values[:, mask] += 0.5 * obj.count * code[:, None]
        return BevFeatureMap(grid=grid, values=values)


@dataclass(frozen=True)
class SyntheticScene:
    index: int
    annotation: AnnotationRecord
    view: int
    features: BevFeatureMap = field(repr=False)
    caption: str

    @property
    def instruction(self) -> str:
        return f"Describe the {VIEW_NAMES[self.view]} view."


def _random_annotation(rng: np.random.Generator, sample_id: str) -> tuple[AnnotationRecord, int]:
    view = int(rng.integers(NUM_VIEWS))
    objects = []
    for cat in rng.choice(len(CATEGORIES), size=int(rng.integers(1, 4)), replace=False):
        objects.append(ObjectCount(CATEGORIES[int(cat)], view, int(rng.integers(1, 5))))
    for _ in range(int(rng.integers(0, 3))):
        other = int((view + rng.integers(1, NUM_VIEWS)) % NUM_VIEWS)
        objects.append(ObjectCount(CATEGORIES[int(rng.integers(len(CATEGORIES)))], other, int(rng.integers(1, 4))))
    env = {"weather": WEATHER[int(rng.integers(len(WEATHER)))], "lighting": LIGHTING[int(rng.integers(len(LIGHTING)))]}
    if rng.random() < 0.5:
        env["road"] = ROADS[int(rng.integers(len(ROADS)))]
    return AnnotationRecord(sample_id, tuple(objects), env), view


def make_scene(index: int, annotation: AnnotationRecord, view: int, view_map: ViewClassificationMap,
               provider: SyntheticBevProvider, seed: int) -> SyntheticScene:
    features = provider(annotation, view_map, noise_seed=seed * 100003 + index)
    caption = generate_caption(annotation, view).text
    return SyntheticScene(index, annotation, view, features, caption)


def make_synthetic_dataset(n: int, grid: GridSpec, seed: int, channels: int = 32,
                           provider: SyntheticBevProvider | None = None) -> list[SyntheticScene]:
    """``n`` seeded scenes with distinct captions derived from their layouts."""
    if n <= 0:
        raise InputDomainError(f"dataset size must be positive, got {n}")
    provider = provider or SyntheticBevProvider(channels)
    view_map = build_view_map(grid)
    rng = np.random.default_rng(seed)
    scenes: list[SyntheticScene] = []
    seen = set()
    while len(scenes) < n:
        annotation, view = _random_annotation(rng, f"scene-{seed}-{len(scenes)}")
        caption = generate_caption(annotation, view).text
        if caption in seen:
            continue
        seen.add(caption)
        scenes.append(make_scene(len(scenes), annotation, view, view_map, provider, seed))
    return scenes


# -- model bundle -------------------------------------------------------------------


@dataclass
class ModelBundle:
    config: PipelineConfig
    tokenizer: WordTokenizer
    view_map: ViewClassificationMap
    pos_map: PositionalEncodingMap
    bev_provider: SyntheticBevProvider
    qformer: QFormer
    mlp: ProjectionMlp
    lm: ToyFrozenLm
    lora: nn.ModuleDict

    def owners(self) -> dict[str, nn.Module]:
        return {"bev_provider": self.bev_provider, "toy_lm": self.lm,
                "qformer": self.qformer, "mlp": self.mlp, "lora": self.lora}

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for name in TRAINABLE for p in self.owners()[name].parameters()]

    def checksums(self) -> dict[str, str]:
        return {name: module_checksum(m) for name, m in self.owners().items()}

    # -- forwards -------------------------------------------------------------

    def encoded_features(self, scenes) -> torch.Tensor:
        return torch.stack([apply_positional_encoding(s.features, self.pos_map).flattened() for s in scenes])

    def text_batch(self, captions) -> tuple[torch.Tensor, torch.Tensor]:
        """Q-Former text ids ``[begin_of_text] + caption + [eot]``, right-padded."""
        tok = self.tokenizer
        rows = [[tok.id_of("<|begin_of_text|>")] + tok.encode(c) + [tok.eot_id] for c in captions]
        length = self.config.max_text_len
        if max(map(len, rows)) > length:
            raise InputDomainError(f"caption longer than max_text_len={length}")
        ids = torch.full((len(rows), length), tok.pad_id, dtype=torch.long)
        mask = torch.zeros(len(rows), length, dtype=torch.bool)
        for i, r in enumerate(rows):
            ids[i, :len(r)] = torch.tensor(r)
            mask[i, :len(r)] = True
        return ids, mask

    def prompt_for(self, scene: SyntheticScene, with_answer: bool):
        return build_prompt(caption_messages(scene.instruction), self.tokenizer,
                            answer=scene.caption if with_answer else None)

    def caption_loss(self, scenes, queries) -> torch.Tensor:
        """LM cross-entropy over the assistant answer tokens only."""
        projected = self.mlp(queries)
        q = self.config.num_queries
        losses = []
        for scene, proj in zip(scenes, projected):
            prompt = self.prompt_for(scene, with_answer=True)
            embeds = assemble_llm_input(prompt, proj, self.lm.embedding_table)
            logits = self.lm(embeds, self.lora)[0]
            positions, ids = answer_targets(prompt, q)
            losses.append(F.cross_entropy(logits[positions], ids))
        return torch.stack(losses).mean()

    def losses(self, scenes, generator: torch.Generator) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        cfg = self.config
        feats = self.encoded_features(scenes)
        queries = self.qformer.encode_bev(feats)
        ids, mask = self.text_batch([s.caption for s in scenes])
        pooled, _ = self.qformer.encode_text(ids, mask)
        b = len(scenes)
        if b >= 2:
            neg = in_batch_negatives(b, generator)
            match_feats = torch.cat([feats, feats])
            match_ids, match_mask = torch.cat([ids, ids[neg]]), torch.cat([mask, mask[neg]])
            labels = torch.cat([torch.ones(b), torch.zeros(b)])
        else:
            match_feats, match_ids, match_mask, labels = feats, ids, mask, torch.ones(1)
        match_logits = self.qformer.match_logits(match_feats, match_ids, match_mask)
        batch = AlignmentBatch(
            query_embeddings=queries, pooled_text=pooled, text_token_ids=ids, text_mask=mask,
            match_labels=labels.to(feats.dtype), temperature=cfg.temperature,
            loss_weights=(cfg.w_btc, cfg.w_btg, cfg.w_btm), similarity=cfg.similarity,
        )
        caption = self.caption_loss(scenes, queries)
        if cfg.btg_path == "qformer":
            gen_logits = self.qformer.text_generation_logits(feats, ids, mask)
            total, terms = combined_loss(batch, gen_logits, match_logits)
            total = total + cfg.w_caption * caption
        else:
            terms = {"btc": btc_loss(batch), "btm": btm_loss(match_logits, batch.match_labels)}
            terms["btg"] = caption
            total = cfg.w_btc * terms["btc"] + cfg.w_btg * caption + cfg.w_btm * terms["btm"]
        terms["caption"] = caption
        return total, terms

    @torch.no_grad()
    def caption_scene(self, scene: SyntheticScene, max_new_tokens: int = 40, mode: str = "greedy"):
        queries = self.qformer.encode_bev(self.encoded_features([scene]))
        prompt = self.prompt_for(scene, with_answer=False)
        embeds = assemble_llm_input(prompt, self.mlp(queries[0]), self.lm.embedding_table)
        return decode_caption(self.lm, self.lora, embeds, self.tokenizer, max_new_tokens, mode)


def module_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def corpus_texts(scenes) -> list[str]:
    texts = [DEFAULT_SYSTEM]
    for s in scenes:
        texts += [s.caption, s.instruction]
    for v in VIEW_NAMES:
        texts.append(f"Describe the {v} view.")
    return texts


def build_bundle(config: PipelineConfig, scenes=None, tokenizer: WordTokenizer | None = None) -> ModelBundle:
    config.validate()
    grid = config.grid()
    view_map = build_view_map(grid)
    pos_map = build_positional_map(view_map, config.bev_channels)
    if tokenizer is None:
        tokenizer = WordTokenizer.build(corpus_texts(scenes or []), max_size=config.vocab_max)
    provider = SyntheticBevProvider(config.bev_channels, seed=config.bev_seed)
    qformer = init_qformer(config.qformer_config(vocab_size=len(tokenizer)))
    mlp = ProjectionMlp(config.d_q, config.d_llm, config.mlp_hidden, seed=config.seed + 1)
    lm = ToyFrozenLm(config.lm_config(vocab_size=len(tokenizer)))
    lora = make_adapters(lm, config.lora_rank, config.lora_alpha, seed=config.seed + 2)
    return ModelBundle(config, tokenizer, view_map, pos_map, provider, qformer, mlp, lm, lora)


def dataset_for(config: PipelineConfig, bundle: ModelBundle | None = None) -> list[SyntheticScene]:
    provider = bundle.bev_provider if bundle else SyntheticBevProvider(config.bev_channels, seed=config.bev_seed)
    return make_synthetic_dataset(config.num_scenes, config.grid(), config.seed, config.bev_channels, provider)


# -- training ---------------------------------------------------------------------


class Trainer:
    """Owns the optimizer and the batch sampler for one bundle."""

    def __init__(self, bundle: ModelBundle, scenes, config: PipelineConfig | None = None):
        self.bundle = bundle
        self.scenes = list(scenes)
        self.config = config or bundle.config
        self.optimizer = torch.optim.Adam(bundle.trainable_parameters(), lr=self.config.learning_rate,
                                          betas=(0.9, 0.999))
        self.generator = torch.Generator().manual_seed(self.config.seed + 7)
        self.step_count = 0

    def next_batch(self):
        order = torch.randperm(len(self.scenes), generator=self.generator).tolist()
        return [self.scenes[i] for i in order[: self.config.batch_size]]

    def train_step(self, batch=None) -> dict[str, float]:
        batch = batch if batch is not None else self.next_batch()
        self.step_count += 1
        self.optimizer.zero_grad(set_to_none=True)
        total, terms = self.bundle.losses(batch, self.generator)
        for name, value in [("total", total), *terms.items()]:
            if not torch.isfinite(value):
                raise NumericError(f"step {self.step_count}: non-finite {name} loss ({value.item()})")
        total.backward()
        self.optimizer.step()
        record = {"step": self.step_count, **{k: v.item() for k, v in terms.items()}, "total": total.item()}
        return record


def train_step(trainer: Trainer, batch=None) -> dict[str, float]:
    return trainer.train_step(batch)


@dataclass
class SmokeResult:
    trajectory: list[dict]
    passed: bool
    reason: str
    caption_match: float | None = None
    seconds: float = 0.0
    bundle: ModelBundle | None = field(default=None, repr=False)
    scenes: list | None = field(default=None, repr=False)


def prefix_match(generated_ids, reference_ids, n: int = 10) -> float:
    ref = list(reference_ids)[:n]
    gen = list(generated_ids)[:n]
    return sum(1 for a, b in zip(gen, ref) if a == b) / len(ref)


def overfit_smoke(config: PipelineConfig, metrics_path=None, ratio: float = 0.2) -> SmokeResult:
    """Train on a handful of synthetic scenes; pass iff final total <= ``ratio`` x first total."""
    start = time.perf_counter()
    provider = SyntheticBevProvider(config.bev_channels, seed=config.bev_seed)
    scenes = make_synthetic_dataset(config.num_scenes, config.grid(), config.seed, config.bev_channels, provider)
    bundle = build_bundle(config, scenes)
    trainer = Trainer(bundle, scenes)
    trajectory = []
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for _ in range(config.steps):
            rec = trainer.train_step()
            trajectory.append(rec)
            if sink:
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if sink:
            sink.close()
    seconds = time.perf_counter() - start
    if not trajectory:
        return SmokeResult([], False, "no training", seconds=seconds, bundle=bundle, scenes=scenes)
    first, last = trajectory[0]["total"], trajectory[-1]["total"]
    scene = scenes[0]
    result = bundle.caption_scene(scene)
    match = prefix_match(result.token_ids, bundle.tokenizer.encode(scene.caption))
    passed = last <= ratio * first
    reason = f"total loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f})"
    return SmokeResult(trajectory, passed, reason, match, seconds, bundle, scenes)


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(path, bundle: ModelBundle) -> None:
    tensors = {}
    for owner, module in bundle.owners().items():
        for name, t in module.state_dict().items():
            tensors[f"{owner}.{name}"] = t
    meta = {"config": bundle.config.to_dict(), "vocab": bundle.tokenizer.vocab}
    tensor_io.save(path, tensors, meta)


def load_checkpoint(path) -> ModelBundle:
    tensors, meta = tensor_io.load(path)
    config = PipelineConfig(**meta["config"]).validate()
    bundle = build_bundle(config, tokenizer=WordTokenizer(meta["vocab"]))
    for owner, module in bundle.owners().items():
        prefix = owner + "."
        state = {k[len(prefix):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith(prefix)}
        module.load_state_dict(state, strict=True)
    return bundle


def write_metrics(path, trajectory) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in trajectory))
