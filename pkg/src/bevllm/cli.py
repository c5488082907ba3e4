"""Command-line front end: encode, train-toy, caption, eval, gen-groundview."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import tensor_io
from .config import PROFILES, load_config
from .errors import ConfigurationError, ShapeError, TensorFormatError

log = logging.getLogger("bevllm")


def _common(p: argparse.ArgumentParser, out_required=False):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--profile", default="toy", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=out_required)


def _config(args):
    cfg = load_config(args.config, args.profile)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _shape(t) -> str:
    return "×".join(str(s) for s in t)


def cmd_encode(args) -> int:
    from .bev_partition import build_view_map
    from .pos_encoding import BevFeatureMap, apply_positional_encoding, build_positional_map
    from .qformer import init_qformer
    from .trainer import SyntheticBevProvider, make_synthetic_dataset

    cfg = _config(args)
    grid = cfg.grid()
    stage = "view map"
    try:
        view_map = build_view_map(grid)
        stage = "features"
        if args.features:
            tensors, _ = tensor_io.load(args.features)
            if "features" not in tensors:
                raise TensorFormatError(f"{args.features}: no tensor named 'features' (found {sorted(tensors)})")
            values = torch.from_numpy(tensors["features"]).float()
            if values.dim() == 2:
                values = values.reshape(values.shape[0], grid.height, grid.width)
            features = BevFeatureMap(grid=grid, values=values)
        else:
            seed = cfg.seed if args.synthetic is None else args.synthetic
            provider = SyntheticBevProvider(cfg.bev_channels, seed=cfg.bev_seed)
            features = make_synthetic_dataset(1, grid, seed, cfg.bev_channels, provider)[0].features
        stage = "positional encoding"
        encoded = apply_positional_encoding(features, build_positional_map(view_map, cfg.bev_channels))
        flat = encoded.flattened()
        stage = "q-former"
        qformer = init_qformer(cfg.qformer_config(vocab_size=16))
        with torch.no_grad():
            queries = qformer.encode_bev(encoded)
        expected = (cfg.num_queries, cfg.d_q)
        if tuple(queries.shape) != expected:
            raise ShapeError(f"queries {tuple(queries.shape)} != {expected}")
    except (ShapeError, TensorFormatError, ConfigurationError, ValueError) as exc:
        log.error("shape chain failed at stage '%s': %s", stage, exc)
        return 2
    chain = f"{_shape(flat.shape)} → {_shape(queries.shape)}"
    log.info("shape chain: %s", chain)
    print(chain)
    if args.out:
        tensor_io.save(args.out, {"queries": queries, "view_map": view_map.cells},
                       meta={"config": cfg.to_dict(), "chain": chain})
    return 0


def cmd_train(args) -> int:
    from .trainer import overfit_smoke, save_checkpoint

    cfg = _config(args)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    result = overfit_smoke(cfg, metrics_path=out / "metrics.jsonl")
    save_checkpoint(out / "checkpoint.tns", result.bundle)
    log.info("%s; caption prefix match %s", result.reason, result.caption_match)
    summary = {"passed": result.passed, "reason": result.reason, "caption_match": result.caption_match,
               "steps": len(result.trajectory)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0 if result.trajectory else 1


def cmd_caption(args) -> int:
    from .trainer import dataset_for, load_checkpoint

    try:
        bundle = load_checkpoint(args.checkpoint)
    except (TensorFormatError, OSError) as exc:
        log.error("cannot load checkpoint: %s", exc)
        return 2
    cfg = bundle.config
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    scenes = dataset_for(cfg, bundle)
    if not 0 <= args.scene < len(scenes):
        log.error("scene index %d outside 0..%d", args.scene, len(scenes) - 1)
        return 2
    result = bundle.caption_scene(scenes[args.scene], args.max_new_tokens)
    print(result.text)
    if args.out:
        rec = {"id": scenes[args.scene].annotation.sample_id, "text": result.text, "truncated": result.truncated}
        Path(args.out).write_text(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def _read_jsonl(path) -> dict[str, str]:
    records = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                rec = json.loads(line)
                if rec["id"] in records:
                    raise ValueError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
                records[rec["id"]] = rec["text"]
    return records


def cmd_eval(args) -> int:
    from .metrics import evaluate_corpus

    try:
        preds, refs = _read_jsonl(args.pred), _read_jsonl(args.ref)
    except (ValueError, KeyError, OSError) as exc:
        log.error("cannot read corpora: %s", exc)
        return 2
    if set(preds) != set(refs):
        missing = sorted(set(refs) ^ set(preds))
        log.error("prediction/reference ids differ: %s", missing[:10])
        return 3
    ids = sorted(refs)
    report = evaluate_corpus([preds[i] for i in ids], [refs[i] for i in ids], smoothing=args.smoothing)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gen_groundview(args) -> int:
    from .groundview import generate_corpus

    view = args.view if args.view in ("all", "per-view") else int(args.view)
    stats, ok = generate_corpus(args.input, args.out, view)
    print(json.dumps(stats.to_dict(), sort_keys=True))
    if not ok:
        log.error("%d of %d records malformed (more than 1%%)", stats.skipped, stats.records + stats.skipped)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevllm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="BEV features -> query embeddings")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--features", help=".tns file with a C x H x W (or C x HW) tensor named 'features'")
    src.add_argument("--synthetic", type=int, metavar="SEED", help="synthesize a scene with this seed")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-toy", help="overfit smoke training run")
    _common(p, out_required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="greedy caption for a synthetic training scene")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--max-new-tokens", type=int, default=40)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("eval", help="captioning metrics over two JSONL corpora (records: id, text)")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smoothing", action="store_true", help="add-one smoothing for BLEU orders > 1")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-groundview", help="grounding captions from JSONL annotations")
    _common(p, out_required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--view", default="all", choices=["all", "per-view", *map(str, range(6))])
    p.set_defaults(func=cmd_gen_groundview)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
