"""Command-line entry point: ingest, generate-prompts, pretrain, evaluate, synth-smoke.

Any ``--section.key value`` (or ``--section.key=value``) pair is applied as a
config override after the config file.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig, resolve_config
from .errors import C2VLError, ConfigError

logger = logging.getLogger("c2vl")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def split_overrides(extra: Sequence[str]) -> Tuple[dict, List[str]]:
    """Pull ``--a.b value`` / ``--a.b=value`` pairs out of leftover argv."""
    overrides, unknown = {}, []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            key, eq, val = tok[2:].partition("=")
            if not eq:
                if i + 1 >= len(extra):
                    raise UsageError(f"override {tok} needs a value")
                val = extra[i + 1]
                i += 1
            overrides[key] = val
        else:
            unknown.append(tok)
        i += 1
    return overrides, unknown


def echo_config(cfg: RunConfig, out_dir) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    digest = cfg.digest()
    (out / "config.digest").write_text(digest + "\n", encoding="utf-8")
    return digest


# ---------------------------------------------------------------- commands

def cmd_ingest(args, overrides):
    from .data import ingest
    path = ingest(args.raw, args.out, args.dataset, args.splits, args.frames)
    print(f"wrote {path}")


def _skeleton_frames(seq):
    from .data import ntu25_bones
    from .prompts import SkeletonFrames
    edges = ntu25_bones().edges if seq.joints == 25 else ()
    return SkeletonFrames(seq.data, edges=edges, object_hue=seq.meta.get("hue"))


def cmd_generate_prompts(args, overrides):
    from .data import read_sequences
    from .prompts import FramePolicy, PromptCache, VideoFrames, generate_prompts, make_engine

    cfg = resolve_config(args.config, overrides)
    seqs, _ = read_sequences(args.dataset)
    client = make_engine(args.engine or cfg.engine.mode, cfg.engine.seed)
    policy = FramePolicy(frames=args.frames or cfg.engine.frames, threshold=cfg.engine.threshold,
                         fallback_fullframe=args.fallback_fullframe or cfg.engine.fallback_fullframe)
    videos = Path(args.videos) if args.videos else None

    def source(seq):
        if videos is not None:
            path = videos / f"{seq.sample_id}_rgb.avi"
            if path.exists():
                return lambda: VideoFrames(path)
        return lambda: _skeleton_frames(seq)

    cache = PromptCache(args.cache)
    recs = generate_prompts(((s.sample_id, source(s), s.bodies) for s in seqs), client, cache, policy,
                            cfg.engine.workers)
    print(f"{len(recs)} prompt records in {args.cache}")


def _store_for(cfg, ids, prompts, out_dir):
    from .encoders import make_frozen_encoder
    from .pretrain import PromptStore, store_from_cache
    from .prompts import PromptCache

    store_dir = Path(out_dir) / "prompt_store"
    if (store_dir / "meta.json").exists():
        store = PromptStore.load(store_dir)
        if all(i in set(store.ids) for i in ids):
            return store
    encoder = make_frozen_encoder(cfg.engine.frozen_encoder, cfg.model.embed_dim, cfg.engine.seed)
    store = store_from_cache(PromptCache(prompts), ids, encoder, cfg.model.embed_dim)
    store.save(store_dir)
    return store


def cmd_pretrain(args, overrides):
    from .data import load_dataset
    from .pretrain import pretrain_run

    if args.deterministic:
        overrides = {**overrides, "deterministic": True}
    cfg = resolve_config(args.config, overrides)
    out = Path(args.out or cfg.output_dir)
    digest = echo_config(cfg, out)
    seqs, split = load_dataset(args.data or cfg.data.root, cfg.data.benchmark)
    train = [s for s in seqs if s.sample_id in set(split.train_ids)]
    store = _store_for(cfg, [s.sample_id for s in train], args.prompts or cfg.data.prompts, out)
    for stream in cfg.data.streams:
        run_dir = out / stream if len(cfg.data.streams) > 1 else out
        resume = args.resume if len(cfg.data.streams) == 1 else None
        _, ckpt = pretrain_run(cfg, train, store, run_dir, stream=stream, resume=resume)
        print(f"{stream}: checkpoint {ckpt} (config {digest})")


def _load_eval_split(args, cfg):
    from .data import load_dataset
    seqs, split = load_dataset(args.data or cfg.data.root, cfg.data.benchmark)
    by_id = {s.sample_id: s for s in seqs}
    return [by_id[i] for i in split.train_ids], [by_id[i] for i in split.test_ids]


def cmd_evaluate(args, overrides):
    from . import evaluation as ev
    from .pretrain import load_checkpoint

    if args.k is not None:
        overrides = {**overrides, "eval.k": args.k}
    if args.full_finetune:
        overrides = {**overrides, "eval.full_finetune": True}
    if args.fractions:
        overrides = {**overrides, "eval.semi_fractions": args.fractions}
    cfg = resolve_config(args.config, overrides)
    out = Path(args.out or Path(args.ckpt[0]).parent / "eval")
    digest = echo_config(cfg, out)
    train, test = _load_eval_split(args, cfg)
    remap = json.loads(Path(args.remap).read_text()) if args.remap else None

    reports, heads = [], {}
    for path in args.ckpt:
        ckpt = load_checkpoint(path)
        stream = ckpt["stream"]
        kw = dict(benchmark=cfg.data.benchmark, config_digest=digest)
        if args.protocol == "linear":
            reports.append(ev.linear_probe(ckpt, train, test, cfg.eval, **kw))
        elif args.protocol == "finetune":
            reports.append(ev.finetune_eval(ckpt, train, test, cfg.eval, **kw))
        elif args.protocol == "knn":
            reports.append(ev.knn_eval(ckpt, train, test, cfg.eval.k, **kw))
        elif args.protocol == "semi":
            reports.extend(ev.semi_eval(ckpt, train, test, cfg.eval, **kw))
        elif args.protocol == "transfer":
            reports.append(ev.transfer_eval(ckpt, train, test, cfg.eval, remap=remap, **kw))
        if args.emit_histograms or args.dump_embeddings:
            encoder, _, _ = ev.resolve_encoder(ckpt)
            feats = ev.extract_features(encoder, test, stream)
            if args.dump_embeddings:
                ev.dump_embeddings(out / f"embeddings_{stream}.npz", feats, [s.label for s in test],
                                   [s.sample_id for s in test])
            if args.emit_histograms:
                _emit_histograms(ckpt, test, stream, args, cfg, out)
        if args.protocol == "linear" and len(args.ckpt) > 1:
            heads[stream] = ckpt
    for i, rep in enumerate(reports):
        stem = f"{rep.protocol}_{i}" if len(reports) > 1 else rep.protocol
        rep.save(out, stem)
        print(f"{stem}: top-1 {rep.accuracy:.2f}% {json.dumps({k: v for k, v in rep.extra.items() if k != 'encoder_digest'})}")
    if len(heads) > 1:
        rep = _fuse(heads, train, test, cfg, digest)
        rep.save(out, "fusion")
        print(f"fusion ({rep.extra['streams']}): top-1 {rep.accuracy:.2f}%")


def _fuse(ckpts, train, test, cfg, digest):
    from . import evaluation as ev
    scores, kinds = [], []
    ytr = np.asarray([s.label for s in train])
    for stream, ckpt in ckpts.items():
        encoder, _, _ = ev.resolve_encoder(ckpt)
        head = ev.train_head(ev.extract_features(encoder, train, stream), ytr, int(ytr.max()) + 1,
                             cfg.eval.probe_epochs, cfg.eval.probe_lr, cfg.eval.probe_milestones,
                             cfg.eval.batch_size, cfg.eval.seed)
        scores.append(ev.stream_scores({stream: encoder}, {stream: head}, test).scores[0])
        kinds.append(stream)
    return ev.fuse_streams(ev.StreamScores(scores, kinds), labels=[s.label for s in test],
                           benchmark=cfg.data.benchmark, config_digest=digest)


def _emit_histograms(ckpt, seqs, stream, args, cfg, out):
    import torch
    from . import evaluation as ev
    from .data import stack_batch
    from .pretrain import model_from_checkpoint
    if not args.prompts:
        raise ConfigError("--emit-histograms needs --prompts", path="prompts")
    model = model_from_checkpoint(ckpt).eval()
    store = _store_for(cfg, [s.sample_id for s in seqs], args.prompts, out)
    rows = store.rows([s.sample_id for s in seqs])
    with torch.no_grad():
        s_v, s_l = model(torch.from_numpy(stack_batch(seqs, stream)))
    for name, s, x in (("vision", s_v, store.vision[rows]), ("language", s_l, store.language[rows])):
        ev.write_histogram_csv(out / f"similarity_{stream}_{name}.csv", ev.similarity_histograms(s.numpy(), x))


def cmd_synth_smoke(args, overrides):
    from .pipeline import run_synth, smoke_config

    cfg = smoke_config(args.config, overrides)
    out = Path(args.out or cfg.output_dir)
    echo_config(cfg, out)
    summary = run_synth(cfg, args.seed, out, args.classes, args.per_class)
    ok = summary["linear"] >= 95.0 and summary["knn"] >= 95.0
    print(json.dumps(summary, indent=2))
    print(f"linear {summary['linear']:.1f}%  knn {summary['knn']:.1f}%  "
          f"{summary['seconds']:.1f}s  {'PASS' if ok else 'BELOW 95% GATE'}")
    if args.strict and not ok:
        raise C2VLError("synthetic smoke accuracy below the 95% gate")


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="c2vl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("ingest", help="convert raw skeleton releases into the binary container")
    s.add_argument("--raw", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dataset", required=True, choices=["ntu60", "ntu120", "pkummd2"])
    s.add_argument("--splits", help="benchmark split definition file (required for pkummd2)")
    s.add_argument("--frames", type=int, default=64)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("generate-prompts", help="run detector + VQA engines and fill the prompt cache")
    s.add_argument("--dataset", required=True, help="container directory")
    s.add_argument("--cache", required=True, help="prompt cache file (JSONL)")
    s.add_argument("--engine", choices=["stub", "remote"])
    s.add_argument("--frames", type=int)
    s.add_argument("--videos", help="directory of <sample_id>_rgb.avi files; skeleton renders otherwise")
    s.add_argument("--fallback-fullframe", action="store_true")
    s.add_argument("--config")
    s.set_defaults(func=cmd_generate_prompts)

    s = sub.add_parser("pretrain", help="cross-modal pretraining")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--prompts")
    s.add_argument("--out")
    s.add_argument("--resume")
    s.add_argument("--deterministic", action="store_true")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("evaluate", help="evaluation protocols")
    s.add_argument("--protocol", required=True, choices=["linear", "finetune", "knn", "semi", "transfer"])
    s.add_argument("--ckpt", required=True, action="append", help="repeat for multi-stream fusion")
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--k", type=int)
    s.add_argument("--fractions", type=float, nargs="+")
    s.add_argument("--full-finetune", action="store_true")
    s.add_argument("--remap", help="JSON list: source joint i <- target joint remap[i]")
    s.add_argument("--prompts", help="prompt cache, needed for --emit-histograms")
    s.add_argument("--emit-histograms", action="store_true")
    s.add_argument("--dump-embeddings", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth-smoke", help="synthetic end-to-end run with stub engines")
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=60)
    s.add_argument("--strict", action="store_true", help="exit 1 when accuracy misses the 95%% gate")
    s.set_defaults(func=cmd_synth_smoke)
    return p


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides, unknown = split_overrides(extra)
        if unknown:
            raise UsageError(f"{parser.format_usage()}c2vl: error: unrecognized arguments: {' '.join(unknown)}")
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, overrides)
    except ConfigError as e:
        print(json.dumps({"error": "config", "path": e.path, "message": str(e)}), file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except (C2VLError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
