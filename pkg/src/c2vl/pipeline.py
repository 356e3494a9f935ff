"""End-to-end runs shared by the CLI, the scripts and the acceptance tests."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig, resolve_config
from .data.splits import load_split_definitions, make_split
from .data.synth import shuffle_pairs, synth_generate
from .encoders import make_frozen_encoder
from .evaluation import knn_eval, linear_probe
from .pretrain import Pretrainer, precompute_prompt_embeddings
from .prompts import PromptCache

logger = logging.getLogger(__name__)

# desk-scale settings layered under any user file/overrides for the synthetic runs
SMOKE_DEFAULTS = {
    "optim.epochs": 20,
    "optim.batch_size": 32,
    "optim.milestones": [16, 18],
    "optim.grad_clip": 1.0,
    "eval.k": 1,
}


def smoke_config(file=None, overrides: Optional[dict] = None) -> RunConfig:
    return resolve_config(file, overrides, base=SMOKE_DEFAULTS)


def synth_corpus(seed: int, n_classes: int = 3, n_per_class: int = 60, engine_seed: int = 0):
    """Sequences, prompt records, and the subject-wise split (70/30 per class)."""
    seqs, records, labels = synth_generate(n_classes, n_per_class, seed=seed, engine_seed=engine_seed)
    split = make_split(seqs, "xsub", load_split_definitions()["synthetic"])
    return seqs, records, split


def run_synth(cfg: RunConfig, seed: int, out_dir, n_classes: int = 3, n_per_class: int = 60,
              noise_fraction: Optional[float] = None, write_cache: bool = True) -> dict:
    """Synthetic data -> stub prompts -> pretraining -> linear probe + KNN on the held-out subjects."""
    t0 = time.time()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seqs, records, split = synth_corpus(seed, n_classes, n_per_class, cfg.engine.seed)
    if write_cache:
        cache = PromptCache(out / "prompts.jsonl")
        for rec in records:
            if rec.sample_id not in cache:
                cache.put(rec)
    encoder = make_frozen_encoder(cfg.engine.frozen_encoder, cfg.model.embed_dim, cfg.engine.seed)
    store = precompute_prompt_embeddings(records, encoder, cfg.model.embed_dim)
    by_id = {s.sample_id: s for s in seqs}
    train = [by_id[i] for i in split.train_ids]
    test = [by_id[i] for i in split.test_ids]

    noise = cfg.data.noise_fraction if noise_fraction is None else noise_fraction
    perm = shuffle_pairs([s.label for s in train], noise, seed) if noise > 0 else None
    if perm is not None:
        logger.info("shuffled %d of %d training prompt pairs", int((perm != np.arange(len(perm))).sum()), len(perm))

    trainer = Pretrainer(cfg, train, store, out, pair_perm=perm)
    ckpt = trainer.run()
    t_pre = time.time() - t0
    lin = linear_probe(trainer.model, train, test, cfg.eval, stream=trainer.stream, benchmark="synthetic-xsub",
                       config_digest=cfg.digest())
    knn = knn_eval(trainer.model, train, test, cfg.eval.k, stream=trainer.stream, benchmark="synthetic-xsub",
                   config_digest=cfg.digest())
    lin.save(out, "linear")
    knn.save(out, "knn")
    metrics = trainer.metrics
    summary = {
        "seed": seed,
        "n_train": len(train),
        "n_test": len(test),
        "noise_fraction": noise,
        "loss_mode": cfg.loss.mode,
        "first_loss": metrics[0]["loss_total"],
        "final_loss": metrics[-1]["loss_total"],
        "linear": lin.accuracy,
        "knn": knn.accuracy,
        "pretrain_seconds": t_pre,
        "seconds": time.time() - t0,
        "checkpoint": str(ckpt),
        "config_digest": cfg.digest(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return summary
