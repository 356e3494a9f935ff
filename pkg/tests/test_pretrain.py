import csv
import json

import numpy as np
import pytest
import torch

from c2vl.config import resolve_config
from c2vl.data import synth_generate
from c2vl.encoders import StubFrozenEncoder
from c2vl.errors import ConfigError, DataError, NotFound, TrainingDiverged
from c2vl.pretrain import (CKPT_VERSION, ENCODER_VERSION, METRIC_COLUMNS, Pretrainer, PromptStore, export_encoder,
                           load_checkpoint, precompute_prompt_embeddings, pretrain_run, store_from_cache)
from c2vl.prompts import PromptCache
from c2vl.schedule import alpha_at

TINY = {"model.channels": [8, 16], "model.strides": [2, 2], "model.embed_dim": 16, "optim.epochs": 6,
        "optim.batch_size": 16, "optim.milestones": [4, 5], "optim.grad_clip": 1.0}


def tiny_cfg(**extra):
    return resolve_config(None, {**TINY, **extra})


@pytest.fixture(scope="module")
def corpus():
    seqs, records, labels = synth_generate(3, 12, seed=3)
    store = precompute_prompt_embeddings(records, StubFrozenEncoder(16), 16)
    return seqs, records, store


def test_store_contract(corpus, tmp_path):
    seqs, records, store = corpus
    assert len(store.ids) == len(records) == store.vision.shape[0] == store.language.shape[0]
    np.testing.assert_allclose(np.linalg.norm(store.vision, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(store.language, axis=1), 1.0, atol=1e-6)
    a = precompute_prompt_embeddings(records, StubFrozenEncoder(16), 16).save(tmp_path / "a")
    b = precompute_prompt_embeddings(records, StubFrozenEncoder(16), 16).save(tmp_path / "b")
    for name in ("vision.npy", "language.npy", "ids.json", "meta.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    back = PromptStore.load(a)
    assert back.ids == store.ids and back.encoder_digest == store.encoder_digest


def test_store_dim_mismatch(corpus):
    with pytest.raises(ConfigError):
        precompute_prompt_embeddings(corpus[1], StubFrozenEncoder(8), 16)


def test_frozen_digest_unchanged(corpus):
    enc = StubFrozenEncoder(16)
    before = enc.digest()
    precompute_prompt_embeddings(corpus[1], enc, 16)
    assert enc.digest() == before


def test_missing_prompt_fails_fast(corpus, tmp_path):
    seqs, records, store = corpus
    cache = PromptCache(tmp_path / "c.jsonl")
    for r in records[1:]:
        cache.put(r)
    with pytest.raises(NotFound, match=records[0].sample_id):
        store_from_cache(cache, [s.sample_id for s in seqs], StubFrozenEncoder(16), 16)
    partial = PromptStore(store.ids[1:], store.vision[1:], store.language[1:])
    with pytest.raises(DataError, match=store.ids[0]):
        Pretrainer(tiny_cfg(), seqs, partial, tmp_path)


def test_embed_dim_mismatch(corpus, tmp_path):
    with pytest.raises(ConfigError):
        Pretrainer(tiny_cfg(**{"model.embed_dim": 32}), corpus[0], corpus[2], tmp_path)


def test_training_loss_decreases_and_metrics_logged(corpus, tmp_path):
    seqs, _, store = corpus
    trainer, ckpt_path = pretrain_run(tiny_cfg(), seqs, store, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert list(rows[0]) == METRIC_COLUMNS and len(rows) == 6
    assert float(rows[-1]["loss_total"]) < float(rows[0]["loss_total"])
    for r in rows:
        assert float(r["alpha"]) == alpha_at(int(r["epoch"]), trainer.sched)
    assert float(rows[0]["alpha"]) == pytest.approx(0.9) and float(rows[-1]["alpha"]) == pytest.approx(0.1)
    assert [float(r["lr"]) for r in rows] == pytest.approx([0.1] * 4 + [0.01, 0.001])
    ckpt = load_checkpoint(ckpt_path)
    assert ckpt["version"] == CKPT_VERSION and ckpt["epoch"] == 6
    assert not any(k.startswith("frozen") for k in ckpt["model"])


def test_infonce_mode_runs(corpus, tmp_path):
    seqs, _, store = corpus
    trainer, _ = pretrain_run(tiny_cfg(**{"loss.mode": "infonce", "optim.epochs": 2, "optim.milestones": [1]}),
                              seqs, store, tmp_path)
    assert all(m["loss_sv_inter"] == 0.0 for m in trainer.metrics)


def test_nan_aborts_with_batch_dump(corpus, tmp_path):
    seqs, _, store = corpus
    bad = PromptStore(store.ids, np.full_like(store.vision, np.nan), store.language)
    trainer = Pretrainer(tiny_cfg(), seqs, bad, tmp_path)
    with pytest.raises(TrainingDiverged):
        trainer.run()
    dump = json.loads((tmp_path / "diverged_batch.json").read_text())
    assert dump["epoch"] == 0 and set(dump["sample_ids"]) <= set(store.ids) and dump["sample_ids"]


def test_resume_matches_uninterrupted(corpus, tmp_path):
    seqs, _, store = corpus
    cfg = tiny_cfg(deterministic=True)
    full = Pretrainer(cfg, seqs, store, tmp_path / "full")
    full.run()
    half = Pretrainer(cfg, seqs, store, tmp_path / "half")
    path = half.run(epochs=3)
    resumed = Pretrainer(cfg, seqs, store, tmp_path / "resumed")
    resumed.restore(load_checkpoint(path))
    resumed.run()
    for a, b in zip(full.metrics, resumed.metrics):
        assert abs(a["loss_total"] - b["loss_total"]) < 1e-6


def test_resume_rejects_other_stream(corpus, tmp_path):
    seqs, _, store = corpus
    t = Pretrainer(tiny_cfg(), seqs, store, tmp_path / "j")
    ckpt = t.state()
    other = Pretrainer(tiny_cfg(), seqs, store, tmp_path / "b", stream="bone")
    with pytest.raises(ConfigError):
        other.restore(ckpt)


def test_export_holds_only_encoder(corpus, tmp_path):
    seqs, _, store = corpus
    _, path = pretrain_run(tiny_cfg(**{"optim.epochs": 1, "optim.milestones": []}), seqs, store, tmp_path)
    art = torch.load(export_encoder(load_checkpoint(path), tmp_path / "enc.pt", head=torch.nn.Linear(16, 3)),
                     weights_only=False)
    assert art["version"] == ENCODER_VERSION
    assert set(art) == {"version", "encoder", "config", "joints", "bodies", "stream", "head"}
    assert not any("proj" in k or "tau" in k for k in art["encoder"])


def test_corrupt_checkpoint_rejected(corpus, tmp_path):
    seqs, _, store = corpus
    t = Pretrainer(tiny_cfg(), seqs, store, tmp_path)
    state = t.state()
    state["digest"] = "0" * 64
    torch.save(state, tmp_path / "bad.pt")
    with pytest.raises(Exception, match="digest"):
        load_checkpoint(tmp_path / "bad.pt")
    torch.save({"version": "nope"}, tmp_path / "old.pt")
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "old.pt")
