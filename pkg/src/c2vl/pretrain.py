"""Cross-modal pretraining loop with progressive soft targets."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch

from .config import RunConfig
from .data.skeleton import SkeletonSequence, bone_table_for, stack_batch
from .encoders import SkeletonEncoderConfig, SkeletonModel, frozen_encode
from .errors import C2VLError, ConfigError, DataError, NotFound, TrainingDiverged
from .losses import combined_soft_loss
from .schedule import AlphaSchedule, alpha_at, lr_at, partition_batch

logger = logging.getLogger(__name__)

CKPT_VERSION = "c2vl-ckpt-v1"
ENCODER_VERSION = "c2vl-encoder-v1"
METRIC_COLUMNS = ["epoch", "alpha", "lr", "loss_total", "loss_sv_intra", "loss_sv_inter", "loss_sl_intra",
                  "loss_sl_inter", "tau"]


# ---------------------------------------------------------------- prompt embeddings

@dataclass
class PromptStore:
    ids: List[str]
    vision: np.ndarray
    language: np.ndarray
    encoder_digest: str = ""

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        lookup = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in lookup]
        if missing:
            raise DataError(f"{len(missing)} samples have no prompt embedding, e.g. {missing[:5]}")
        return np.array([lookup[sid] for sid in ids], dtype=np.int64)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "vision.npy", np.ascontiguousarray(self.vision, dtype="<f4"))
        np.save(out / "language.npy", np.ascontiguousarray(self.language, dtype="<f4"))
        (out / "ids.json").write_text(json.dumps(self.ids), encoding="utf-8")
        (out / "meta.json").write_text(json.dumps({"encoder_digest": self.encoder_digest,
                                                   "dim": int(self.vision.shape[1])}), encoding="utf-8")
        return out

    @classmethod
    def load(cls, out_dir) -> "PromptStore":
        out = Path(out_dir)
        meta = json.loads((out / "meta.json").read_text(encoding="utf-8"))
        return cls(json.loads((out / "ids.json").read_text(encoding="utf-8")), np.load(out / "vision.npy"),
                   np.load(out / "language.npy"), meta.get("encoder_digest", ""))


def precompute_prompt_embeddings(records, encoder, expected_dim: Optional[int] = None,
                                 chunk: int = 512) -> PromptStore:
    """Encode each record's crop and caption once with the frozen encoders."""
    records = list(records)
    if not records:
        raise DataError("no prompt records to encode")
    digest = encoder.digest()
    vis, lang = [], []
    for i in range(0, len(records), chunk):
        part = records[i:i + chunk]
        vis.append(frozen_encode([r.vision.crop for r in part], encoder, "vision").matrix)
        lang.append(frozen_encode([r.language.text for r in part], encoder, "language").matrix)
    if encoder.digest() != digest:
        raise C2VLError("frozen encoder weights changed while encoding")
    store = PromptStore([r.sample_id for r in records], np.concatenate(vis), np.concatenate(lang), digest)
    if expected_dim is not None and store.vision.shape[1] != expected_dim:
        raise ConfigError(f"frozen encoder width {store.vision.shape[1]} != model.embed_dim {expected_dim}",
                          path="model.embed_dim")
    return store


def store_from_cache(cache, ids, encoder, expected_dim=None) -> PromptStore:
    missing = [sid for sid in ids if sid not in cache]
    if missing:
        raise NotFound(f"{len(missing)} samples lack prompts, e.g. {missing[:5]}")
    return precompute_prompt_embeddings((cache.get(sid) for sid in ids), encoder, expected_dim)


# ---------------------------------------------------------------- model / checkpoint helpers

def encoder_config(cfg: RunConfig, joints: int, bodies: int) -> SkeletonEncoderConfig:
    m = cfg.model
    return SkeletonEncoderConfig(joints, bodies, list(m.channels), list(m.strides), m.temporal_kernel,
                                 m.graph_strategy, m.edge_importance)


def build_model(cfg: RunConfig, joints: int, bodies: int) -> SkeletonModel:
    enc = encoder_config(cfg, joints, bodies)
    t = cfg.temperature
    model = SkeletonModel(enc, cfg.model.embed_dim, cfg.model.hidden_dim or None, t.init, t.learnable,
                          t.per_branch_tau, bone_table_for(joints))
    for temp in (model.tau, model.tau_language):
        if temp is not None:
            temp.lo, temp.hi = t.min, t.max
    return model


def state_digest(state: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(state):
        h.update(k.encode())
        h.update(state[k].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def atomic_save(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(obj, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("version") != CKPT_VERSION:
        raise ConfigError(f"{path}: not a {CKPT_VERSION} checkpoint")
    if state_digest(ckpt["model"]) != ckpt["digest"]:
        raise C2VLError(f"{path}: checkpoint digest mismatch")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> SkeletonModel:
    from .config import RunConfig, from_dict
    cfg = from_dict(RunConfig, ckpt["config"])
    model = build_model(cfg, ckpt["joints"], ckpt["bodies"])
    model.load_state_dict(ckpt["model"])
    return model


def export_encoder(ckpt: dict, path, head: Optional[torch.nn.Module] = None) -> Path:
    """Inference artifact: skeleton encoder (plus optional classifier head) only."""
    enc = {k[len("encoder."):]: v for k, v in ckpt["model"].items() if k.startswith("encoder.")}
    art = {"version": ENCODER_VERSION, "encoder": enc, "config": ckpt["config"], "joints": ckpt["joints"],
           "bodies": ckpt["bodies"], "stream": ckpt["stream"]}
    if head is not None:
        art["head"] = head.state_dict()
    atomic_save(art, path)
    return Path(path)


# ---------------------------------------------------------------- training

def seed_everything(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    if deterministic:
        torch.use_deterministic_algorithms(True)


class Pretrainer:
    def __init__(self, cfg: RunConfig, seqs: Sequence[SkeletonSequence], store: PromptStore, out_dir,
                 stream: Optional[str] = None, pair_perm: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.stream = stream or cfg.data.streams[0]
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.ids = [s.sample_id for s in seqs]
        if not seqs:
            raise DataError("empty training set")
        rows = store.rows(self.ids)
        if pair_perm is not None:
            rows = rows[np.asarray(pair_perm)]
        self.vision = torch.from_numpy(np.ascontiguousarray(store.vision[rows], dtype=np.float32))
        self.language = torch.from_numpy(np.ascontiguousarray(store.language[rows], dtype=np.float32))
        self.x = torch.from_numpy(stack_batch(seqs, self.stream))
        self.joints, self.bodies = seqs[0].joints, seqs[0].bodies
        if self.vision.shape[1] != cfg.model.embed_dim:
            raise ConfigError(f"prompt embeddings are {self.vision.shape[1]}-d, model.embed_dim is "
                              f"{cfg.model.embed_dim}", path="model.embed_dim")
        self.frozen_digest = store.encoder_digest

        seed_everything(cfg.seed, cfg.deterministic)
        self.model = build_model(cfg, self.joints, self.bodies)
        tau_params = [p for n, p in self.model.named_parameters() if "log_tau" in n]
        other = [p for n, p in self.model.named_parameters() if "log_tau" not in n]
        o = cfg.optim
        self.optimizer = torch.optim.SGD([{"params": other, "weight_decay": o.weight_decay, "lr_scale": 1.0},
                                          {"params": tau_params, "weight_decay": 0.0,
                                           "lr_scale": cfg.temperature.lr_scale}],
                                         lr=o.lr, momentum=o.momentum)
        self.sched = AlphaSchedule(max(o.epochs - 1, 1), cfg.schedule.alpha_start, cfg.schedule.alpha_end)
        self.epoch = 0
        self.step = 0
        self.metrics: List[dict] = []

    # -- bookkeeping
    def alpha(self, epoch: int) -> float:
        if not self.cfg.schedule.progressive:
            return self.cfg.schedule.alpha_fixed
        return alpha_at(epoch, self.sched)

    def state(self) -> dict:
        model_state = self.model.state_dict()
        return {
            "version": CKPT_VERSION,
            "epoch": self.epoch,
            "global_step": self.step,
            "model": model_state,
            "digest": state_digest(model_state),
            "optimizer": self.optimizer.state_dict(),
            "config": self.cfg.to_dict(),
            "stream": self.stream,
            "joints": self.joints,
            "bodies": self.bodies,
            "seed": self.cfg.seed,
            "frozen_digest": self.frozen_digest,
            "metrics": list(self.metrics),
        }

    def save(self, path) -> Path:
        atomic_save(self.state(), path)
        return Path(path)

    def restore(self, ckpt: dict) -> None:
        if ckpt.get("version") != CKPT_VERSION:
            raise ConfigError("checkpoint version mismatch")
        if ckpt["stream"] != self.stream:
            raise ConfigError(f"checkpoint was trained on the {ckpt['stream']} stream, not {self.stream}")
        self.model.load_state_dict(ckpt["model"])
        self.optimizer.load_state_dict(ckpt["optimizer"])
        self.epoch = int(ckpt["epoch"])
        self.step = int(ckpt["global_step"])
        self.metrics = list(ckpt.get("metrics", []))

    def _write_metrics(self):
        with open(self.out / "metrics.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
            w.writeheader()
            for row in self.metrics:
                w.writerow({k: row[k] for k in METRIC_COLUMNS})

    # -- loop
    def batches(self, epoch: int):
        g = torch.Generator().manual_seed(self.cfg.seed * 1_000_003 + epoch)
        perm = torch.randperm(len(self.ids), generator=g)
        bs = self.cfg.optim.batch_size
        for i in range(0, len(perm), bs):
            idx = perm[i:i + bs]
            if len(idx) >= 2:
                yield idx

    def train_epoch(self) -> dict:
        epoch = self.epoch
        alpha = self.alpha(epoch)
        lr = lr_at(epoch, self.cfg.optim)
        for group in self.optimizer.param_groups:
            group["lr"] = lr * group.get("lr_scale", 1.0)
        self.model.train()
        sums, n = {}, 0
        for idx in self.batches(epoch):
            s_v, s_l = self.model(self.x[idx])
            tau, tau_l = self.model.taus()
            part = partition_batch(len(idx), alpha)
            out = combined_soft_loss(s_v, self.vision[idx], self.language[idx], part, self.cfg.loss, tau,
                                     s_lang=s_l, tau_lang=tau_l,
                                     dynamic_partition=self.cfg.schedule.dynamic_partition)
            if not torch.isfinite(out.total):
                bad = [self.ids[i] for i in idx.tolist()]
                (self.out / "diverged_batch.json").write_text(json.dumps({"epoch": epoch, "step": self.step,
                                                                          "sample_ids": bad}), encoding="utf-8")
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {self.step}", bad)
            self.optimizer.zero_grad(set_to_none=True)
            out.total.backward()
            if self.cfg.optim.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.optim.grad_clip)
            self.optimizer.step()
            self.model.clamp_()
            self.step += 1
            for k, v in out.as_row().items():
                sums[k] = sums.get(k, 0.0) + v
            n += 1
        row = {k: v / max(n, 1) for k, v in sums.items()}
        row.update(epoch=epoch, alpha=alpha, lr=lr, tau=float(self.model.tau().detach()))
        self.metrics.append(row)
        self.epoch += 1
        return row

    def run(self, epochs: Optional[int] = None, checkpoint_every: int = 0) -> Path:
        """Train up to ``epochs`` total epochs (default: the configured count)."""
        stop = self.cfg.optim.epochs if epochs is None else epochs
        while self.epoch < stop:
            row = self.train_epoch()
            logger.info("epoch %d alpha=%.3f lr=%.4g loss=%.4f tau=%.4f", row["epoch"], row["alpha"], row["lr"],
                        row["loss_total"], row["tau"])
            self._write_metrics()
            if checkpoint_every and self.epoch % checkpoint_every == 0:
                self.save(self.out / f"ckpt_epoch{self.epoch:03d}.pt")
        return self.save(self.out / "checkpoint.pt")


def pretrain_run(cfg: RunConfig, seqs, store: PromptStore, out_dir, stream=None, pair_perm=None,
                 resume: Optional[str] = None):
    trainer = Pretrainer(cfg, seqs, store, out_dir, stream, pair_perm)
    if resume:
        trainer.restore(load_checkpoint(resume))
    path = trainer.run()
    return trainer, path
