"""Evaluation protocols: linear probe, finetune, KNN, semi-supervised, transfer, stream fusion."""
from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EvalConfig
from .data.skeleton import SkeletonSequence, stack_batch
from .data.splits import semi_subset
from .encoders import SkeletonEncoder, module_digest
from .errors import C2VLError, ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    protocol: str
    benchmark: str
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, protocol, y_true, y_pred, n_classes=None, benchmark="", config_digest="",
                         **extra) -> "EvalReport":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise DataError(f"{len(y_true)} labels vs {len(y_pred)} predictions")
        if len(y_true) == 0:
            raise DataError("no test samples")
        n = int(n_classes or max(y_true.max(), y_pred.max()) + 1)
        conf = np.zeros((n, n), dtype=np.int64)
        np.add.at(conf, (y_true, y_pred), 1)
        support = conf.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(support > 0, np.diag(conf) / np.maximum(support, 1) * 100.0, np.nan)
        acc = float(np.trace(conf)) / float(conf.sum()) * 100.0
        return cls(protocol, benchmark, acc, per_class, conf, config_digest, dict(extra))

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "benchmark": self.benchmark, "accuracy": self.accuracy,
                "per_class": [None if np.isnan(a) else float(a) for a in self.per_class],
                "confusion": self.confusion.tolist(), "config_digest": self.config_digest, "extra": self.extra}

    def save(self, out_dir, stem: Optional[str] = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.protocol
        (out / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        with open(out / f"{stem}_confusion.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["true\\pred"] + list(range(self.confusion.shape[1])))
            for i, row in enumerate(self.confusion):
                w.writerow([i] + row.tolist())
        return out / f"{stem}.json"


@dataclass
class StreamScores:
    scores: List[np.ndarray]
    kinds: List[str]

    def __post_init__(self):
        if len(self.scores) != len(self.kinds):
            raise DataError("one stream kind per score matrix")
        shapes = {np.shape(s) for s in self.scores}
        if len(shapes) > 1:
            raise DataError(f"stream score shapes differ: {sorted(shapes)}")


# ---------------------------------------------------------------- features

def resolve_encoder(source) -> tuple:
    """Accept a SkeletonEncoder, a SkeletonModel, a checkpoint dict or a path.

    Returns ``(encoder, stream or None, joints or None)``.
    """
    from .encoders import SkeletonModel
    from .pretrain import load_checkpoint, model_from_checkpoint

    if isinstance(source, SkeletonEncoder):
        return source, None, source.cfg.joints
    if isinstance(source, SkeletonModel):
        return source.encoder, None, source.encoder.cfg.joints
    if isinstance(source, (str, Path)):
        source = load_checkpoint(source)
    if isinstance(source, dict):
        model = model_from_checkpoint(source)
        return model.encoder, source.get("stream"), source.get("joints")
    raise ConfigError(f"cannot build an encoder from {type(source).__name__}")


def extract_features(encoder: nn.Module, seqs: Sequence[SkeletonSequence], stream: str = "joint",
                     batch_size: int = 256) -> np.ndarray:
    was = encoder.training
    encoder.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(seqs), batch_size):
            x = torch.from_numpy(stack_batch(seqs[i:i + batch_size], stream))
            out.append(encoder(x).numpy())
    encoder.train(was)
    if not out:
        raise DataError("no sequences to encode")
    return np.concatenate(out).astype(np.float32)


def _labels(seqs, labels) -> np.ndarray:
    if labels is None:
        labels = [s.label for s in seqs]
    if len(labels) != len(seqs):
        raise DataError(f"{len(labels)} labels for {len(seqs)} samples")
    if any(y is None for y in labels):
        raise DataError("some samples carry no label")
    return np.asarray(labels, dtype=np.int64)


def _step_lr(epoch, base, milestones, gamma=0.1):
    return base * gamma ** sum(epoch >= m for m in milestones)


def train_head(features: np.ndarray, labels: np.ndarray, n_classes: int, epochs: int, lr: float,
               milestones: Sequence[int] = (), batch_size: int = 256, seed: int = 0,
               weight_decay: float = 0.0) -> nn.Linear:
    """Softmax-regression head trained with momentum SGD on fixed features."""
    g = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    head = nn.Linear(features.shape[1], n_classes)
    x = torch.from_numpy(features)
    y = torch.from_numpy(labels)
    opt = torch.optim.SGD(head.parameters(), lr=lr, momentum=0.9, weight_decay=weight_decay)
    for epoch in range(epochs):
        for grp in opt.param_groups:
            grp["lr"] = _step_lr(epoch, lr, milestones)
        perm = torch.randperm(len(x), generator=g)
        for i in range(0, len(perm), batch_size):
            idx = perm[i:i + batch_size]
            loss = F.cross_entropy(head(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return head


# ---------------------------------------------------------------- protocols

def linear_probe(source, train_seqs, test_seqs, cfg: Optional[EvalConfig] = None, *, train_labels=None,
                 test_labels=None, stream: Optional[str] = None, n_classes: Optional[int] = None,
                 benchmark: str = "", config_digest: str = "", protocol: str = "linear") -> EvalReport:
    cfg = cfg or EvalConfig()
    encoder, ck_stream, _ = resolve_encoder(source)
    stream = stream or ck_stream or "joint"
    ytr, yte = _labels(train_seqs, train_labels), _labels(test_seqs, test_labels)
    n_classes = n_classes or int(max(ytr.max(), yte.max()) + 1)
    before = module_digest(encoder)
    ftr = extract_features(encoder, train_seqs, stream, cfg.batch_size)
    fte = extract_features(encoder, test_seqs, stream, cfg.batch_size)
    head = train_head(ftr, ytr, n_classes, cfg.probe_epochs, cfg.probe_lr, cfg.probe_milestones, cfg.batch_size,
                      cfg.seed)
    if module_digest(encoder) != before:
        raise C2VLError("encoder weights changed during the linear probe")
    with torch.no_grad():
        pred = head(torch.from_numpy(fte)).argmax(1).numpy()
    return EvalReport.from_predictions(protocol, yte, pred, n_classes, benchmark, config_digest,
                                       stream=stream, n_train=len(ytr), encoder_digest=before)


class _Classifier(nn.Module):
    def __init__(self, encoder, n_classes):
        super().__init__()
        self.encoder = encoder
        self.head = nn.Linear(encoder.feature_dim, n_classes)

    def forward(self, x):
        return self.head(self.encoder(x))


def finetune_eval(source, train_seqs, test_seqs, cfg: Optional[EvalConfig] = None, *, train_labels=None,
                  test_labels=None, stream: Optional[str] = None, n_classes: Optional[int] = None,
                  benchmark: str = "", config_digest: str = "", protocol: str = "finetune") -> EvalReport:
    """Train encoder and a fresh head end to end; the source encoder is left untouched."""
    cfg = cfg or EvalConfig()
    encoder, ck_stream, _ = resolve_encoder(source)
    stream = stream or ck_stream or "joint"
    ytr, yte = _labels(train_seqs, train_labels), _labels(test_seqs, test_labels)
    n_classes = n_classes or int(max(ytr.max(), yte.max()) + 1)
    torch.manual_seed(cfg.seed)
    model = _Classifier(copy.deepcopy(encoder), n_classes)
    xtr = torch.from_numpy(stack_batch(train_seqs, stream))
    y = torch.from_numpy(ytr)
    g = torch.Generator().manual_seed(cfg.seed)
    opt = torch.optim.SGD(model.parameters(), lr=cfg.finetune_lr, momentum=0.9, weight_decay=5e-4)
    milestones = [int(cfg.finetune_epochs * 0.8)]
    for epoch in range(cfg.finetune_epochs):
        for grp in opt.param_groups:
            grp["lr"] = _step_lr(epoch, cfg.finetune_lr, milestones)
        model.train()
        perm = torch.randperm(len(xtr), generator=g)
        for i in range(0, len(perm), cfg.finetune_batch_size):
            idx = perm[i:i + cfg.finetune_batch_size]
            if len(idx) < 2:  # batch norm needs two samples
                continue
            loss = F.cross_entropy(model(xtr[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, len(test_seqs), cfg.batch_size):
            preds.append(model(torch.from_numpy(stack_batch(test_seqs[i:i + cfg.batch_size], stream))).argmax(1))
    pred = torch.cat(preds).numpy()
    return EvalReport.from_predictions(protocol, yte, pred, n_classes, benchmark, config_digest,
                                       stream=stream, n_train=len(ytr), epochs=cfg.finetune_epochs)


def knn_predict(gallery: np.ndarray, gallery_labels, query: np.ndarray, k: int = 1, exclude_self: bool = False,
                chunk: int = 1024) -> np.ndarray:
    """Cosine k-NN: majority vote, ties broken by summed similarity, then by lower label."""
    gallery_labels = np.asarray(gallery_labels, dtype=np.int64)
    n_gallery = len(gallery) - (1 if exclude_self else 0)
    if len(gallery) == 0:
        raise ConfigError("empty gallery", path="eval.k")
    if k > n_gallery:
        raise ConfigError(f"k={k} exceeds gallery size {n_gallery}", path="eval.k")
    if exclude_self and len(gallery) != len(query):
        raise DataError("self-exclusion needs the query set to be the gallery")
    g = gallery.astype(np.float64)
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    q = query.astype(np.float64)
    q /= np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    n_classes = int(gallery_labels.max()) + 1
    out = np.empty(len(q), dtype=np.int64)
    for start in range(0, len(q), chunk):
        sims = q[start:start + chunk] @ g.T
        if exclude_self:
            rows = np.arange(sims.shape[0])
            sims[rows, rows + start] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        for r in range(sims.shape[0]):
            nb = order[r]
            votes = np.bincount(gallery_labels[nb], minlength=n_classes)
            weight = np.bincount(gallery_labels[nb], weights=sims[r, nb], minlength=n_classes)
            top = np.flatnonzero(votes == votes.max())
            out[start + r] = top[np.argmax(weight[top])]
    return out


def knn_eval(source, gallery_seqs, query_seqs, k: int = 1, *, gallery_labels=None, query_labels=None,
             stream: Optional[str] = None, exclude_self: bool = False, benchmark: str = "",
             config_digest: str = "", batch_size: int = 256) -> EvalReport:
    encoder, ck_stream, _ = resolve_encoder(source)
    stream = stream or ck_stream or "joint"
    yg, yq = _labels(gallery_seqs, gallery_labels), _labels(query_seqs, query_labels)
    if len(gallery_seqs) == 0:
        raise ConfigError("empty gallery", path="eval.k")
    fg = extract_features(encoder, gallery_seqs, stream, batch_size)
    fq = extract_features(encoder, query_seqs, stream, batch_size)
    pred = knn_predict(fg, yg, fq, k, exclude_self)
    n_classes = int(max(yg.max(), yq.max()) + 1)
    return EvalReport.from_predictions("knn", yq, pred, n_classes, benchmark, config_digest, k=k, stream=stream)


def semi_eval(source, train_seqs, test_seqs, cfg: Optional[EvalConfig] = None, *, fractions=None,
              train_labels=None, test_labels=None, stream: Optional[str] = None, benchmark: str = "",
              config_digest: str = "") -> List[EvalReport]:
    """One report per labelled fraction; the head (or, with full_finetune, the whole net) trains on the subset."""
    cfg = cfg or EvalConfig()
    fractions = list(cfg.semi_fractions if fractions is None else fractions)
    ytr, yte = _labels(train_seqs, train_labels), _labels(test_seqs, test_labels)
    n_classes = int(max(ytr.max(), yte.max()) + 1)
    reports = []
    for frac in fractions:
        idx = semi_subset(ytr, frac, cfg.seed)
        logger.info("semi fraction %.3f: %d labelled samples (seed %d)", frac, len(idx), cfg.seed)
        sub = [train_seqs[i] for i in idx]
        fn = finetune_eval if cfg.full_finetune else linear_probe
        rep = fn(source, sub, test_seqs, cfg, train_labels=ytr[idx], test_labels=yte, stream=stream,
                 n_classes=n_classes, benchmark=benchmark, config_digest=config_digest, protocol="semi")
        rep.extra.update(fraction=frac, subset_size=len(idx), subset_seed=cfg.seed,
                         full_finetune=cfg.full_finetune)
        reports.append(rep)
    return reports


def remap_joints(seqs: Sequence[SkeletonSequence], remap: Sequence[int]) -> List[SkeletonSequence]:
    """Reorder target joints into the source layout: new joint i = old joint remap[i]."""
    remap = np.asarray(remap, dtype=np.int64)
    out = []
    for s in seqs:
        if remap.min() < 0 or remap.max() >= s.joints:
            raise ConfigError(f"remap references joint {int(remap.max())} but {s.sample_id} has {s.joints}",
                              path="transfer.remap")
        out.append(SkeletonSequence(s.sample_id, np.ascontiguousarray(s.data[:, remap]), s.subject_id,
                                    s.camera_id, s.setup_id, s.label, dict(s.meta)))
    return out


def transfer_eval(source, train_seqs, test_seqs, cfg: Optional[EvalConfig] = None, *, remap=None,
                  train_labels=None, test_labels=None, stream: Optional[str] = None, benchmark: str = "",
                  config_digest: str = "") -> EvalReport:
    encoder, ck_stream, joints = resolve_encoder(source)
    target_joints = train_seqs[0].joints
    if remap is not None:
        if joints is not None and len(remap) != joints:
            raise ConfigError(f"remap has {len(remap)} entries, source layout has {joints} joints",
                              path="transfer.remap")
        train_seqs, test_seqs = remap_joints(train_seqs, remap), remap_joints(test_seqs, remap)
    elif joints is not None and joints != target_joints:
        raise ConfigError(f"source encoder expects {joints} joints, target has {target_joints}; "
                          f"supply a joint remap", path="transfer.remap")
    rep = finetune_eval(encoder, train_seqs, test_seqs, cfg, train_labels=train_labels, test_labels=test_labels,
                        stream=stream or ck_stream, benchmark=benchmark, config_digest=config_digest,
                        protocol="transfer")
    return rep


def stream_scores(encoder_by_stream: Dict[str, nn.Module], heads: Dict[str, nn.Module], seqs) -> StreamScores:
    scores, kinds = [], []
    for kind, enc in encoder_by_stream.items():
        with torch.no_grad():
            f = torch.from_numpy(extract_features(enc, seqs, kind))
            scores.append(F.softmax(heads[kind](f), dim=1).numpy())
        kinds.append(kind)
    return StreamScores(scores, kinds)


def fuse_streams(scores: StreamScores, weights: Optional[Sequence[float]] = None, labels=None,
                 benchmark: str = "", config_digest: str = ""):
    """Weighted mean of per-stream score matrices; returns predictions, or a report when labels are given."""
    if len(scores.scores) < 2:
        raise DataError("fusion needs at least two streams")
    w = np.ones(len(scores.scores)) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != len(scores.scores):
        raise DataError(f"{len(w)} weights for {len(scores.scores)} streams")
    if w.sum() <= 0:
        raise ConfigError("fusion weights must have a positive sum")
    fused = sum(wi * np.asarray(s, dtype=np.float64) for wi, s in zip(w, scores.scores)) / w.sum()
    pred = fused.argmax(axis=1)
    if labels is None:
        return pred
    return EvalReport.from_predictions("fusion", labels, pred, fused.shape[1], benchmark, config_digest,
                                       streams="+".join(scores.kinds), weights=w.tolist())


# ---------------------------------------------------------------- exports

def similarity_histograms(s: np.ndarray, x: np.ndarray, bins: int = 40) -> np.ndarray:
    """Rows ``(bin_lo, bin_hi, positive_count, negative_count)`` of paired cosine similarities."""
    s = s / np.maximum(np.linalg.norm(s, axis=1, keepdims=True), 1e-12)
    x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    sims = s @ x.T
    mask = np.eye(len(s), dtype=bool)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    pos, _ = np.histogram(sims[mask], edges)
    neg, _ = np.histogram(sims[~mask], edges)
    return np.column_stack([edges[:-1], edges[1:], pos, neg])


def write_histogram_csv(path, table: np.ndarray) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "positive", "negative"])
        for lo, hi, p, n in table:
            w.writerow([f"{lo:.4f}", f"{hi:.4f}", int(p), int(n)])
    return path


def dump_embeddings(path, features: np.ndarray, labels, ids=None) -> Path:
    path = Path(path)
    np.savez(path, features=features, labels=np.asarray(labels), ids=np.asarray(ids if ids is not None else []))
    return path
