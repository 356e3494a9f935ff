"""Contrastive kernels: InfoNCE, soft targets and the progressive soft objective.

All functions are pure and dtype-agnostic; pass float64 tensors for
gradient checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, PartitionError, ShapeError
from .schedule import BatchPartition

LOG_FLOOR = 1e-12


@dataclass
class LossConfig:
    mode: str = "soft"  # soft | infonce
    beta: float = 0.2
    intra: bool = True
    inter: bool = True
    target_temperature: str = "shared"  # shared | unit
    use_vision: bool = True
    use_language: bool = True

    def validate(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}", path="loss.beta")
        if self.mode not in ("soft", "infonce"):
            raise ConfigError(f"unknown loss mode {self.mode!r}", path="loss.mode")
        if self.target_temperature not in ("shared", "unit"):
            raise ConfigError(f"unknown target_temperature {self.target_temperature!r}",
                              path="loss.target_temperature")
        if not (self.use_vision or self.use_language):
            raise ConfigError("at least one of vision/language must be used", path="loss.use_vision")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    sv_intra: torch.Tensor
    sv_inter: torch.Tensor
    sl_intra: torch.Tensor
    sl_inter: torch.Tensor
    alpha: float
    beta: float
    tau: float

    def as_row(self) -> dict:
        f = lambda t: float(t.detach())  # noqa: E731
        return {"loss_total": f(self.total), "loss_sv_intra": f(self.sv_intra), "loss_sv_inter": f(self.sv_inter),
                "loss_sl_intra": f(self.sl_intra), "loss_sl_inter": f(self.sl_inter), "tau": self.tau}


def cosine_logits(a: torch.Tensor, b: torch.Tensor, tau) -> torch.Tensor:
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"embedding dims differ: {a.shape[-1]} vs {b.shape[-1]}")
    return a @ b.T / tau


def soft_cross_entropy(targets: torch.Tensor, logits: torch.Tensor, validate: bool = True) -> torch.Tensor:
    """Row-mean cross-entropy between soft targets and softmax(logits)."""
    if targets.shape != logits.shape:
        raise ShapeError(f"targets {tuple(targets.shape)} vs logits {tuple(logits.shape)}")
    rows = logits.shape[0]
    if rows == 0:
        return logits.new_zeros(())
    if validate:
        err = (targets.detach().sum(dim=1) - 1).abs().max()
        if err > 1e-4 or (targets.detach() < 0).any():
            raise DataError(f"targets are not row-stochastic (max row-sum error {float(err):.2e})")
    logp = F.log_softmax(logits, dim=1).clamp_min(math.log(LOG_FLOOR))
    return -(targets * logp).sum() / rows


def infonce_bidirectional(s: torch.Tensor, v: torch.Tensor, tau) -> torch.Tensor:
    if s.shape[0] == 0:
        raise DataError("empty batch")
    if s.shape != v.shape:
        raise ShapeError(f"paired batches differ in shape: {tuple(s.shape)} vs {tuple(v.shape)}")
    logits = cosine_logits(s, v, tau)
    eye = torch.eye(s.shape[0], dtype=s.dtype, device=s.device)
    return soft_cross_entropy(eye, logits, validate=False) + soft_cross_entropy(eye, logits.T, validate=False)


def intra_targets(x: torch.Tensor, beta: float, tau_t=1.0) -> torch.Tensor:
    """beta * softmax(X X^T / tau_t) + (1 - beta) * I."""
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}", path="loss.beta")
    eye = torch.eye(x.shape[0], dtype=x.dtype, device=x.device)
    if beta == 0:
        return eye
    return beta * F.softmax(x @ x.T / tau_t, dim=1) + (1 - beta) * eye


def inter_targets(s: torch.Tensor, v: torch.Tensor, tau_t=1.0,
                  row_constant: bool = True) -> Tuple[torch.Tensor, torch.Tensor]:
    """Cross-consistency targets ``(Q_v2s, Q_s2v)``.

    Q_v2s[i, j] = softmax_j((<s_i, v_j> + <v_i, s_i> + <s_j, v_j>) / tau_t):
    the cross term from the opposite direction, a row-constant term carrying
    the sample's own positive-pair score, and a column term that weights each
    candidate by how sound its own pairing is. Q_s2v swaps the roles. The
    row-constant term cancels inside the softmax; ``row_constant=False``
    drops it.
    """
    if s.shape != v.shape:
        raise ShapeError(f"paired batches differ in shape: {tuple(s.shape)} vs {tuple(v.shape)}")
    sv = s @ v.T
    pos = torch.diagonal(sv)
    col = pos[None, :]
    row = pos[:, None] if row_constant else 0.0
    q_v2s = F.softmax((sv + row + col) / tau_t, dim=1)
    q_s2v = F.softmax((sv.T + row + col) / tau_t, dim=1)
    return q_v2s, q_s2v


def _branch(sx, x, tsx, tx, part: BatchPartition, cfg: LossConfig, tau, tau_t, dynamic: bool = True):
    """Intra and inter terms for one skeleton <-> target-modality branch."""
    b = sx.shape[0]
    if dynamic:
        rows_intra, rows_inter = part.intra, part.inter
    else:
        rows_intra = rows_inter = slice(0, b)
    eye = torch.eye(b, dtype=sx.dtype, device=sx.device)
    if cfg.intra:
        p_s2x = intra_targets(tsx, cfg.beta, tau_t)
        p_x2s = intra_targets(tx, cfg.beta, tau_t)
    else:
        p_s2x = p_x2s = eye
    if cfg.inter:
        q_x2s, q_s2x = inter_targets(tsx, tx, tau_t)
    else:
        q_x2s = q_s2x = eye
    logits_sx = cosine_logits(sx, x, tau)
    logits_xs = cosine_logits(x, sx, tau)
    intra = (soft_cross_entropy(p_s2x[rows_intra], logits_sx[rows_intra], validate=False)
             + soft_cross_entropy(p_x2s[rows_intra], logits_xs[rows_intra], validate=False))
    inter = (soft_cross_entropy(q_s2x[rows_inter], logits_sx[rows_inter], validate=False)
             + soft_cross_entropy(q_x2s[rows_inter], logits_xs[rows_inter], validate=False))
    return intra, inter


def combined_soft_loss(s: torch.Tensor, v: torch.Tensor, l: torch.Tensor, partition: BatchPartition,
                       config: LossConfig, tau, *, s_lang: Optional[torch.Tensor] = None, tau_lang=None,
                       teacher: Optional[tuple] = None, detach_targets: bool = True,
                       dynamic_partition: bool = True) -> LossBreakdown:
    """Progressive soft objective summed over the vision and language branches.

    ``s`` is the skeleton embedding in the vision space; ``s_lang`` (default
    ``s``) the one in the language space. Targets come from ``teacher``
    ``(s, v, l, s_lang)`` when given, else from the current embeddings,
    gradient-stopped unless ``detach_targets`` is False. With
    ``dynamic_partition`` off both target families cover the whole batch.
    """
    s_lang = s if s_lang is None else s_lang
    tau_lang = tau if tau_lang is None else tau_lang
    b = s.shape[0]
    if b == 0:
        raise DataError("empty batch")
    for name, m in (("v", v), ("l", l), ("s_lang", s_lang)):
        if m.shape[0] != b:
            raise ShapeError(f"{name} has {m.shape[0]} rows, skeleton batch has {b}")
    if partition.size != b or partition.n_intra + partition.n_inter != b:
        raise PartitionError(f"partition {partition.n_intra}+{partition.n_inter} inconsistent with batch of {b}")
    zero = s.new_zeros(())
    alpha = float(partition.alpha)
    tau_f = float(tau.detach()) if torch.is_tensor(tau) else float(tau)

    if config.mode == "infonce":
        sv = infonce_bidirectional(s, v, tau) if config.use_vision else zero
        sl = infonce_bidirectional(s_lang, l, tau_lang) if config.use_language else zero
        return LossBreakdown(sv + sl, sv.detach(), zero, sl.detach(), zero, 1.0, 0.0, tau_f)

    if teacher is None:
        teacher = (s, v, l, s_lang)
    if detach_targets:
        teacher = tuple(t.detach() for t in teacher)
    ts, tv, tl, tsl = teacher
    if config.target_temperature == "shared":
        tau_t, tau_tl = tau, tau_lang
        if detach_targets:
            tau_t = tau.detach() if torch.is_tensor(tau) else tau
            tau_tl = tau_lang.detach() if torch.is_tensor(tau_lang) else tau_lang
    else:
        tau_t = tau_tl = 1.0

    sv_intra = sv_inter = sl_intra = sl_inter = zero
    if config.use_vision:
        sv_intra, sv_inter = _branch(s, v, ts, tv, partition, config, tau, tau_t, dynamic_partition)
    if config.use_language:
        sl_intra, sl_inter = _branch(s_lang, l, tsl, tl, partition, config, tau_lang, tau_tl,
                                     dynamic_partition)
    total = alpha * (sv_intra + sl_intra) + (1 - alpha) * (sv_inter + sl_inter)
    return LossBreakdown(total, sv_intra.detach(), sv_inter.detach(), sl_intra.detach(), sl_inter.detach(),
                         alpha, config.beta, tau_f)
