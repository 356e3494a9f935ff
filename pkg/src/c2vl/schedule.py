"""Progressive alpha schedule, batch partitioning and the step learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List

from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlphaSchedule:
    total_epochs: int
    alpha_start: float = 0.9
    alpha_end: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha_end <= self.alpha_start <= 1.0:
            raise ConfigError(f"need 0 <= alpha_end <= alpha_start <= 1, got {self.alpha_start} -> {self.alpha_end}",
                              path="schedule.alpha_start")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be positive", path="optim.epochs")


def alpha_at(epoch: int, sched: AlphaSchedule) -> float:
    """Cosine anneal from alpha_start at epoch 0 to alpha_end at epoch T."""
    t = sched.total_epochs
    if not 0 <= epoch <= t:
        logger.warning("epoch %s outside [0, %d]; clamping", epoch, t)
        epoch = min(max(epoch, 0), t)
    return sched.alpha_end + (sched.alpha_start - sched.alpha_end) * (1.0 + math.cos(math.pi * epoch / t)) / 2.0


@dataclass(frozen=True)
class BatchPartition:
    """First ``n_intra`` rows get intra targets, the remaining ``n_inter`` inter targets."""

    size: int
    n_intra: int
    n_inter: int
    alpha: float

    @property
    def intra(self) -> slice:
        return slice(0, self.n_intra)

    @property
    def inter(self) -> slice:
        return slice(self.n_intra, self.size)


def partition_batch(size: int, alpha: float) -> BatchPartition:
    if size < 1:
        raise ConfigError("batch size must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    n_intra = math.floor(alpha * size)
    return BatchPartition(size, n_intra, size - n_intra, alpha)


@dataclass
class OptimizerConfig:
    kind: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: List[int] = field(default_factory=lambda: [130, 140])
    gamma: float = 0.1
    epochs: int = 150
    batch_size: int = 400
    grad_clip: float = 0.0  # max global grad norm; 0 disables

    def validate(self):
        if any(m >= self.epochs for m in self.milestones):
            raise ConfigError(f"milestones {self.milestones} must be below epochs={self.epochs}", path="optim.milestones")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0", path="optim.grad_clip")
        if self.kind != "sgd":
            raise ConfigError("only SGD is supported", path="optim.kind")


def lr_at(epoch: int, cfg: OptimizerConfig) -> float:
    drops = sum(1 for m in cfg.milestones if epoch >= m)
    return cfg.lr * cfg.gamma ** drops
