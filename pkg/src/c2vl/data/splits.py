"""Benchmark splits and label-fraction subsets."""
from __future__ import annotations

import json
from collections import defaultdict
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError
from .skeleton import DatasetSplit

BENCHMARKS = {"xsub": ("subject_id", "train_subjects"),
              "xview": ("camera_id", "train_cameras"),
              "xset": ("setup_id", "train_setups")}


def load_split_definitions(path=None) -> dict:
    if path is None:
        text = resources.files("c2vl.resources").joinpath("splits.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    return json.loads(text)


def make_split(seqs, benchmark: str, definition: dict) -> DatasetSplit:
    key = benchmark.lower()
    if key not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {benchmark!r}; expected one of Xsub, Xview, Xset",
                          path="data.benchmark")
    if key not in definition:
        raise ConfigError(f"benchmark {benchmark!r} not defined for this dataset", path="data.benchmark")
    attr, field = BENCHMARKS[key]
    train_keys = set(definition[key][field])
    train, test = [], []
    for s in seqs:
        (train if getattr(s, attr) in train_keys else test).append(s.sample_id)
    return DatasetSplit(key, tuple(train), tuple(test))


def semi_subset(labels: Sequence[int], fraction: float, seed: int) -> list:
    """Stratified per-class sample: round(fraction * class size), at least one."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}", path="eval.semi_fractions")
    by_class = defaultdict(list)
    for i, y in enumerate(labels):
        by_class[int(y)].append(i)
    rng = np.random.default_rng(seed)
    picked = []
    for cls in sorted(by_class):
        idx = np.asarray(by_class[cls])
        n = max(1, int(round(fraction * len(idx))))
        picked.extend(int(i) for i in rng.choice(idx, size=n, replace=False))
    return sorted(picked)


def holdout_split(labels: Sequence[int], test_fraction: float, seed: int):
    """Stratified train/test index split, used for corpora without a benchmark file."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test fraction must lie in (0, 1)")
    by_class = defaultdict(list)
    for i, y in enumerate(labels):
        by_class[int(y)].append(i)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted(by_class):
        idx = rng.permutation(by_class[cls])
        n_test = int(round(test_fraction * len(idx)))
        if n_test == 0 or n_test == len(idx):
            raise DataError(f"class {cls} too small for a {test_fraction:.0%} holdout")
        test.extend(int(i) for i in idx[:n_test])
        train.extend(int(i) for i in idx[n_test:])
    return sorted(train), sorted(test)


def subset_by_ids(seqs, ids: Optional[Sequence[str]]):
    if ids is None:
        return list(seqs)
    wanted = set(ids)
    return [s for s in seqs if s.sample_id in wanted]
