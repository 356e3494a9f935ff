"""Skeleton sequences, temporal resampling and modality streams."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError, EmptySequenceError

NUM_FRAMES = 64
STREAM_KINDS = ("joint", "motion", "bone")


@dataclass
class SkeletonSequence:
    """One action sample. ``data`` is laid out frames x joints x 3 x bodies."""

    sample_id: str
    data: np.ndarray
    subject_id: int = 0
    camera_id: int = 0
    setup_id: int = 0
    label: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joints(self) -> int:
        return self.data.shape[1]

    @property
    def bodies(self) -> int:
        return self.data.shape[3]

    def validate(self, frames: Optional[int] = NUM_FRAMES) -> None:
        if self.data.ndim != 4 or self.data.shape[2] != 3:
            raise DataError(f"{self.sample_id}: expected frames x joints x 3 x bodies, got {self.data.shape}")
        if frames is not None and self.frames != frames:
            raise DataError(f"{self.sample_id}: {self.frames} frames, expected {frames}")
        if self.bodies not in (1, 2):
            raise DataError(f"{self.sample_id}: {self.bodies} bodies, expected 1 or 2")
        if not np.isfinite(self.data).all():
            raise DataError(f"{self.sample_id}: non-finite coordinates")


@dataclass(frozen=True)
class DatasetSplit:
    benchmark: str
    train_ids: tuple
    test_ids: tuple

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train/test overlap on {len(overlap)} ids, e.g. {sorted(overlap)[:3]}")


@dataclass
class ModalityStream:
    kind: str
    data: np.ndarray


@dataclass(frozen=True)
class BoneTable:
    layout: str
    num_joints: int
    center: int
    pairs: tuple  # (child, parent), 0-based

    @property
    def edges(self):
        return tuple((c, p) for c, p in self.pairs if c != p)

    @classmethod
    def from_dict(cls, d) -> "BoneTable":
        pairs = tuple((int(c), int(p)) for c, p in d["pairs"])
        return cls(d.get("layout", "custom"), int(d["num_joints"]), int(d.get("center", 0)), pairs)

    @classmethod
    def from_file(cls, path) -> "BoneTable":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@lru_cache(maxsize=None)
def ntu25_bones() -> BoneTable:
    text = resources.files("c2vl.resources").joinpath("ntu25_bones.json").read_text(encoding="utf-8")
    return BoneTable.from_dict(json.loads(text))


def chain_bones(num_joints: int) -> BoneTable:
    """Simple kinematic chain 0 <- 1 <- 2 ..., handy for toy skeletons."""
    return BoneTable("chain", num_joints, 0, tuple((j, max(j - 1, 0)) for j in range(num_joints)))


def bone_table_for(num_joints: int) -> BoneTable:
    if num_joints == 25:
        return ntu25_bones()
    return chain_bones(num_joints)


def frame_indices(n: int, target: int = NUM_FRAMES) -> np.ndarray:
    """Uniform source indices floor(k * n / target); repeats frames when n < target."""
    if n < 1:
        raise EmptySequenceError("cannot resample a sequence with zero frames")
    return (np.arange(target, dtype=np.int64) * n) // target


def downsample_frames(seq: SkeletonSequence, target: int = NUM_FRAMES) -> SkeletonSequence:
    if seq.data.shape[0] < 1:
        raise EmptySequenceError(f"{seq.sample_id}: zero-frame sequence")
    if seq.data.shape[0] == target:
        return replace(seq, data=seq.data.copy())
    idx = frame_indices(seq.data.shape[0], target)
    return replace(seq, data=np.ascontiguousarray(seq.data[idx]))


CENTER_JOINT = 1  # spine middle on the NTU layout


def center_sequence(seq: SkeletonSequence, joint: int = CENTER_JOINT) -> SkeletonSequence:
    """Translate all bodies so ``joint`` of body 0 sits at the origin on the first frame.

    Frames where a body is entirely zero (padding) stay zero.
    """
    data = seq.data.copy()
    joint = min(joint, data.shape[1] - 1)
    origin = data[0, joint, :, 0].copy()
    present = np.abs(data).sum(axis=(1, 2)) > 0  # frames x bodies
    for m in range(data.shape[3]):
        data[present[:, m], :, :, m] -= origin
    return replace(seq, data=data)


def _check_pairs(table: BoneTable, joints: int) -> None:
    for c, p in table.pairs:
        if not (0 <= c < joints and 0 <= p < joints):
            raise ConfigError(f"bone pair ({c}, {p}) outside a {joints}-joint skeleton", path="data.bones")


def derive_array(data: np.ndarray, kind: str, table: Optional[BoneTable] = None) -> np.ndarray:
    """Stream transform on a raw frames x joints x 3 x bodies array."""
    if kind == "joint":
        return data.copy()
    if kind == "motion":
        out = np.zeros_like(data)
        out[:-1] = data[1:] - data[:-1]
        return out
    if kind == "bone":
        table = table or bone_table_for(data.shape[1])
        _check_pairs(table, data.shape[1])
        out = np.zeros_like(data)
        for c, p in table.pairs:
            out[:, c] = data[:, c] - data[:, p]
        return out
    raise ConfigError(f"unknown stream kind {kind!r}; expected one of {STREAM_KINDS}", path="data.streams")


def derive_stream(seq: SkeletonSequence, kind: str, table: Optional[BoneTable] = None) -> ModalityStream:
    return ModalityStream(kind, derive_array(seq.data, kind, table))


def stack_batch(seqs: Sequence[SkeletonSequence], kind: str = "joint", table=None) -> np.ndarray:
    """Batch of sequences as N x (3*bodies) x T x V, bodies stacked on channels."""
    shapes = {s.data.shape for s in seqs}
    if len(shapes) > 1:
        ref = seqs[0].data.shape
        bad = [s.sample_id for s in seqs if s.data.shape != ref]
        raise DataError(f"shape mismatch within batch (reference {ref}): {bad}")
    arr = np.stack([derive_array(s.data, kind, table) for s in seqs]).astype(np.float32)
    return to_channels(arr)


def to_channels(arr: np.ndarray) -> np.ndarray:
    n, t, v, c, m = arr.shape
    return np.ascontiguousarray(arr.transpose(0, 4, 3, 1, 2).reshape(n, m * c, t, v))
