"""Parsers for raw dataset releases and the ``ingest`` converter."""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from ..errors import ConfigError, EmptySequenceError, ParseError
from .container import write_container
from .skeleton import NUM_FRAMES, SkeletonSequence, center_sequence, downsample_frames
from .splits import load_split_definitions

logger = logging.getLogger(__name__)

NTU_NAME = re.compile(r"S(?P<setup>\d{3})C(?P<camera>\d{3})P(?P<subject>\d{3})R(?P<rep>\d{3})A(?P<action>\d{3})")
PKU_NAME = re.compile(r"(?P<subject>\d+)\D*?-(?P<view>[LMR])", re.IGNORECASE)
DATASETS = ("ntu60", "ntu120", "pkummd2")


class _Lines:
    """Line reader that tracks the byte offset of the current line."""

    def __init__(self, path):
        self.path = path
        self.raw = Path(path).read_bytes()
        self.pos = 0
        self.line_start = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.raw):
            raise ParseError(f"unexpected end of file while reading {what}", file=self.path, offset=self.pos)
        self.line_start = self.pos
        end = self.raw.find(b"\n", self.pos)
        end = len(self.raw) if end < 0 else end
        self.pos = end + 1
        return self.raw[self.line_start:end].decode("ascii", errors="replace").strip()

    def ints(self, what: str) -> int:
        text = self.next(what)
        try:
            return int(text)
        except ValueError:
            raise ParseError(f"expected integer {what}, got {text[:40]!r}", file=self.path,
                             offset=self.line_start) from None

    def floats(self, what: str, n: int) -> List[float]:
        text = self.next(what)
        parts = text.split()
        if len(parts) < n:
            raise ParseError(f"{what}: expected {n} values, got {len(parts)}", file=self.path,
                             offset=self.line_start)
        try:
            return [float(p) for p in parts[:n]]
        except ValueError:
            raise ParseError(f"{what}: non-numeric value", file=self.path, offset=self.line_start) from None


def parse_ntu_skeleton(path, max_bodies: int = 2) -> np.ndarray:
    """Parse one NTU ``.skeleton`` text file into frames x 25 x 3 x max_bodies.

    When more bodies are tracked than kept, the ones with the largest
    coordinate variance over time win (passers-by tend to be static).
    """
    r = _Lines(path)
    n_frames = r.ints("frame count")
    bodies = {}  # body id -> frames x joints x 3
    for t in range(n_frames):
        n_bodies = r.ints(f"body count (frame {t})")
        for _ in range(n_bodies):
            info = r.next(f"body info (frame {t})").split()
            if not info:
                raise ParseError("empty body info line", file=path, offset=r.line_start)
            body_id = info[0]
            n_joints = r.ints(f"joint count (frame {t})")
            coords = np.array([r.floats(f"joint {j} (frame {t})", 3) for j in range(n_joints)], dtype=np.float32)
            if body_id not in bodies:
                bodies[body_id] = np.zeros((n_frames, n_joints, 3), dtype=np.float32)
            bodies[body_id][t] = coords
    if n_frames == 0 or not bodies:
        raise EmptySequenceError(f"{path}: no tracked frames")
    ranked = sorted(bodies.values(), key=lambda b: -float(b.reshape(n_frames, -1).var(axis=0).sum()))
    joints = ranked[0].shape[1]
    out = np.zeros((n_frames, joints, 3, max_bodies), dtype=np.float32)
    for m, b in enumerate(ranked[:max_bodies]):
        out[..., m] = b
    return out


def iter_ntu(raw_dir, max_bodies: int = 2, frames: int = NUM_FRAMES) -> Iterator[SkeletonSequence]:
    for path in sorted(Path(raw_dir).glob("*.skeleton")):
        m = NTU_NAME.search(path.stem)
        if not m:
            raise ParseError("file name does not follow SsssCcccPpppRrrrAaaa", file=path)
        try:
            data = parse_ntu_skeleton(path, max_bodies)
        except EmptySequenceError:
            logger.warning("skipping %s: no skeleton frames", path.name)
            continue
        seq = SkeletonSequence(path.stem, data, int(m["subject"]), int(m["camera"]), int(m["setup"]),
                               int(m["action"]) - 1)
        yield center_sequence(downsample_frames(seq, frames))


def iter_pkummd2(raw_dir, frames: int = NUM_FRAMES) -> Iterator[SkeletonSequence]:
    """PKU-MMD II: ``skeleton/<video>.txt`` (150 values per line: 2 bodies x 25 x 3)
    plus ``label/<video>.txt`` with ``class,start,end[,confidence]`` segments."""
    raw_dir = Path(raw_dir)
    for skel_path in sorted((raw_dir / "skeleton").glob("*.txt")):
        label_path = raw_dir / "label" / skel_path.name
        if not label_path.exists():
            raise ParseError("no matching label file", file=label_path)
        rows = []
        r = _Lines(skel_path)
        while r.pos < len(r.raw):
            line = r.next("frame")
            if not line:
                continue
            parts = line.split()
            if len(parts) != 150:
                raise ParseError(f"expected 150 values per frame, got {len(parts)}", file=skel_path,
                                 offset=r.line_start)
            rows.append([float(p) for p in parts])
        video = np.asarray(rows, dtype=np.float32).reshape(-1, 2, 25, 3).transpose(0, 2, 3, 1)
        m = PKU_NAME.search(skel_path.stem)
        subject = int(m["subject"]) if m else 0
        camera = "LMR".index(m["view"].upper()) + 1 if m else 0
        for k, line in enumerate(label_path.read_text().split()):
            cls, start, end = (int(float(x)) for x in line.split(",")[:3])
            if end <= start or start >= len(video):
                raise ParseError(f"segment {k} [{start}, {end}) outside {len(video)} frames", file=label_path)
            seq = SkeletonSequence(f"{skel_path.stem}_{k:03d}", video[start:end], subject, camera, 0, cls - 1)
            yield center_sequence(downsample_frames(seq, frames))


def ingest(raw_dir, out_dir, dataset: str, splits_file: Optional[str] = None, frames: int = NUM_FRAMES) -> Path:
    if dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {dataset!r}; expected one of {DATASETS}", path="dataset")
    defs = load_split_definitions(splits_file)
    if dataset not in defs:
        raise ConfigError(f"no split definition for {dataset}; pass --splits with the official lists",
                          path="splits")
    seqs = iter_pkummd2(raw_dir, frames) if dataset == "pkummd2" else iter_ntu(raw_dir, frames=frames)
    return write_container(out_dir, seqs, dataset, splits={"version": defs.get("version"), dataset: defs[dataset]})
