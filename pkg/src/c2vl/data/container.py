"""Binary-block-plus-index dataset container (``c2vl-skel-v1``).

A container directory holds ``index.json`` (one entry per sample with its byte
offset and shape into ``data.bin``), the little-endian float32 blob itself and
an optional ``splits.json`` benchmark definition.
"""
from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from ..errors import ConfigError, ParseError
from .skeleton import NUM_FRAMES, DatasetSplit, SkeletonSequence
from .splits import load_split_definitions, make_split

logger = logging.getLogger(__name__)

VERSION = "c2vl-skel-v1"
INDEX_NAME = "index.json"
BLOB_NAME = "data.bin"
SPLITS_NAME = "splits.json"
_DTYPE = np.dtype("<f4")


def write_container(out_dir, sequences: Iterable[SkeletonSequence], dataset: str,
                    splits: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    tmp_blob = out / (BLOB_NAME + ".tmp")
    with open(tmp_blob, "wb") as f:
        for seq in sequences:
            arr = np.ascontiguousarray(seq.data, dtype=_DTYPE)
            f.write(arr.tobytes())
            entries.append({
                "sample_id": seq.sample_id,
                "label": seq.label,
                "subject_id": int(seq.subject_id),
                "camera_id": int(seq.camera_id),
                "setup_id": int(seq.setup_id),
                "offset": offset,
                "shape": list(arr.shape),
            })
            offset += arr.nbytes
    os.replace(tmp_blob, out / BLOB_NAME)
    index = {"version": VERSION, "dataset": dataset, "dtype": "<f4", "samples": entries}
    with open(out / INDEX_NAME, "w", encoding="utf-8") as f:
        json.dump(index, f)
    if splits is not None:
        with open(out / SPLITS_NAME, "w", encoding="utf-8") as f:
            json.dump(splits, f, indent=1)
    return out


def read_index(path) -> dict:
    index_path = Path(path) / INDEX_NAME
    if not index_path.exists():
        raise ParseError("missing container index", file=index_path)
    try:
        with open(index_path, encoding="utf-8") as f:
            index = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"corrupt index: {e.msg}", file=index_path, offset=e.pos) from e
    if index.get("version") != VERSION:
        raise ParseError(f"unsupported container version {index.get('version')!r}", file=index_path)
    return index


def read_sequences(path, frames: Optional[int] = NUM_FRAMES) -> Tuple[List[SkeletonSequence], dict]:
    """Memory-map the blob and return one sequence view per index entry."""
    path = Path(path)
    index = read_index(path)
    blob_path = path / BLOB_NAME
    if not blob_path.exists():
        raise ParseError("missing data blob", file=blob_path)
    size = blob_path.stat().st_size
    blob = np.memmap(blob_path, dtype=_DTYPE, mode="r") if size else np.zeros(0, _DTYPE)
    seqs = []
    for e in index["samples"]:
        shape = tuple(e["shape"])
        nbytes = int(np.prod(shape)) * _DTYPE.itemsize
        start = int(e["offset"])
        if start % _DTYPE.itemsize or start + nbytes > size:
            # report where the record starts and where the file actually ends
            raise ParseError(
                f"record {e['sample_id']} truncated: needs bytes [{start}, {start + nbytes}) but blob ends at {size}",
                file=blob_path, offset=min(start, size),
            )
        data = blob[start // 4: (start + nbytes) // 4].reshape(shape)
        seq = SkeletonSequence(e["sample_id"], data, e.get("subject_id", 0), e.get("camera_id", 0),
                               e.get("setup_id", 0), e.get("label"))
        if frames is not None and seq.frames != frames:
            raise ParseError(f"record {seq.sample_id} has {seq.frames} frames, expected {frames}", file=blob_path,
                             offset=start)
        seqs.append(seq)
    return seqs, index


def load_dataset(path, benchmark: str) -> Tuple[List[SkeletonSequence], DatasetSplit]:
    seqs, index = read_sequences(path)
    defs_path = Path(path) / SPLITS_NAME
    defs = load_split_definitions(defs_path if defs_path.exists() else None)
    dataset = index.get("dataset", "")
    if dataset not in defs:
        raise ConfigError(f"no split definition for dataset {dataset!r}", path="data.benchmark")
    split = make_split(seqs, benchmark, defs[dataset])
    logger.info("loaded %d sequences from %s (%s: %d train / %d test)", len(seqs), path, benchmark,
                len(split.train_ids), len(split.test_ids))
    return seqs, split
