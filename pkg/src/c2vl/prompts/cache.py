"""Append-only JSONL prompt cache with crops stored as sibling PNG files."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
from pathlib import Path

from ..errors import NotFound
from .records import SCHEMA, LanguagePrompt, PromptRecord, VisionPrompt

logger = logging.getLogger(__name__)

_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def record_to_json(rec: PromptRecord, crop_path: str) -> dict:
    v, l = rec.vision, rec.language
    return {
        "schema": SCHEMA,
        "sample_id": rec.sample_id,
        "vision": {"crop": crop_path, "box": list(v.box), "frame_index": v.frame_index,
                   "detector_score": v.detector_score},
        "language": {"text": l.text, "question": l.question},
        "engine_meta": rec.engine_meta,
    }


class PromptCache:
    """Last write wins on read; all appends go through one lock."""

    def __init__(self, path):
        self.path = Path(path)
        self.crop_dir = self.path.parent / (self.path.name + ".crops")
        self.errors = []  # (line number, message) for skipped lines
        self._records = {}
        self._lock = threading.Lock()
        if self.path.exists():
            self._load()

    def _load(self):
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    if d.get("schema") != SCHEMA:
                        raise ValueError(f"schema {d.get('schema')!r}")
                    self._records[d["sample_id"]] = d
                except (ValueError, KeyError, TypeError) as e:
                    self.errors.append((lineno, str(e)))
                    logger.warning("%s:%d: skipping corrupt cache line (%s)", self.path, lineno, e)

    def __contains__(self, sample_id):
        return sample_id in self._records

    def __len__(self):
        return len(self._records)

    def ids(self):
        return list(self._records)

    def put(self, rec: PromptRecord) -> None:
        name = _SAFE.sub("_", rec.sample_id) + ".png"
        rel = f"{self.crop_dir.name}/{name}"
        line = json.dumps(record_to_json(rec, rel), ensure_ascii=False)
        with self._lock:
            self.crop_dir.mkdir(parents=True, exist_ok=True)
            tmp = self.crop_dir / (name + ".tmp")
            tmp.write_bytes(rec.vision.crop)
            os.replace(tmp, self.crop_dir / name)
            if rec.sample_id in self._records:
                logger.warning("overwriting cached prompt for %s", rec.sample_id)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
            self._records[rec.sample_id] = json.loads(line)

    def get(self, sample_id) -> PromptRecord:
        try:
            d = self._records[sample_id]
        except KeyError:
            raise NotFound(sample_id) from None
        v, l = d["vision"], d["language"]
        crop = (self.path.parent / v["crop"]).read_bytes()
        return PromptRecord(
            d["sample_id"],
            VisionPrompt(d["sample_id"], crop, tuple(v["box"]), int(v["frame_index"]), float(v["detector_score"])),
            LanguagePrompt(d["sample_id"], l["text"], l["question"]),
            dict(d.get("engine_meta", {})),
        )
