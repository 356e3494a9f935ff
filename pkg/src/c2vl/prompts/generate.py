"""Sample-level vision and language prompt generation."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

from ..errors import DataError, EmptyCaption, NoPersonFound, TransportError
from .frames import decode_png, encode_png
from .records import PERSON_PROMPT, QUESTION, Detection, LanguagePrompt, PromptRecord, VisionPrompt

logger = logging.getLogger(__name__)


@dataclass
class FramePolicy:
    frames: int = 1  # 1 = middle frame only
    threshold: float = 0.35
    fallback_fullframe: bool = False
    attempts: int = 3
    backoff: float = 0.5


def with_retry(fn: Callable, attempts: int = 3, backoff: float = 0.5, sleep=time.sleep):
    for k in range(attempts):
        try:
            return fn()
        except TransportError:
            if k == attempts - 1:
                raise
            delay = backoff * 2 ** k
            logger.warning("transport error, retrying in %.2fs (%d/%d)", delay, k + 1, attempts)
            sleep(delay)


def select_frames(n: int, count: int) -> List[int]:
    if n < 1:
        raise DataError("frame source is empty")
    if count <= 1:
        return [n // 2]
    return sorted({int(round(x)) for x in np.linspace(0, n - 1, count)})


def clip_box(box) -> Tuple[float, float, float, float]:
    return tuple(float(min(max(v, 0.0), 1.0)) for v in box)


def pick_box(dets: List[Detection], threshold: float, multi_person: bool) -> Optional[Detection]:
    """Best person box: union of all boxes for multi-person samples, otherwise
    the highest score with ties going to the larger box."""
    kept = [Detection(clip_box(d.box), d.score) for d in dets if d.score >= threshold]
    kept = [d for d in kept if d.box[0] < d.box[2] and d.box[1] < d.box[3]]
    if not kept:
        return None
    if multi_person and len(kept) > 1:
        xs0, ys0, xs1, ys1 = zip(*(d.box for d in kept))
        return Detection((min(xs0), min(ys0), max(xs1), max(ys1)), max(d.score for d in kept))
    return max(kept, key=lambda d: (d.score, d.area))


def crop_image(frame: np.ndarray, box) -> np.ndarray:
    h, w = frame.shape[:2]
    x0, x1 = int(math.floor(box[0] * w)), int(math.ceil(box[2] * w))
    y0, y1 = int(math.floor(box[1] * h)), int(math.ceil(box[3] * h))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)
    return frame[y0:y1, x0:x1]


def generate_vision_prompt(sample_id: str, frames, client, policy: FramePolicy = FramePolicy(),
                           multi_person: bool = False, sleep=time.sleep) -> VisionPrompt:
    indices = select_frames(len(frames), policy.frames)
    best, best_idx, best_score = None, None, None
    for idx in indices:
        frame = frames[idx]
        dets = with_retry(lambda: client.detect(frame, PERSON_PROMPT), policy.attempts, policy.backoff, sleep)
        if dets:
            top = max(d.score for d in dets)
            best_score = top if best_score is None else max(best_score, top)
        choice = pick_box(dets, policy.threshold, multi_person)
        if choice is not None and (best is None or choice.score > best.score):
            best, best_idx = choice, idx
    if best is None:
        if not policy.fallback_fullframe:
            raise NoPersonFound(indices[len(indices) // 2], best_score)
        best_idx = indices[len(indices) // 2]
        best = Detection((0.0, 0.0, 1.0, 1.0), 0.0)
        logger.warning("%s: no person found, falling back to the full frame", sample_id)
    crop = crop_image(np.asarray(frames[best_idx]), best.box)
    return VisionPrompt(sample_id, encode_png(crop), best.box, int(best_idx), float(best.score))


def generate_language_prompt(vision: VisionPrompt, client, policy: FramePolicy = FramePolicy(),
                             sleep=time.sleep) -> LanguagePrompt:
    decode_png(vision.crop)
    text = with_retry(lambda: client.answer(vision.crop, QUESTION), policy.attempts, policy.backoff, sleep)
    if not text or not text.strip():
        raise EmptyCaption(f"{vision.sample_id}: engine returned an empty answer")
    return LanguagePrompt(vision.sample_id, text, QUESTION)


def generate_record(sample_id, frames, client, policy=FramePolicy(), multi_person=False,
                    sleep=time.sleep) -> PromptRecord:
    vision = generate_vision_prompt(sample_id, frames, client, policy, multi_person, sleep)
    language = generate_language_prompt(vision, client, policy, sleep)
    meta = {"detector_name": client.name, "vqa_name": client.name,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    return PromptRecord(sample_id, vision, language, meta)


def generate_prompts(samples: Iterable, client, cache, policy: FramePolicy = FramePolicy(),
                     workers: int = 4) -> List[PromptRecord]:
    """Produce one record per sample, reusing cached ones.

    ``samples`` yields ``(sample_id, frames, bodies)``; frames may be a
    callable so unused sources are never materialised.
    """
    samples = list(samples)
    todo = [s for s in samples if s[0] not in cache]
    logger.info("%d samples, %d cached, %d to generate", len(samples), len(samples) - len(todo), len(todo))

    def work(item):
        sid, frames, bodies = item
        frames = frames() if callable(frames) else frames
        rec = generate_record(sid, frames, client, policy, multi_person=bodies > 1)
        cache.put(rec)
        return rec

    if todo:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            list(pool.map(work, todo))
    return [cache.get(s[0]) for s in samples]
