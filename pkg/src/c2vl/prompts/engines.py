"""Detector / VQA engine clients.

``StubEngine`` is a deterministic stand-in that needs no model weights;
``RemoteEngine`` talks JSON over HTTP to hosted detector and VQA services.
"""
from __future__ import annotations

import base64
import colorsys
import hashlib
import os
import threading
from typing import List, Optional, Protocol

import httpx
import numpy as np

from ..errors import C2VLError, ConfigError, TransportError
from .frames import BACKGROUND, decode_png, encode_png
from .records import Detection

HUE_NAMES = ("red", "orange", "yellow", "lime", "green", "teal",
             "cyan", "azure", "blue", "violet", "magenta", "pink")
NOUNS = ("cup", "ball", "book", "phone", "bottle", "bag",
         "hat", "towel", "umbrella", "paper", "shoe", "glasses")
VERBS = ("drink", "throw", "read", "call", "pour", "carry",
         "wear", "wipe", "open", "write", "kick", "adjust")


class EngineClient(Protocol):
    name: str

    def detect(self, frame: np.ndarray, text_prompt: str) -> List[Detection]: ...

    def answer(self, image: bytes, question: str) -> str: ...


class StubEngine:
    """Deterministic engine for offline runs and tests.

    ``detect`` boxes every non-background pixel of a rendered frame.
    ``answer`` names the dominant saturated hue in the crop (the held object),
    the posture from the crop's aspect ratio, and a verb tied to the hue.
    Both are pure functions of (input bytes, seed).
    """

    name = "stub"

    def __init__(self, seed: int = 0, min_score: float = 0.8):
        self.seed = seed
        self.min_score = min_score
        self.calls = {"detect": 0, "answer": 0}
        self._lock = threading.Lock()

    def _count(self, kind):
        with self._lock:
            self.calls[kind] += 1

    def detect(self, frame, text_prompt):
        self._count("detect")
        if text_prompt != "person":
            return []
        frame = np.asarray(frame)
        fg = np.abs(frame.astype(np.int16) - np.asarray(BACKGROUND, dtype=np.int16)).sum(axis=2) > 30
        if not fg.any():
            return []
        ys, xs = np.nonzero(fg)
        h, w = fg.shape
        box = (xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h)
        digest = hashlib.sha256(frame.tobytes() + str(self.seed).encode()).digest()
        score = self.min_score + (1.0 - self.min_score) * digest[0] / 255.0
        return [Detection(tuple(float(b) for b in box), float(score))]

    def answer(self, image, question):
        self._count("answer")
        img = decode_png(image).astype(np.float32) / 255.0
        sat = img.max(axis=2) - img.min(axis=2)
        mask = sat > 0.5
        h, w = img.shape[:2]
        posture = "Standing" if h >= 1.2 * w else "Sitting"
        if not mask.any():
            return f"Nothing in the hand. {posture}. Trying to stretch."
        r, g, b = (img[..., c][mask].mean() for c in range(3))
        hue = colorsys.rgb_to_hsv(r, g, b)[0] * 360.0
        k = int(round(hue / 30.0)) % 12
        verb = VERBS[(k + self.seed) % len(VERBS)]
        return f"Holding a {HUE_NAMES[k]} {NOUNS[k]}. {posture}. Trying to {verb}."


def _b64_png(frame) -> str:
    data = frame if isinstance(frame, (bytes, bytearray)) else encode_png(frame)
    return base64.b64encode(bytes(data)).decode("ascii")


class RemoteEngine:
    """HTTP client for hosted detector and VQA endpoints.

    Detector: POST ``{"image": <b64 png>, "text_prompt": str}`` ->
    ``{"detections": [{"box": [x0, y0, x1, y1], "score": s}, ...]}`` (normalized boxes).
    VQA: POST ``{"image": <b64 png>, "question": str}`` -> ``{"answer": str}``.
    """

    name = "remote"

    def __init__(self, detector_url: str, vqa_url: str, token: Optional[str] = None, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None):
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.detector_url = detector_url
        self.vqa_url = vqa_url
        self.client = httpx.Client(headers=headers, timeout=timeout, transport=transport)
        self.calls = {"detect": 0, "answer": 0}

    @classmethod
    def from_env(cls, transport=None) -> "RemoteEngine":
        det, vqa = os.environ.get("C2VL_DETECTOR_URL"), os.environ.get("C2VL_VQA_URL")
        if not det or not vqa:
            raise ConfigError("remote engine needs C2VL_DETECTOR_URL and C2VL_VQA_URL", path="engine.mode")
        timeout = float(os.environ.get("C2VL_TIMEOUT", "60"))
        return cls(det, vqa, os.environ.get("C2VL_API_TOKEN"), timeout, transport)

    def _post(self, url, payload):
        try:
            resp = self.client.post(url, json=payload)
        except (httpx.TimeoutException, httpx.TransportError) as e:
            raise TransportError(f"{url}: {e}") from e
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"{url}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise C2VLError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def detect(self, frame, text_prompt):
        self.calls["detect"] += 1
        body = self._post(self.detector_url, {"image": _b64_png(frame), "text_prompt": text_prompt})
        return [Detection(tuple(float(v) for v in d["box"]), float(d["score"])) for d in body.get("detections", [])]

    def answer(self, image, question):
        self.calls["answer"] += 1
        body = self._post(self.vqa_url, {"image": _b64_png(image), "question": question})
        return str(body.get("answer", ""))


def make_engine(mode: str, seed: int = 0) -> EngineClient:
    if mode == "stub":
        return StubEngine(seed)
    if mode == "remote":
        return RemoteEngine.from_env()
    raise ConfigError(f"unknown engine mode {mode!r}", path="engine.mode")
