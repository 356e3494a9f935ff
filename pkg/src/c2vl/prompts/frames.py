"""Frame sources feeding the detector, plus PNG helpers and a skeleton renderer."""
from __future__ import annotations

import colorsys
import io
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError

BACKGROUND = (40, 40, 40)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as e:  # PIL raises a zoo of types
        raise DataError(f"crop does not decode as an image: {e}") from e
    arr = np.asarray(img.convert("RGB"))
    if arr.size == 0:
        raise DataError("crop decodes to an empty image")
    return arr


def hue_color(hue_deg: float) -> tuple:
    r, g, b = colorsys.hsv_to_rgb((hue_deg % 360) / 360.0, 1.0, 1.0)
    return int(r * 255), int(g * 255), int(b * 255)


class ArrayFrames:
    """In-memory frames, each H x W x 3 uint8."""

    def __init__(self, frames: Sequence[np.ndarray]):
        self.frames = list(frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


class VideoFrames:
    """Lazily decoded video file (needs opencv)."""

    def __init__(self, path):
        try:
            import cv2
        except ImportError as e:  # pragma: no cover - depends on environment
            raise ConfigError("reading videos requires opencv-python") from e
        self._cv2 = cv2
        self.path = str(path)
        cap = cv2.VideoCapture(self.path)
        self._n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        cap.release()

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        cap = self._cv2.VideoCapture(self.path)
        cap.set(self._cv2.CAP_PROP_POS_FRAMES, int(i))
        ok, frame = cap.read()
        cap.release()
        if not ok:
            raise DataError(f"{self.path}: cannot decode frame {i}")
        return frame[:, :, ::-1].copy()


class SkeletonFrames:
    """Renders a skeleton sequence (frames x joints x 3 x bodies) to small RGB frames.

    Stands in for the RGB video when none is available. An optional held
    object is drawn at ``object_joint`` in ``object_hue``.
    """

    def __init__(self, data: np.ndarray, size: int = 64, edges=(), object_hue: Optional[float] = None,
                 object_joint: int = 11, object_px: int = 12):
        self.data = np.asarray(data)
        self.size = size
        self.edges = tuple(edges)
        self.object_hue = object_hue
        self.object_joint = object_joint
        self.object_px = object_px
        xy = self.data[:, :, :2, :]
        present = np.abs(self.data).sum(axis=(0, 1, 2)) > 0
        pts = xy[..., present] if present.any() else xy
        lo, hi = pts.min(axis=(0, 1, 3)), pts.max(axis=(0, 1, 3))
        self._center = (lo + hi) / 2
        self._scale = 0.8 * size / max(float((hi - lo).max()), 1e-6)

    def __len__(self):
        return self.data.shape[0]

    def _px(self, p):
        u = self.size / 2 + (p[0] - self._center[0]) * self._scale
        v = self.size / 2 - (p[1] - self._center[1]) * self._scale
        return int(np.clip(round(u), 0, self.size - 1)), int(np.clip(round(v), 0, self.size - 1))

    def __getitem__(self, t):
        s = self.size
        img = np.empty((s, s, 3), dtype=np.uint8)
        img[:] = BACKGROUND
        for m in range(self.data.shape[3]):
            body = self.data[t, :, :, m]
            if not np.abs(body).any():
                continue
            for a, b in self.edges:
                for w in np.linspace(0.0, 1.0, 8):
                    u, v = self._px(body[a] * (1 - w) + body[b] * w)
                    img[v, u] = (200, 200, 200)
            for j in range(body.shape[0]):
                u, v = self._px(body[j])
                img[max(v - 1, 0):v + 2, max(u - 1, 0):u + 2] = (235, 235, 235)
            if self.object_hue is not None and m == 0:
                u, v = self._px(body[self.object_joint])
                h = self.object_px // 2
                img[max(v - h, 0):v + h, max(u - h, 0):u + h] = hue_color(self.object_hue)
        return img
