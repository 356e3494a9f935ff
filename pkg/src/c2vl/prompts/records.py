from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

# Composite question sent verbatim to the VQA engine.
QUESTION = (
    "Is he/she or are they holding anything in the hand? "
    "Is he/she or are they standing or sitting? "
    "What is he/she or are they trying to do? "
    "Answer the questions concisely"
)
PERSON_PROMPT = "person"
SCHEMA = "c2vl-prompt-v1"


@dataclass(frozen=True)
class Detection:
    box: Tuple[float, float, float, float]  # normalized x0, y0, x1, y1
    score: float

    @property
    def area(self) -> float:
        return max(0.0, self.box[2] - self.box[0]) * max(0.0, self.box[3] - self.box[1])


@dataclass(frozen=True)
class VisionPrompt:
    sample_id: str
    crop: bytes  # PNG
    box: Tuple[float, float, float, float]
    frame_index: int
    detector_score: float


@dataclass(frozen=True)
class LanguagePrompt:
    sample_id: str
    text: str
    question: str = QUESTION


@dataclass(frozen=True)
class PromptRecord:
    sample_id: str
    vision: VisionPrompt
    language: LanguagePrompt
    engine_meta: dict = field(default_factory=dict, compare=True, hash=False)
