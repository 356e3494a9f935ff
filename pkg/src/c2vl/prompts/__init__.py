from .cache import PromptCache
from .engines import EngineClient, RemoteEngine, StubEngine, make_engine
from .frames import ArrayFrames, SkeletonFrames, VideoFrames, decode_png, encode_png
from .generate import (FramePolicy, generate_language_prompt, generate_prompts, generate_record,
                       generate_vision_prompt)
from .records import PERSON_PROMPT, QUESTION, Detection, LanguagePrompt, PromptRecord, VisionPrompt
