import base64
import json
import logging
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np
import pytest

from c2vl.data import synth_sequences
from c2vl.errors import EmptyCaption, NoPersonFound, NotFound, TransportError
from c2vl.prompts import (QUESTION, ArrayFrames, Detection, FramePolicy, LanguagePrompt, PromptCache, PromptRecord,
                          RemoteEngine, SkeletonFrames, StubEngine, VisionPrompt, decode_png, encode_png,
                          generate_language_prompt, generate_prompts, generate_record, generate_vision_prompt)
from c2vl.prompts.generate import clip_box, pick_box, select_frames, with_retry

QUESTION_TEXT = ("Is he/she or are they holding anything in the hand? Is he/she or are they standing or sitting? "
                 "What is he/she or are they trying to do? Answer the questions concisely")


class FixedBox:
    name = "fixed"

    def __init__(self, box=(0.25, 0.25, 0.75, 0.75), score=0.9, text="Holding a cup."):
        self.box, self.score, self.text = box, score, text
        self.prompts = []

    def detect(self, frame, text_prompt):
        self.prompts.append(text_prompt)
        return [Detection(self.box, self.score)]

    def answer(self, image, question):
        return self.text


def frames_of(n=5, h=40, w=60, seed=0):
    rng = np.random.default_rng(seed)
    return ArrayFrames(rng.integers(0, 255, size=(n, h, w, 3), dtype=np.uint8))


def test_question_constant_is_verbatim():
    assert QUESTION == QUESTION_TEXT


def test_fixed_box_crop_equals_subimage():
    frames = frames_of()
    vp = generate_vision_prompt("a", frames, FixedBox())
    assert vp.frame_index == 2
    np.testing.assert_array_equal(decode_png(vp.crop), np.asarray(frames[2])[10:30, 15:45])


def test_box_clipped_to_frame():
    vp = generate_vision_prompt("a", frames_of(), FixedBox(box=(-0.2, 0.5, 1.3, 1.1)))
    assert vp.box == (0.0, 0.5, 1.0, 1.0)
    assert clip_box((-1, 2, 0.5, 0.5)) == (0.0, 1.0, 0.5, 0.5)


def test_no_person_found_and_fallback():
    with pytest.raises(NoPersonFound) as e:
        generate_vision_prompt("a", frames_of(), FixedBox(score=0.1))
    assert e.value.frame_index == 2 and e.value.best_score == pytest.approx(0.1)
    vp = generate_vision_prompt("a", frames_of(), FixedBox(score=0.1), FramePolicy(fallback_fullframe=True))
    assert vp.box == (0.0, 0.0, 1.0, 1.0)


def test_pick_box_tiebreak_and_union():
    small = Detection((0.1, 0.1, 0.2, 0.2), 0.8)
    big = Detection((0.3, 0.3, 0.9, 0.9), 0.8)
    low = Detection((0.0, 0.0, 0.05, 0.05), 0.2)
    assert pick_box([small, big, low], 0.35, False) == big
    union = pick_box([small, big], 0.35, True)
    assert union.box == (0.1, 0.1, 0.9, 0.9)


def test_select_frames():
    assert select_frames(64, 1) == [32]
    assert select_frames(64, 3) == [0, 32, 63]


def test_empty_caption():
    vp = generate_vision_prompt("a", frames_of(), FixedBox())
    with pytest.raises(EmptyCaption):
        generate_language_prompt(vp, FixedBox(text="   \n"))


def test_language_prompt_untruncated():
    long = "word " * 2000
    vp = generate_vision_prompt("a", frames_of(), FixedBox())
    assert generate_language_prompt(vp, FixedBox(text=long)).text == long


def test_retry_then_succeed_and_exhaust():
    calls, sleeps = [], []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise TransportError("timeout")
        return "ok"

    assert with_retry(flaky, 3, 0.5, sleeps.append) == "ok"
    assert sleeps == [0.5, 1.0]
    with pytest.raises(TransportError):
        with_retry(lambda: (_ for _ in ()).throw(TransportError("x")), 3, 0.1, lambda s: None)


# ---------------------------------------------------------------- stub engine

def _synth_frames(hue=0.0, seed=0):
    seqs, _ = synth_sequences(3, 1, seed=seed)
    from c2vl.data import ntu25_bones
    return SkeletonFrames(seqs[0].data, edges=ntu25_bones().edges, object_hue=hue)


def test_stub_engine_deterministic():
    frames = _synth_frames()
    a = generate_record("x", frames, StubEngine(3))
    b = generate_record("x", frames, StubEngine(3))
    assert a.language.text == b.language.text and a.vision == b.vision


def test_stub_engine_only_answers_person_prompt():
    frame = np.asarray(_synth_frames()[10])
    eng = StubEngine()
    assert eng.detect(frame, "person") and not eng.detect(frame, "car")


def test_stub_caption_names_object_color():
    rec = generate_record("x", _synth_frames(hue=240.0), StubEngine())
    assert "blue" in rec.language.text and rec.language.question == QUESTION_TEXT


# ---------------------------------------------------------------- remote client on the wire

def test_remote_payloads_on_the_wire():
    seen = []

    def handler(request: httpx.Request):
        body = json.loads(request.content)
        seen.append((str(request.url), body, request.headers.get("authorization")))
        if request.url.path == "/detect":
            return httpx.Response(200, json={"detections": [{"box": [0.1, 0.2, 0.6, 0.9], "score": 0.7}]})
        return httpx.Response(200, json={"answer": "Holding a phone. Sitting. Trying to call."})

    eng = RemoteEngine("http://det/detect", "http://vqa/vqa", token="t0k", transport=httpx.MockTransport(handler))
    rec = generate_record("s1", frames_of(), eng)
    det_url, det_body, auth = seen[0]
    assert det_body["text_prompt"] == "person" and auth == "Bearer t0k"
    base64.b64decode(det_body["image"])
    assert seen[1][1]["question"] == QUESTION_TEXT
    assert rec.language.text.startswith("Holding a phone") and rec.vision.box == (0.1, 0.2, 0.6, 0.9)


def test_remote_5xx_retries_then_raises():
    hits = []

    def handler(request):
        hits.append(1)
        return httpx.Response(503)

    eng = RemoteEngine("http://det/d", "http://vqa/v", transport=httpx.MockTransport(handler))
    with pytest.raises(TransportError):
        generate_vision_prompt("s", frames_of(), eng, sleep=lambda s: None)
    assert len(hits) == 3


def test_remote_timeout_is_retryable():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    eng = RemoteEngine("http://det/d", "http://vqa/v", transport=httpx.MockTransport(handler))
    with pytest.raises(TransportError) as e:
        eng.detect(np.zeros((4, 4, 3), np.uint8), "person")
    assert e.value.retryable


def test_remote_from_env(monkeypatch):
    monkeypatch.setenv("C2VL_DETECTOR_URL", "http://d")
    monkeypatch.setenv("C2VL_VQA_URL", "http://v")
    monkeypatch.setenv("C2VL_TIMEOUT", "5")
    eng = RemoteEngine.from_env()
    assert eng.client.timeout.read == 5.0


# ---------------------------------------------------------------- cache

def _record(i, text="Holding a cup."):
    sid = f"s{i:05d}"
    crop = encode_png(np.full((3, 2, 3), i % 255, np.uint8))
    return PromptRecord(sid, VisionPrompt(sid, crop, (0.1, 0.1, 0.5, 0.5), 3, 0.9), LanguagePrompt(sid, text),
                        {"detector_name": "stub", "vqa_name": "stub", "timestamp": "2024-01-01T00:00:00+00:00"})


def test_cache_roundtrip_and_reload(tmp_path):
    cache = PromptCache(tmp_path / "p.jsonl")
    rec = _record(1)
    cache.put(rec)
    assert cache.get(rec.sample_id) == rec
    assert PromptCache(tmp_path / "p.jsonl").get(rec.sample_id) == rec
    with pytest.raises(NotFound):
        cache.get("nope")


def test_cache_duplicate_last_write_wins(tmp_path, caplog):
    cache = PromptCache(tmp_path / "p.jsonl")
    cache.put(_record(1, "first"))
    with caplog.at_level(logging.WARNING):
        cache.put(_record(1, "second"))
    assert "overwriting" in caplog.text
    assert PromptCache(tmp_path / "p.jsonl").get("s00001").language.text == "second"


def test_cache_skips_corrupt_lines(tmp_path):
    path = tmp_path / "p.jsonl"
    cache = PromptCache(path)
    cache.put(_record(1))
    with open(path, "a") as f:
        f.write('{"schema": "c2vl-prompt-v1", "sample_id": \n')
    cache2 = PromptCache(path)
    cache2.put(_record(2))
    reloaded = PromptCache(path)
    assert sorted(reloaded.ids()) == ["s00001", "s00002"]
    assert [ln for ln, _ in reloaded.errors] == [2]


def test_cache_concurrent_stress(tmp_path):
    path = tmp_path / "p.jsonl"
    cache = PromptCache(path)
    n = 10_000
    with ThreadPoolExecutor(max_workers=16) as pool:
        list(pool.map(cache.put, (_record(i) for i in range(n))))
    lines = path.read_text().splitlines()
    assert len(lines) == n
    ids = {json.loads(line)["sample_id"] for line in lines}
    assert len(ids) == n
    assert len(PromptCache(path)) == n


def test_warm_cache_makes_no_client_calls(tmp_path):
    seqs, _ = synth_sequences(2, 3, seed=0)
    from c2vl.data import ntu25_bones
    items = [(s.sample_id, SkeletonFrames(s.data, edges=ntu25_bones().edges, object_hue=s.meta["hue"]), 1)
             for s in seqs]
    cache = PromptCache(tmp_path / "p.jsonl")
    eng = StubEngine()
    recs = generate_prompts(items, eng, cache, workers=3)
    assert [r.sample_id for r in recs] == [s.sample_id for s in seqs]
    assert eng.calls == {"detect": 6, "answer": 6}
    eng2 = StubEngine()
    generate_prompts(items, eng2, PromptCache(tmp_path / "p.jsonl"))
    assert eng2.calls == {"detect": 0, "answer": 0}
