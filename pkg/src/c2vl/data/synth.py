"""Synthetic paired skeleton / prompt corpus for desk-scale runs.

Every class gets its own motion template on the 25-joint layout (a limb
group oscillating along a class-specific direction and frequency) and its own
held-object hue. Prompts are produced by running the stub engine on frames
rendered from each skeleton, so captions stay class-consistent without being
written by hand.
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..errors import ConfigError
from .skeleton import NUM_FRAMES, SkeletonSequence, center_sequence, ntu25_bones

REST_POSE = np.array([
    [0.00, 0.00, 3.0], [0.00, 0.30, 3.0], [0.00, 0.58, 3.0], [0.00, 0.72, 3.0],
    [-0.18, 0.50, 3.0], [-0.30, 0.28, 3.0], [-0.35, 0.05, 3.0], [-0.36, -0.02, 3.0],
    [0.18, 0.50, 3.0], [0.30, 0.28, 3.0], [0.35, 0.05, 3.0], [0.36, -0.02, 3.0],
    [-0.10, -0.05, 3.0], [-0.11, -0.45, 3.0], [-0.12, -0.85, 3.0], [-0.12, -0.90, 2.9],
    [0.10, -0.05, 3.0], [0.11, -0.45, 3.0], [0.12, -0.85, 3.0], [0.12, -0.90, 2.9],
    [0.00, 0.50, 3.0], [-0.37, -0.08, 3.0], [-0.33, -0.03, 3.0], [0.37, -0.08, 3.0], [0.33, -0.03, 3.0],
], dtype=np.float32)

# limb groups as (joint, weight) where weight grows toward the extremity
LIMB_GROUPS = (
    ((5, 0.4), (6, 0.8), (7, 1.0), (21, 1.0), (22, 1.0)),            # left arm
    ((9, 0.4), (10, 0.8), (11, 1.0), (23, 1.0), (24, 1.0)),          # right arm
    ((13, 0.5), (14, 1.0), (15, 1.0)),                               # left leg
    ((17, 0.5), (18, 1.0), (19, 1.0)),                               # right leg
    ((1, 0.3), (2, 0.7), (3, 1.0), (20, 0.6), (4, 0.6), (8, 0.6)),   # torso bend
    tuple((j, 1.0) for j in range(25)),                              # whole body
)
MAX_CLASSES = 12


def class_templates(n_classes: int, template_seed: int = 0) -> List[dict]:
    rng = np.random.default_rng(template_seed)
    out = []
    for c in range(n_classes):
        direction = rng.normal(size=3)
        direction[2] *= 0.3
        direction /= np.linalg.norm(direction)
        out.append({
            "group": c % len(LIMB_GROUPS),
            "freq": 1.0 + (c // len(LIMB_GROUPS)) + rng.uniform(0.0, 0.5),
            "phase": rng.uniform(0, 2 * np.pi),
            "direction": direction.astype(np.float32),
            "amplitude": 0.25,
            "hue": 360.0 * c / n_classes,
        })
    return out


def render_template(tpl: dict, frames: int = NUM_FRAMES, amplitude_scale: float = 1.0, phase_shift: float = 0.0,
                    speed: float = 1.0) -> np.ndarray:
    t = np.arange(frames, dtype=np.float32) / frames
    wave = np.sin(2 * np.pi * tpl["freq"] * speed * t + tpl["phase"] + phase_shift)
    seq = np.repeat(REST_POSE[None], frames, axis=0)
    for j, w in LIMB_GROUPS[tpl["group"]]:
        seq[:, j] += (tpl["amplitude"] * amplitude_scale * w) * wave[:, None] * tpl["direction"]
    return seq


def template_means(n_classes: int, template_seed: int = 0) -> np.ndarray:
    return np.stack([render_template(t) for t in class_templates(n_classes, template_seed)])


def synth_sequences(n_classes: int, n_per_class: int, seed: int, template_seed: int = 0,
                    noise: float = 0.01, center: bool = True) -> Tuple[List[SkeletonSequence], List[int]]:
    if n_classes < 2:
        raise ConfigError("synthetic corpus needs at least 2 classes", path="synth.n_classes")
    if n_classes > MAX_CLASSES:
        raise ConfigError(f"synthetic corpus supports at most {MAX_CLASSES} classes", path="synth.n_classes")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive", path="synth.n_per_class")
    templates = class_templates(n_classes, template_seed)
    rng = np.random.default_rng(seed)
    seqs, labels = [], []
    for c, tpl in enumerate(templates):
        for i in range(n_per_class):
            data = render_template(tpl, amplitude_scale=rng.uniform(0.8, 1.2), phase_shift=rng.normal(0, 0.3),
                                   speed=rng.uniform(0.9, 1.1))
            data = data + rng.normal(0, 0.05, size=(1, 1, 3)).astype(np.float32)
            data = data + rng.normal(0, noise, size=data.shape).astype(np.float32)
            sid = f"syn{seed:04d}_c{c:02d}_{i:04d}"
            # subjects 1..10 cycle within each class so an Xsub cut is stratified
            seq = SkeletonSequence(sid, data[..., None].astype(np.float32), subject_id=i % 10 + 1,
                                   camera_id=i % 3 + 1, setup_id=1, label=c, meta={"hue": tpl["hue"]})
            seqs.append(center_sequence(seq) if center else seq)
            labels.append(c)
    return seqs, labels


def synth_generate(n_classes: int, n_per_class: int, seed: int, template_seed: int = 0, noise: float = 0.01,
                   engine_seed: int = 0):
    """Return ``(sequences, prompt_records, labels)``, paired one-to-one."""
    from ..prompts import FramePolicy, SkeletonFrames, StubEngine, generate_record

    seqs, labels = synth_sequences(n_classes, n_per_class, seed, template_seed, noise)
    engine = StubEngine(engine_seed)
    edges = ntu25_bones().edges
    records = [generate_record(s.sample_id, SkeletonFrames(s.data, edges=edges, object_hue=s.meta["hue"]), engine,
                               FramePolicy())
               for s in seqs]
    return seqs, records, labels


def shuffle_pairs(labels, fraction: float, seed: int) -> np.ndarray:
    """Permutation ``perm`` such that sample i is paired with the prompt of
    ``perm[i]``; a ``fraction`` of samples receive a prompt from another class."""
    labels = np.asarray(labels)
    n = len(labels)
    perm = np.arange(n)
    k = int(round(fraction * n))
    if k < 2:
        return perm
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=k, replace=False)
    chosen = chosen[np.argsort(labels[chosen], kind="stable")]
    # rotating a label-sorted list by half its length crosses classes as long
    # as no class holds more than half of the chosen samples
    rotated = np.roll(chosen, k // 2)
    perm[chosen] = rotated
    return perm
