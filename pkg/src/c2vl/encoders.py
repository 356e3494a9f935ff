"""Skeleton graph encoder, projection heads, temperature and frozen image/text encoders."""
from __future__ import annotations

import hashlib
import os
import re
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import nn

from .data.skeleton import BoneTable, bone_table_for, stack_batch
from .errors import ConfigError, ShapeError

EPS = 1e-12
MODALITIES = ("skeleton", "vision", "language")


def l2_normalize(x: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Row-wise unit norm. ``eps`` is added to every entry first, so an all-zero
    row maps to the uniform unit vector instead of NaN or zero."""
    x = x + eps
    return x / x.norm(dim=-1, keepdim=True)


@dataclass
class EmbeddingBatch:
    matrix: np.ndarray
    modality: str

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")

    def __len__(self):
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def check_unit_norm(self, tol: float = 1e-6) -> None:
        norms = np.linalg.norm(np.asarray(self.matrix, dtype=np.float64), axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > tol)[0]
        if len(bad):
            raise ShapeError(f"{len(bad)} {self.modality} rows are not unit norm (first: row {bad[0]}, "
                             f"norm {norms[bad[0]]:.8f})")


# ---------------------------------------------------------------- skeleton graph

def hop_distance(num_joints: int, edges) -> np.ndarray:
    adj = [[] for _ in range(num_joints)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    hop = np.full((num_joints, num_joints), np.inf)
    for s in range(num_joints):
        hop[s, s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if hop[s, v] == np.inf:
                    hop[s, v] = hop[s, u] + 1
                    q.append(v)
    return hop


def raw_adjacency(table: BoneTable) -> np.ndarray:
    a = np.eye(table.num_joints, dtype=np.float32)
    for i, j in table.edges:
        a[i, j] = a[j, i] = 1.0
    return a


def partitioned_adjacency(table: BoneTable, strategy: str = "spatial") -> np.ndarray:
    """K x V x V normalized adjacency. ``uniform`` gives one subset; ``spatial``
    splits neighbours into root / centripetal / centrifugal by hop distance to
    the centre joint."""
    a = raw_adjacency(table)
    norm = a / a.sum(axis=0, keepdims=True)
    if strategy == "uniform":
        return norm[None].astype(np.float32)
    if strategy != "spatial":
        raise ConfigError(f"unknown graph strategy {strategy!r}", path="model.graph_strategy")
    hop = hop_distance(table.num_joints, table.edges)
    to_center = hop[:, table.center]
    v = table.num_joints
    root, close, far = (np.zeros((v, v), np.float32) for _ in range(3))
    for i in range(v):
        for j in range(v):
            if a[j, i] == 0:
                continue
            if to_center[j] == to_center[i]:
                root[j, i] = norm[j, i]
            elif to_center[j] > to_center[i]:
                close[j, i] = norm[j, i]
            else:
                far[j, i] = norm[j, i]
    return np.stack([root, close, far])


@dataclass
class SkeletonEncoderConfig:
    joints: int = 25
    bodies: int = 1
    channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    strides: List[int] = field(default_factory=lambda: [2, 2, 2])
    temporal_kernel: int = 9
    graph_strategy: str = "spatial"
    edge_importance: bool = True

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    @classmethod
    def full_scale(cls, joints=25, bodies=2) -> "SkeletonEncoderConfig":
        return cls(joints, bodies, [64, 64, 64, 64, 128, 128, 128, 256, 256, 256], [1, 1, 1, 1, 2, 1, 1, 2, 1, 1])


class GraphConv(nn.Module):
    def __init__(self, c_in, c_out, k):
        super().__init__()
        self.k = k
        self.conv = nn.Conv2d(c_in, c_out * k, 1)

    def forward(self, x, a):
        n, _, t, v = x.shape
        x = self.conv(x).view(n, self.k, -1, t, v)
        return torch.einsum("nkctv,kvw->nctw", x, a)


class STGCNBlock(nn.Module):
    def __init__(self, c_in, c_out, k, kernel=9, stride=1, residual=True):
        super().__init__()
        self.gcn = GraphConv(c_in, c_out, k)
        pad = (kernel - 1) // 2
        self.tcn = nn.Sequential(
            nn.BatchNorm2d(c_out), nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, (kernel, 1), (stride, 1), (pad, 0)),
            nn.BatchNorm2d(c_out),
        )
        if not residual:
            self.residual = None
        elif c_in == c_out and stride == 1:
            self.residual = nn.Identity()
        else:
            self.residual = nn.Sequential(nn.Conv2d(c_in, c_out, 1, (stride, 1)), nn.BatchNorm2d(c_out))
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x, a):
        res = 0 if self.residual is None else self.residual(x)
        return self.relu(self.tcn(self.gcn(x, a)) + res)


class SkeletonEncoder(nn.Module):
    """Spatial-temporal graph convolution stack, global-pooled to F features.

    Input is N x (3 * bodies) x T x V with bodies stacked on the channel axis.
    """

    def __init__(self, cfg: SkeletonEncoderConfig, table: Optional[BoneTable] = None):
        super().__init__()
        if len(cfg.channels) < 1 or len(cfg.channels) != len(cfg.strides):
            raise ConfigError("channels and strides must be non-empty and equally long", path="model.channels")
        self.cfg = cfg
        table = table or bone_table_for(cfg.joints)
        if table.num_joints != cfg.joints:
            raise ConfigError(f"bone table has {table.num_joints} joints, model expects {cfg.joints}",
                              path="model.joints")
        self.register_buffer("A", torch.from_numpy(partitioned_adjacency(table, cfg.graph_strategy)))
        k = self.A.shape[0]
        c_in = 3 * cfg.bodies
        self.data_bn = nn.BatchNorm1d(c_in * cfg.joints)
        blocks = []
        for i, (c, s) in enumerate(zip(cfg.channels, cfg.strides)):
            blocks.append(STGCNBlock(c_in, c, k, cfg.temporal_kernel, s, residual=i > 0))
            c_in = c
        self.blocks = nn.ModuleList(blocks)
        if cfg.edge_importance:
            self.importance = nn.ParameterList([nn.Parameter(torch.ones_like(self.A)) for _ in blocks])
        else:
            self.importance = [1.0] * len(blocks)

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def forward(self, x):
        n, c, t, v = x.shape
        if c != 3 * self.cfg.bodies or v != self.cfg.joints:
            raise ShapeError(f"encoder expects N x {3 * self.cfg.bodies} x T x {self.cfg.joints}, got {tuple(x.shape)}")
        x = self.data_bn(x.permute(0, 3, 1, 2).reshape(n, v * c, t))
        x = x.view(n, v, c, t).permute(0, 2, 3, 1).contiguous()
        for block, imp in zip(self.blocks, self.importance):
            x = block(x, self.A * imp)
        return x.mean(dim=(2, 3))


class Projector(nn.Module):
    """linear -> ReLU -> bias-free linear -> L2 normalize."""

    def __init__(self, in_dim, out_dim, hidden=None, bias=True):
        super().__init__()
        hidden = hidden or in_dim
        self.net = nn.Sequential(nn.Linear(in_dim, hidden, bias=bias), nn.ReLU(), nn.Linear(hidden, out_dim, bias=False))
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, f):
        if f.shape[-1] != self.in_dim:
            raise ShapeError(f"projector expects {self.in_dim} features, got {f.shape[-1]}")
        return l2_normalize(self.net(f))


class Temperature(nn.Module):
    """Positive temperature, log-parameterized when learnable and clamped to [lo, hi]."""

    def __init__(self, init=0.07, learnable=True, lo=1e-3, hi=1.0):
        super().__init__()
        if not lo <= init <= hi:
            raise ConfigError(f"temperature init {init} outside [{lo}, {hi}]", path="temperature.init")
        self.lo, self.hi = lo, hi
        log_t = torch.tensor(float(np.log(init)))
        if learnable:
            self.log_tau = nn.Parameter(log_t)
        else:
            self.register_buffer("log_tau", log_t)

    def forward(self):
        return self.log_tau.exp().clamp(self.lo, self.hi)

    @torch.no_grad()
    def clamp_(self):
        self.log_tau.clamp_(float(np.log(self.lo)), float(np.log(self.hi)))


class SkeletonModel(nn.Module):
    """Trainable side of pretraining: skeleton encoder, one projector per target
    space, and the temperature(s)."""

    def __init__(self, enc_cfg: SkeletonEncoderConfig, embed_dim: int, hidden: Optional[int] = None,
                 tau_init=0.07, tau_learnable=True, per_branch_tau=False, table=None):
        super().__init__()
        self.encoder = SkeletonEncoder(enc_cfg, table)
        f = self.encoder.feature_dim
        self.proj_vision = Projector(f, embed_dim, hidden)
        self.proj_language = Projector(f, embed_dim, hidden)
        self.tau = Temperature(tau_init, tau_learnable)
        self.tau_language = Temperature(tau_init, tau_learnable) if per_branch_tau else None

    def features(self, x):
        return self.encoder(x)

    def forward(self, x):
        f = self.encoder(x)
        return self.proj_vision(f), self.proj_language(f)

    def taus(self):
        t = self.tau()
        return t, (self.tau_language() if self.tau_language is not None else t)

    def clamp_(self):
        self.tau.clamp_()
        if self.tau_language is not None:
            self.tau_language.clamp_()


def encode_skeleton(seqs, stream: str, encoder: SkeletonEncoder, table=None) -> torch.Tensor:
    x = torch.from_numpy(stack_batch(seqs, stream, table))
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        out = encoder(x)
    encoder.train(was_training)
    return out


def project_embed(features: torch.Tensor, projector: Projector) -> torch.Tensor:
    return projector(features)


def module_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- frozen encoders

class FrozenEncoder(Protocol):
    dim: int
    name: str

    def encode_images(self, images: Sequence) -> EmbeddingBatch: ...

    def encode_texts(self, texts: Sequence[str]) -> EmbeddingBatch: ...

    def digest(self) -> str: ...


_STOPWORDS = frozenset("a an the to is are he she they it or and of in on his her their holding trying "
                       "anything nothing hand hands".split())
_TOKEN = re.compile(r"[a-z0-9]+")


def _np_normalize(m: np.ndarray) -> np.ndarray:
    m = m.astype(np.float64) + EPS
    return (m / np.linalg.norm(m, axis=1, keepdims=True)).astype(np.float32)


class StubFrozenEncoder:
    """Stand-in for CLIP at desk scale.

    Images become a coarse RGB thumbnail plus a 12-bin hue histogram of the
    saturated pixels, sent through a fixed random projection. Texts are a bag
    of content words, each word mapped to a fixed pseudo-random vector derived
    from its CRC32.
    """

    name = "stub"
    hue_bins = 12

    def __init__(self, dim: int = 8, seed: int = 0, grid: int = 4, hue_weight: float = 4.0):
        self.dim, self.seed, self.grid, self.hue_weight = dim, seed, grid, hue_weight
        rng = np.random.default_rng(seed)
        self._w_img = rng.normal(size=(grid * grid * 3 + self.hue_bins, dim)).astype(np.float32)
        self._w_img.setflags(write=False)

    def digest(self) -> str:
        h = hashlib.sha256(self._w_img.tobytes())
        h.update(f"{self.dim}:{self.seed}:{self.grid}:{self.hue_weight}".encode())
        return h.hexdigest()

    def _image_vec(self, img) -> np.ndarray:
        if isinstance(img, (bytes, bytearray)):
            from .prompts.frames import decode_png
            img = decode_png(bytes(img))
        img = np.asarray(img, dtype=np.uint8)
        small = Image.fromarray(img).resize((self.grid, self.grid), Image.BILINEAR)
        thumb = (np.asarray(small, dtype=np.float32) / 255.0 - 0.5).reshape(-1)
        rgb = img.astype(np.float32) / 255.0
        sat = rgb.max(axis=2) - rgb.min(axis=2)
        hist = np.zeros(self.hue_bins, dtype=np.float32)
        mask = sat > 0.5
        if mask.any():
            hsv = np.asarray(Image.fromarray(img).convert("HSV"), dtype=np.float32)
            bins = np.round(hsv[..., 0][mask] / 256.0 * self.hue_bins).astype(int) % self.hue_bins
            hist = np.bincount(bins, minlength=self.hue_bins).astype(np.float32) / mask.sum()
        return np.concatenate([thumb, self.hue_weight * hist])

    def encode_images(self, images) -> EmbeddingBatch:
        if len(images) == 0:
            raise ValueError("no images to encode")
        feats = np.stack([self._image_vec(im) for im in images])
        return EmbeddingBatch(_np_normalize(feats @ self._w_img), "vision")

    def _token_vec(self, tok: str) -> np.ndarray:
        seed = zlib.crc32(f"{self.seed}:{tok}".encode())
        return np.random.default_rng(seed).normal(size=self.dim)

    def encode_texts(self, texts) -> EmbeddingBatch:
        if len(texts) == 0:
            raise ValueError("no texts to encode")
        rows = []
        for text in texts:
            toks = [t for t in _TOKEN.findall(text.lower()) if t not in _STOPWORDS] or ["<empty>"]
            rows.append(np.sum([self._token_vec(t) for t in toks], axis=0))
        return EmbeddingBatch(_np_normalize(np.stack(rows)), "language")


class ClipFrozenEncoder:
    """CLIP ViT-L/14@336px via ``transformers``; weights from C2VL_CLIP_PATH or the hub name."""

    name = "clip-vit-l14-336"
    hub_name = "openai/clip-vit-large-patch14-336"

    def __init__(self, path: Optional[str] = None, device: str = "cpu"):
        path = path or os.environ.get("C2VL_CLIP_PATH") or self.hub_name
        try:
            from transformers import CLIPModel, CLIPProcessor
            self.model = CLIPModel.from_pretrained(path).to(device).eval()
            self.processor = CLIPProcessor.from_pretrained(path)
        except Exception as e:
            raise ConfigError(f"CLIP weights unavailable at {path!r} ({e}); set C2VL_CLIP_PATH or use "
                              f"frozen_encoder: stub", path="engine.frozen_encoder") from e
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.dim = int(self.model.config.projection_dim)

    def digest(self) -> str:
        return module_digest(self.model)

    @torch.no_grad()
    def encode_images(self, images) -> EmbeddingBatch:
        from .prompts.frames import decode_png
        pil = [Image.fromarray(decode_png(bytes(im)) if isinstance(im, (bytes, bytearray)) else np.asarray(im))
               for im in images]
        inputs = self.processor(images=pil, return_tensors="pt").to(self.device)
        out = self.model.get_image_features(**inputs)
        return EmbeddingBatch(l2_normalize(out.float()).cpu().numpy(), "vision")

    @torch.no_grad()
    def encode_texts(self, texts) -> EmbeddingBatch:
        inputs = self.processor(text=list(texts), return_tensors="pt", padding=True, truncation=True).to(self.device)
        out = self.model.get_text_features(**inputs)
        return EmbeddingBatch(l2_normalize(out.float()).cpu().numpy(), "language")


def make_frozen_encoder(name: str, dim: int = 8, seed: int = 0) -> FrozenEncoder:
    if name == "stub":
        return StubFrozenEncoder(dim, seed)
    if name == "clip-vit-l14-336":
        return ClipFrozenEncoder()
    raise ConfigError(f"unknown frozen encoder {name!r}", path="engine.frozen_encoder")


def frozen_encode(inputs, encoder: FrozenEncoder, kind: str) -> EmbeddingBatch:
    if len(inputs) == 0:
        raise ValueError("nothing to encode")
    out = encoder.encode_images(inputs) if kind == "vision" else encoder.encode_texts(inputs)
    out.check_unit_norm()
    return out
