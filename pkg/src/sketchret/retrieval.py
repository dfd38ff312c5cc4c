"""Cross-modal embedding network with soft spatial attention.

One Siamese conv stack embeds photos and rasterized sketches into a shared
d-dimensional space (both modalities literally share every parameter).
Training losses: margin triplet, plus teacher-based distillation variants
(relative pairwise-distance matching and absolute embedding matching).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import ConvStack, Linear, Module


@dataclass
class RetrievalConfig:
    image_size: int = 64
    channels: tuple = (32, 64, 96, 128)
    embed_dim: int = 64

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "channels": list(self.channels),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetrievalConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class EmbeddingNet(Module):
    def __init__(self, config: RetrievalConfig, rng: np.random.Generator):
        self.config = config
        self.backbone = ConvStack(3, config.channels, rng)
        self.attn = Linear(config.channels[-1], 1, rng)  # 1x1 conv as a per-position linear
        self.head = Linear(config.channels[-1], config.embed_dim, rng)

    def pooled(self, images_nchw: np.ndarray) -> Tensor:
        """Attention-reweighted, globally pooled backbone features (B, C)."""
        size = self.config.image_size
        if images_nchw.shape[2] != size or images_nchw.shape[3] != size:
            raise ValueError(f"expected {size}x{size} images, got {images_nchw.shape[2:]}")
        fmap = self.backbone(Tensor(images_nchw))
        b, c, h, w = fmap.shape
        flat = fmap.reshape(b, c, h * w)
        logits = self.attn(flat.transpose(0, 2, 1).reshape(b * h * w, c)).reshape(b, h * w)
        alpha = ag.softmax(logits, axis=1)
        weighted = flat + flat * alpha.reshape(b, 1, h * w)
        return weighted.mean(axis=2)

    def embed(self, images_nchw: np.ndarray) -> Tensor:
        return self.head(self.pooled(images_nchw))

    def spatial_attention(self, images_nchw: np.ndarray) -> np.ndarray:
        """The per-image attention map (B, h*w); sums to 1 per image."""
        with ag.no_grad():
            fmap = self.backbone(Tensor(images_nchw))
            b, c, h, w = fmap.shape
            flat = fmap.reshape(b, c, h * w)
            logits = self.attn(flat.transpose(0, 2, 1).reshape(b * h * w, c)).reshape(b, h * w)
            return ag.softmax(logits, axis=1).data


class TeacherSnapshot:
    """Frozen copy of a retrieval model; raises on any attempt to update."""

    def __init__(self, model: EmbeddingNet, rng: np.random.Generator | None = None):
        frozen = EmbeddingNet(model.config, rng or np.random.default_rng(0))
        frozen.load_state_dict(model.state_dict())
        frozen.freeze()
        self.model = frozen

    def embed(self, images_nchw: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.model.embed(images_nchw).data

    def pooled(self, images_nchw: np.ndarray) -> np.ndarray:
        with ag.no_grad():
            return self.model.pooled(images_nchw).data

    def state_dict(self) -> dict:
        return self.model.state_dict()


def l2_distance(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Euclidean distance between (B, d) embeddings."""
    diff = a - b
    return (diff * diff).sum(axis=-1).sqrt()


def triplet_loss(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float, per_sample: bool = False):
    """max(0, margin + ||a-p|| - ||a-n||); the kink takes subgradient 0."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    hinge = (margin + l2_distance(anchor, positive) - l2_distance(anchor, negative)).relu()
    return hinge if per_sample else hinge.mean()


def kd_loss_relative(teacher: TeacherSnapshot, student: EmbeddingNet, photos_nchw, sketches_nchw) -> Tensor:
    """|teacher pairwise distance - student pairwise distance|, batch mean.

    Gradient flows only into the student (teacher embeddings are constants).
    """
    t_d = np.sqrt(((teacher.embed(photos_nchw) - teacher.embed(sketches_nchw)) ** 2).sum(axis=1))
    s_d = l2_distance(student.embed(photos_nchw), student.embed(sketches_nchw))
    return (s_d - Tensor(t_d)).abs().mean()


def kd_loss_absolute(teacher: TeacherSnapshot, student: EmbeddingNet, images_nchw) -> Tensor:
    """||teacher(x) - student(x)||_2 per image, batch mean."""
    t_e = teacher.embed(images_nchw)
    s_e = student.embed(images_nchw)
    diff = s_e - Tensor(t_e)
    return (diff * diff).sum(axis=1).sqrt().mean()


def embed_images(model: EmbeddingNet, images_nchw: np.ndarray, batch: int = 64) -> np.ndarray:
    """No-grad embedding of a possibly large image stack."""
    outs = []
    with ag.no_grad():
        for i in range(0, images_nchw.shape[0], batch):
            outs.append(model.embed(images_nchw[i : i + batch]).data)
    return np.concatenate(outs, axis=0)


def rank_gallery(query_embedding: np.ndarray, gallery_embeddings: np.ndarray, gallery_ids) -> list:
    """Gallery ids sorted by ascending distance to the query; ties break on id."""
    if len(gallery_ids) == 0:
        raise ValueError("empty gallery")
    dists = np.sqrt(((gallery_embeddings - query_embedding[None, :]) ** 2).sum(axis=1))
    order = sorted(range(len(gallery_ids)), key=lambda i: (dists[i], gallery_ids[i]))
    return [gallery_ids[i] for i in order]
