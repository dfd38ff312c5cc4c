"""Pair critic scoring photo-sketch pairs as real vs. generated.

The photo and the rasterized sketch are concatenated across channels
(6-channel input); a small strided conv stack is collapsed to one scalar
per pair by a spatial mean, then squashed by a sigmoid. Its output in
(0, 1) doubles as the certainty weight of a pseudo pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import ConvStack, Linear, Module

SCORE_EPS = 1e-6  # numerical clamp inside the BCE logs


@dataclass
class DiscriminatorConfig:
    image_size: int = 64
    channels: tuple = (32, 64, 96)

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "channels": list(self.channels)}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


class PairCritic(Module):
    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self.stack = ConvStack(6, config.channels, rng)
        self.head = Linear(config.channels[-1], 1, rng)  # 1x1 conv to a patch logit

    def logits(self, photos_nchw: np.ndarray, sketches_nchw: np.ndarray) -> Tensor:
        """Scalar logit per pair: patch logits averaged over space."""
        if photos_nchw.shape != sketches_nchw.shape:
            raise ValueError(
                f"photo/sketch batches must match, got {photos_nchw.shape} vs {sketches_nchw.shape}"
            )
        stacked = np.concatenate([photos_nchw, sketches_nchw], axis=1)
        fmap = self.stack(Tensor(stacked))
        b, c, h, w = fmap.shape
        patches = self.head(fmap.reshape(b, c, h * w).transpose(0, 2, 1).reshape(b * h * w, c))
        return patches.reshape(b, h * w).mean(axis=1)

    def scores(self, photos_nchw: np.ndarray, sketches_nchw: np.ndarray) -> Tensor:
        return self.logits(photos_nchw, sketches_nchw).sigmoid()


def score_pair(model: PairCritic, photo_nchw: np.ndarray, sketch_nchw: np.ndarray) -> np.ndarray:
    """Frozen-weights pair scores in (0, 1), no gradient."""
    with ag.no_grad():
        return model.scores(photo_nchw, sketch_nchw).data


def d_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """-mean(log real) - mean(log(1 - fake)), scores clamped away from 0/1."""
    real = ag.as_tensor(real_scores).clip(SCORE_EPS, 1.0 - SCORE_EPS)
    fake = ag.as_tensor(fake_scores).clip(SCORE_EPS, 1.0 - SCORE_EPS)
    return -(real.log().mean()) - (1.0 - fake).log().mean()


def certainty_weights(model: PairCritic, photos_nchw: np.ndarray, sketches_nchw: np.ndarray) -> np.ndarray:
    """Per-pair instance weights = discriminator scores, detached."""
    return score_pair(model, photos_nchw, sketches_nchw)
