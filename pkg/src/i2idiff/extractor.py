"""Small convolutional classifier used as the metric feature backbone.

Trained once on the toy dataset, checkpointed and frozen before any
generative model is evaluated. Scores computed with it are internally
comparable across models in this repository but are NOT comparable to
published numbers computed with large pretrained backbones.
"""

from __future__ import annotations

import numpy as np

from .nn import Conv2d, GroupNorm, Linear, Module, Tensor, no_grad, ops
from .nn.optim import Adam


class FeatureExtractor(Module):
    """Three conv stages -> pooled penultimate features -> class logits."""

    def __init__(self, num_classes: int, rng: np.random.Generator,
                 base_channels: int = 16, in_channels: int = 3):
        c = base_channels
        self.num_classes = num_classes
        self.conv1 = Conv2d(in_channels, c, 3, rng, padding=1)
        self.norm1 = GroupNorm(4, c)
        self.conv2 = Conv2d(c, 2 * c, 3, rng, stride=2, padding=1)
        self.norm2 = GroupNorm(4, 2 * c)
        self.conv3 = Conv2d(2 * c, 4 * c, 3, rng, stride=2, padding=1)
        self.norm3 = GroupNorm(4, 4 * c)
        self.fc = Linear(4 * c, num_classes, rng)
        self.feature_dim = 4 * c

    def _trunk(self, images: np.ndarray) -> list[Tensor]:
        h = Tensor(np.asarray(images, dtype=self.conv1.weight.dtype))
        maps = []
        for conv, norm in ((self.conv1, self.norm1), (self.conv2, self.norm2),
                           (self.conv3, self.norm3)):
            h = ops.silu(norm(conv(h)))
            maps.append(h)
        return maps

    def logits_tensor(self, images: np.ndarray) -> Tensor:
        pooled = ops.mean(self._trunk(images)[-1], axis=(2, 3))
        return self.fc(pooled)

    def logits(self, images: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.logits_tensor(images).data

    def features(self, images: np.ndarray) -> np.ndarray:
        """Penultimate representation: spatially pooled last-stage maps."""
        with no_grad():
            return ops.mean(self._trunk(images)[-1], axis=(2, 3)).data

    def layer_maps(self, images: np.ndarray) -> list[np.ndarray]:
        """Per-stage activation maps, for perceptual-style distances."""
        with no_grad():
            return [m.data for m in self._trunk(images)]

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        z = self.logits(images)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


def train_extractor(images: np.ndarray, labels: np.ndarray, num_classes: int,
                    rng: np.random.Generator, steps: int = 400,
                    batch_size: int = 32, lr: float = 3e-3,
                    base_channels: int = 16) -> FeatureExtractor:
    """Fit the classifier with Adam on cross-entropy; returns the frozen net."""
    model = FeatureExtractor(num_classes, rng, base_channels,
                             in_channels=images.shape[1])
    params = dict(model.named_parameters())
    opt = Adam(params, lr=lr)
    n = images.shape[0]
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        model.zero_grad()
        loss = ops.cross_entropy(model.logits_tensor(images[idx]), labels[idx])
        loss.backward()
        opt.step()
    return model
