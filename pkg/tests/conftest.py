"""Shared fixtures: tiny architectures and seeded generators."""

import numpy as np
import pytest

from i2idiff.denoiser import ArchitectureConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_config(**overrides) -> ArchitectureConfig:
    """Smallest architecture that exercises every code path quickly."""
    kw = dict(base_channels=8, channel_multipliers=(1, 2), blocks_per_level=1,
              variant="global_self_attention", attention_resolutions=(4,),
              heads=2, groups=4, input_size=8)
    kw.update(overrides)
    return ArchitectureConfig(**kw)


@pytest.fixture
def tiny_arch():
    return tiny_config()


def perturb_params(model, rng: np.random.Generator, scale: float = 0.05):
    """Randomize every parameter so zero-initialized layers carry gradient."""
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(0.0, scale, size=p.data.shape).astype(
            p.data.dtype)
