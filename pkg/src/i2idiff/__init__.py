"""Conditional image-to-image diffusion at desk scale.

Subpackages:
    nn        kernel backends, reverse-mode autodiff, layers
    schedule  noise schedules and gamma sampling
    diffusion forward process, losses, ancestral sampler
    denoiser  conditional U-Net and its variants
    tasks     corruption operators (grayscale, masks, crops, compression)
    metrics   sample-quality and diversity metrics
    pipeline  training loop, checkpoints, data, CLI apps
"""

__version__ = "0.1.0"
