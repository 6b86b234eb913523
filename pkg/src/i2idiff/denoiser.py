"""Conditional U-Net denoiser f(x, y_noisy, gamma) and its variants.

The source image conditions the network by channel concatenation with the
noisy target. The noise level gamma enters as a sinusoidal embedding of
sqrt(gamma), projected by a small MLP and added inside every residual block.

Variants (selected by ``ArchitectureConfig.variant``):
    global_self_attention  softmax attention over all positions at the
                           configured resolutions
    local_self_attention   same, but computed independently within the four
                           non-overlapping spatial quadrants
    more_resnet_blocks     no attention; block count doubled at those
                           resolutions
    dilated_convolutions   as more_resnet_blocks, with successive blocks at
                           those resolutions using dilation rates 1, 2, 4, ...

``mode="regression"`` builds the same trunk but consumes only x and predicts
the target directly; gamma conditioning is fed a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Conv2d, GroupNorm, Linear, Module, Tensor, no_grad, ops

VARIANTS = ("global_self_attention", "local_self_attention",
            "more_resnet_blocks", "dilated_convolutions")
ATTENTION_VARIANTS = ("global_self_attention", "local_self_attention")
HEAVY_VARIANTS = ("more_resnet_blocks", "dilated_convolutions")

GAMMA_EMBED_SCALE = 1000.0


def gamma_embedding(gamma, dim: int) -> np.ndarray:
    """Sinusoidal embedding of sqrt(gamma), scalar or batched."""
    if dim < 2 or dim % 2:
        raise ValueError("dim must be even and >= 2")
    g = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    pos = np.sqrt(g) * GAMMA_EMBED_SCALE
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = pos[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    return emb[0] if np.ndim(gamma) == 0 else emb


@dataclass(frozen=True)
class ArchitectureConfig:
    base_channels: int = 32
    channel_multipliers: tuple[int, ...] = (1, 2, 4)
    blocks_per_level: int = 1
    variant: str = "global_self_attention"
    attention_resolutions: tuple[int, ...] | None = None
    heads: int = 4
    groups: int = 8
    input_size: int = 16
    cond_channels: int = 3
    target_channels: int = 3
    padding_mode: str = "zeros"
    mode: str = "diffusion"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.mode not in ("diffusion", "regression"):
            raise ValueError("mode must be 'diffusion' or 'regression'")
        if len(self.channel_multipliers) < 2:
            raise ValueError("need at least 2 resolution levels")
        levels = len(self.channel_multipliers)
        if self.input_size % (1 << (levels - 1)):
            raise ValueError(f"input_size {self.input_size} not divisible by "
                             f"2^{levels - 1}")
        sizes = self.level_sizes()
        if self.attention_resolutions is None:
            # three coarsest levels by default
            object.__setattr__(self, "attention_resolutions",
                               tuple(sorted(sizes[-3:])))
        extra = set(self.attention_resolutions) - set(sizes)
        if extra:
            raise ValueError(f"attention resolutions {sorted(extra)} not "
                             f"among level sizes {sizes}")
        for m in self.channel_multipliers:
            c = self.base_channels * m
            if c % self.groups:
                raise ValueError(f"channels {c} not divisible by groups")
            if c % self.heads:
                raise ValueError(f"channels {c} not divisible by heads")

    def level_sizes(self) -> list[int]:
        return [self.input_size >> i
                for i in range(len(self.channel_multipliers))]

    @property
    def in_channels(self) -> int:
        if self.mode == "regression":
            return self.cond_channels
        return self.cond_channels + self.target_channels


class ResBlock(Module):
    """norm-act-conv twice with the gamma embedding added in between."""

    def __init__(self, cin: int, cout: int, emb_dim: int, groups: int,
                 rng: np.random.Generator, dilation: int = 1,
                 padding_mode: str = "zeros"):
        self.norm1 = GroupNorm(groups, cin)
        self.conv1 = Conv2d(cin, cout, 3, rng, padding=dilation,
                            dilation=dilation, padding_mode=padding_mode)
        self.emb_proj = Linear(emb_dim, cout, rng)
        self.norm2 = GroupNorm(groups, cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=dilation,
                            dilation=dilation, padding_mode=padding_mode,
                            zero_init=True)
        self.skip = Conv2d(cin, cout, 1, rng) if cin != cout else None

    def __call__(self, h: Tensor, emb: Tensor) -> Tensor:
        out = self.conv1(ops.silu(self.norm1(h)))
        e = self.emb_proj(ops.silu(emb))
        out = ops.add(out, ops.reshape(e, e.shape + (1, 1)))
        out = self.conv2(ops.silu(self.norm2(out)))
        res = h if self.skip is None else self.skip(h)
        return ops.add(out, res)


def split_quadrants(t: Tensor) -> Tensor:
    """(B, C, H, W) -> (4B, C, H/2, W/2), quadrants as extra batch entries."""
    b, c, h, w = t.shape
    if h % 2 or w % 2:
        raise ValueError("spatial dims must be even for quadrant split")
    t = ops.reshape(t, (b, c, 2, h // 2, 2, w // 2))
    t = ops.transpose(t, (0, 2, 4, 1, 3, 5))
    return ops.reshape(t, (b * 4, c, h // 2, w // 2))


def merge_quadrants(t: Tensor) -> Tensor:
    b4, c, hh, wh = t.shape
    b = b4 // 4
    t = ops.reshape(t, (b, 2, 2, c, hh, wh))
    t = ops.transpose(t, (0, 3, 1, 4, 2, 5))
    return ops.reshape(t, (b, c, hh * 2, wh * 2))


class AttentionBlock(Module):
    """Multi-head self-attention over spatial positions, residual.

    ``local=True`` restricts attention to the four non-overlapping quadrants
    of the (group-normalized) feature map. The normalization always sees the
    full map, so local attention equals global attention under a mask that
    forbids cross-quadrant weights.
    """

    def __init__(self, channels: int, heads: int, groups: int,
                 rng: np.random.Generator, local: bool = False):
        self.heads = heads
        self.local = local
        self.norm = GroupNorm(groups, channels)
        self.qkv = Conv2d(channels, channels * 3, 1, rng)
        self.proj = Conv2d(channels, channels, 1, rng, zero_init=True)
        self.last_probs: np.ndarray | None = None

    def _attend(self, n: Tensor) -> Tensor:
        b, c, h, w = n.shape
        nh = self.heads
        dh = c // nh
        qkv = self.qkv(n)
        q, k, v = ops.split(qkv, [c, c, c], axis=1)
        q = ops.reshape(q, (b, nh, dh, h * w))
        k = ops.reshape(k, (b, nh, dh, h * w))
        v = ops.reshape(v, (b, nh, dh, h * w))
        scores = ops.mul(ops.matmul(ops.transpose(q, (0, 1, 3, 2)), k),
                         1.0 / math.sqrt(dh))
        probs = ops.softmax(scores, axis=-1)
        self.last_probs = probs.data
        out = ops.matmul(probs, ops.transpose(v, (0, 1, 3, 2)))
        out = ops.transpose(out, (0, 1, 3, 2))
        out = ops.reshape(out, (b, c, h, w))
        return self.proj(out)

    def __call__(self, h: Tensor) -> Tensor:
        n = self.norm(h)
        if self.local:
            out = merge_quadrants(self._attend(split_quadrants(n)))
        else:
            out = self._attend(n)
        return ops.add(h, out)


class Downsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator,
                 padding_mode: str = "zeros"):
        self.conv = Conv2d(channels, channels, 3, rng, stride=2, padding=1,
                           padding_mode=padding_mode)

    def __call__(self, h: Tensor) -> Tensor:
        return self.conv(h)


class Upsample(Module):
    def __init__(self, channels: int, rng: np.random.Generator,
                 padding_mode: str = "zeros"):
        self.conv = Conv2d(channels, channels, 3, rng, padding=1,
                           padding_mode=padding_mode)

    def __call__(self, h: Tensor) -> Tensor:
        return self.conv(ops.upsample_nearest2(h))


class DenoiserModel(Module):
    """U-Net assembled from a linear plan of blocks plus skip bookkeeping."""

    def __init__(self, config: ArchitectureConfig, rng: np.random.Generator):
        self.config = config
        cfg = config
        pm = cfg.padding_mode
        sizes = cfg.level_sizes()
        levels = len(cfg.channel_multipliers)
        chans = [cfg.base_channels * m for m in cfg.channel_multipliers]
        self.emb_dim = cfg.base_channels * 4
        self.emb_in = cfg.base_channels

        def n_blocks(i):
            heavy = (cfg.variant in HEAVY_VARIANTS
                     and sizes[i] in cfg.attention_resolutions)
            return cfg.blocks_per_level * (2 if heavy else 1)

        def dilation(i, b):
            if (cfg.variant == "dilated_convolutions"
                    and sizes[i] in cfg.attention_resolutions):
                return 1 << b
            return 1

        def with_attn(i):
            return (cfg.variant in ATTENTION_VARIANTS
                    and sizes[i] in cfg.attention_resolutions)

        self.emb_mlp1 = Linear(self.emb_in, self.emb_dim, rng)
        self.emb_mlp2 = Linear(self.emb_dim, self.emb_dim, rng)
        self.stem = Conv2d(cfg.in_channels, chans[0], 3, rng, padding=1,
                           padding_mode=pm)

        local = cfg.variant == "local_self_attention"
        self.blocks: list[Module] = []
        plan: list[tuple[str, int]] = []

        def add(kind, module):
            self.blocks.append(module)
            plan.append((kind, len(self.blocks) - 1))

        ch = chans[0]
        for i in range(levels):
            for b in range(n_blocks(i)):
                add("res", ResBlock(ch, chans[i], self.emb_dim, cfg.groups,
                                    rng, dilation(i, b), pm))
                ch = chans[i]
            if with_attn(i):
                add("attn", AttentionBlock(ch, cfg.heads, cfg.groups, rng,
                                           local=local))
            if i < levels - 1:
                plan.append(("push", -1))
                add("down", Downsample(ch, rng, pm))
        for i in range(levels - 2, -1, -1):
            add("up", Upsample(ch, rng, pm))
            plan.append(("pop", -1))
            ch = ch + chans[i]
            for b in range(n_blocks(i)):
                add("res", ResBlock(ch, chans[i], self.emb_dim, cfg.groups,
                                    rng, dilation(i, b), pm))
                ch = chans[i]
            if with_attn(i):
                add("attn", AttentionBlock(ch, cfg.heads, cfg.groups, rng,
                                           local=local))
        self.plan = plan
        self.head_norm = GroupNorm(cfg.groups, ch)
        self.head_conv = Conv2d(ch, cfg.target_channels, 3, rng, padding=1,
                                padding_mode=pm, zero_init=True)

    # -- forward ------------------------------------------------------------

    def _check_inputs(self, x: np.ndarray, y_noisy: np.ndarray | None):
        cfg = self.config
        levels = len(cfg.channel_multipliers)
        if x.shape[1] != cfg.cond_channels:
            raise ValueError(f"expected {cfg.cond_channels} conditioning "
                             f"channels, got {x.shape[1]}")
        if x.shape[2] % (1 << (levels - 1)) or x.shape[3] % (1 << (levels - 1)):
            raise ValueError("spatial size not divisible by total stride")
        if cfg.mode == "diffusion":
            if y_noisy is None:
                raise ValueError("diffusion mode needs y_noisy")
            if y_noisy.shape[1] != cfg.target_channels:
                raise ValueError("target channel mismatch")
            if y_noisy.shape[0] != x.shape[0] or y_noisy.shape[2:] != x.shape[2:]:
                raise ValueError("x and y_noisy must be spatially aligned")

    def forward_tensor(self, x: np.ndarray, y_noisy: np.ndarray | None,
                       gamma) -> Tensor:
        """Tape-building forward pass; use for training."""
        self._check_inputs(x, y_noisy)
        cfg = self.config
        dtype = self.stem.weight.dtype
        bsz = x.shape[0]
        if cfg.mode == "regression":
            inp = np.asarray(x, dtype=dtype)
            gamma = 1.0
        else:
            inp = np.concatenate([x, y_noisy], axis=1).astype(dtype)
        g = np.asarray(gamma, dtype=np.float64)
        if g.ndim == 0:
            g = np.full(bsz, float(g))
        emb0 = Tensor(gamma_embedding(g, self.emb_in).astype(dtype))
        emb = self.emb_mlp2(ops.silu(self.emb_mlp1(emb0)))

        h = self.stem(Tensor(inp))
        skips: list[Tensor] = []
        for kind, idx in self.plan:
            if kind == "res":
                h = self.blocks[idx](h, emb)
            elif kind == "attn":
                h = self.blocks[idx](h)
            elif kind == "down":
                h = self.blocks[idx](h)
            elif kind == "up":
                h = self.blocks[idx](h)
            elif kind == "push":
                skips.append(h)
            elif kind == "pop":
                h = ops.concat([h, skips.pop()], axis=1)
        return self.head_conv(ops.silu(self.head_norm(h)))

    def __call__(self, x: np.ndarray, y_noisy: np.ndarray | None = None,
                 gamma=1.0) -> np.ndarray:
        """Inference forward pass: no tape, returns a plain array."""
        with no_grad():
            return self.forward_tensor(x, y_noisy, gamma).data
