"""Training loop: noise-level sampling, masked loss, Adam, warmup, EMA.

A :class:`TrainState` owns the model, optimizer, EMA shadow and rng stream;
``train_step`` advances it by one batch. All randomness flows through the
state's generator, whose bit-level state is checkpointed, so interrupt and
resume reproduce an uninterrupted run exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffusion, schedule as sched, tasks as task_ops
from ..denoiser import ArchitectureConfig, DenoiserModel
from ..nn.optim import EMA, Adam, warmup_lr
from . import checkpoint as ckpt


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    total_steps: int = 50_000
    learning_rate: float = 1e-4
    warmup_steps: int = 10_000
    ema_decay: float = 0.9999
    loss_p: int = 2
    tasks: tuple[str, ...] = ("colorization",)
    schedule: tuple[float, float, int] = sched.TRAIN_DEFAULTS
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.loss_p not in (1, 2):
            raise ValueError("loss_p must be 1 or 2")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must be in [0, 1)")
        for t in self.tasks:
            if t not in task_ops.TASKS:
                raise ValueError(f"unknown task {t!r}")


class TrainState:
    def __init__(self, config: TrainConfig, arch: ArchitectureConfig):
        self.config = config
        self.arch = arch
        root = np.random.default_rng(config.seed)
        init_rng, self.rng = root.spawn(2)
        self.model = DenoiserModel(arch, init_rng)
        self.params = dict(self.model.named_parameters())
        self.opt = Adam(self.params, lr=config.learning_rate)
        self.ema = EMA(self.params, decay=config.ema_decay)
        self.noise_schedule = sched.build_linear_schedule(*config.schedule)
        self.step = 0

    def ema_model(self) -> DenoiserModel:
        """Model snapshot carrying the EMA parameters."""
        m = DenoiserModel(self.arch, np.random.default_rng(0))
        m.load_state_dict(self.ema.shadow)
        return m


def make_batch(state: TrainState, images: np.ndarray):
    """Draw clean targets and corrupt each with a uniformly chosen task."""
    idx = state.rng.integers(0, images.shape[0], size=state.config.batch_size)
    samples = task_ops.multi_task_batch(images[idx], state.config.tasks,
                                        state.rng)
    return task_ops.stack_samples(samples)


def train_step(state: TrainState, batch) -> float:
    """One optimization step; returns the scalar loss."""
    x, y0, mask = batch
    cfg = state.config
    bsz = y0.shape[0]
    state.model.zero_grad()
    if state.arch.mode == "regression":
        loss = diffusion.regression_loss(state.model.forward_tensor, x, y0,
                                         p=cfg.loss_p, mask=mask)
    else:
        gamma = sched.sample_training_gamma(state.noise_schedule, state.rng,
                                            bsz)
        eps = state.rng.standard_normal(y0.shape).astype(y0.dtype)
        loss = diffusion.training_loss(state.model.forward_tensor, x, y0,
                                       gamma, eps, p=cfg.loss_p, mask=mask)
    value = loss.item()
    if not np.isfinite(value):
        raise RuntimeError(
            f"non-finite loss {value} at step {state.step} (p={cfg.loss_p})")
    loss.backward()
    if cfg.grad_clip is not None:
        total = np.sqrt(sum(float((p.grad ** 2).sum())
                            for p in state.params.values()
                            if p.grad is not None))
        if total > cfg.grad_clip:
            scale = cfg.grad_clip / (total + 1e-12)
            for p in state.params.values():
                if p.grad is not None:
                    p.grad *= scale
    lr = warmup_lr(cfg.learning_rate, state.step + 1, cfg.warmup_steps)
    state.opt.step(lr)
    state.ema.update(state.params)
    state.step += 1
    return value


def train(state: TrainState, images: np.ndarray,
          steps: int | None = None, log_every: int = 0,
          progress=None) -> list[float]:
    """Run up to ``steps`` more steps (default: until config.total_steps)."""
    losses = []
    target = state.config.total_steps if steps is None \
        else min(state.step + steps, state.config.total_steps)
    while state.step < target:
        losses.append(train_step(state, make_batch(state, images)))
        if log_every and state.step % log_every == 0:
            msg = f"step {state.step}: loss {np.mean(losses[-log_every:]):.5f}"
            (progress or print)(msg)
    return losses


# ---------------------------------------------------------------------------
# persistence


def save_train_state(path, state: TrainState) -> None:
    arrays = {}
    for k, p in state.params.items():
        arrays[f"param/{k}"] = p.data
    for k, v in state.ema.shadow.items():
        arrays[f"ema/{k}"] = v
    for k, v in state.opt.m.items():
        arrays[f"opt_m/{k}"] = v
    for k, v in state.opt.v.items():
        arrays[f"opt_v/{k}"] = v
    meta = {
        "kind": "train_state",
        "step": state.step,
        "opt_step_count": state.opt.step_count,
        "rng_state": state.rng.bit_generator.state,
        "train_config": asdict(state.config),
        "arch_config": asdict(state.arch),
    }
    ckpt.save_checkpoint(path, arrays, meta)


def load_train_state(path) -> TrainState:
    arrays, meta = ckpt.load_checkpoint(path)
    if meta.get("kind") != "train_state":
        raise ValueError(f"{path}: not a training checkpoint")
    tc = dict(meta["train_config"])
    tc["tasks"] = tuple(tc["tasks"])
    tc["schedule"] = tuple(tc["schedule"])
    ac = dict(meta["arch_config"])
    ac["channel_multipliers"] = tuple(ac["channel_multipliers"])
    ac["attention_resolutions"] = tuple(ac["attention_resolutions"])
    state = TrainState(TrainConfig(**tc), ArchitectureConfig(**ac))
    prefix = {"param/": {}, "ema/": {}, "opt_m/": {}, "opt_v/": {}}
    for name, arr in arrays.items():
        for p, d in prefix.items():
            if name.startswith(p):
                d[name[len(p):]] = arr
    state.model.load_state_dict(prefix["param/"])
    state.params = dict(state.model.named_parameters())
    state.opt.params = state.params
    state.opt.load_state_dict({"step_count": meta["opt_step_count"],
                               "m": prefix["opt_m/"], "v": prefix["opt_v/"]})
    state.ema.load_state_dict(prefix["ema/"])
    state.step = int(meta["step"])
    state.rng.bit_generator.state = meta["rng_state"]
    return state


def load_model(path, use_ema: bool = True) -> tuple[DenoiserModel, dict]:
    """Model only (EMA weights by default) plus checkpoint metadata."""
    arrays, meta = ckpt.load_checkpoint(path)
    ac = dict(meta["arch_config"])
    ac["channel_multipliers"] = tuple(ac["channel_multipliers"])
    ac["attention_resolutions"] = tuple(ac["attention_resolutions"])
    model = DenoiserModel(ArchitectureConfig(**ac), np.random.default_rng(0))
    prefix = "ema/" if use_ema else "param/"
    state = {k[len(prefix):]: v for k, v in arrays.items()
             if k.startswith(prefix)}
    model.load_state_dict(state)
    return model, meta
