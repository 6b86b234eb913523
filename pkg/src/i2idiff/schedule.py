"""Noise schedules for the diffusion forward process.

A schedule is the triple (beta_t, alpha_t, gamma_t) for t = 1..T with
alpha_t = 1 - beta_t and gamma_t = prod_{s<=t} alpha_s. Everything is kept in
float64; gamma_t underflows float32 resolution near t = T for long schedules.

Training draws a continuous noise level per sample: pick t uniformly from
{1..T}, then gamma uniformly from (gamma_t, gamma_{t-1}) with gamma_0 := 1.
The model is conditioned on gamma itself, so a different (for example,
shorter) schedule can be used at sampling time as long as its gamma range is
covered by the training distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRAIN_DEFAULTS = (1e-6, 0.01, 2000)
INFERENCE_DEFAULTS = (1e-4, 0.09, 1000)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step noise coefficients, 1-based: index ``t - 1`` holds step t."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    gammas: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size == 0:
            raise ValueError("betas must be a non-empty 1-d array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "gammas", np.cumprod(self.alphas))

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def beta(self, t):
        return self.betas[np.asarray(t) - 1]

    def alpha(self, t):
        return self.alphas[np.asarray(t) - 1]

    def gamma(self, t):
        """gamma_t, with gamma_0 = 1 allowed."""
        t = np.asarray(t)
        padded = np.concatenate(([1.0], self.gammas))
        return padded[t]

    def gamma_prev(self, t):
        return self.gamma(np.asarray(t) - 1)


def build_linear_schedule(beta_start: float, beta_end: float,
                          num_steps: int) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    # np.linspace with num=1 returns [beta_start], which is the intended
    # degenerate case.
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    return NoiseSchedule(betas)


def training_schedule() -> NoiseSchedule:
    return build_linear_schedule(*TRAIN_DEFAULTS)


def inference_schedule(beta_start: float = INFERENCE_DEFAULTS[0],
                       beta_end: float = INFERENCE_DEFAULTS[1],
                       steps: int = INFERENCE_DEFAULTS[2]) -> NoiseSchedule:
    """Sampling-time schedule; distinct constructor because the defaults differ."""
    return build_linear_schedule(beta_start, beta_end, steps)


def sample_training_gamma(schedule: NoiseSchedule, rng: np.random.Generator,
                          size: int | None = None):
    """Draw noise levels from the piecewise-uniform training prior.

    Returns a float when ``size`` is None, else an array of that length.
    """
    t = rng.integers(1, schedule.num_steps + 1, size=size)
    lo = schedule.gamma(t)
    hi = schedule.gamma_prev(t)
    g = rng.uniform(lo, hi)
    return float(g) if size is None else g


def gamma_segment(schedule: NoiseSchedule, gamma: np.ndarray) -> np.ndarray:
    """Map each gamma back to the step t with gamma in (gamma_t, gamma_{t-1}).

    gammas are strictly decreasing, so search the reversed array: idx counts
    the gammas that are >= g, i.e. reversed position T - t + 1.
    """
    g = np.asarray(gamma)
    rev = schedule.gammas[::-1]
    idx = np.searchsorted(rev, g, side="left")
    return schedule.num_steps - idx + 1
