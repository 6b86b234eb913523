"""Gaussian diffusion math: forward marginal, posterior, loss, sampler.

Conventions: images are float arrays shaped (batch, channels, height, width)
scaled to [-1, 1]. ``gamma`` may be a scalar or a per-sample vector of length
batch; it is broadcast over the remaining axes. The denoiser is any callable
``model(x, y_noisy, gamma) -> eps_hat`` operating on plain ndarrays.
"""

from __future__ import annotations

import numpy as np

from .nn import Tensor, ops
from .schedule import NoiseSchedule


def _expand(gamma, ndim: int) -> np.ndarray:
    """Broadcast scalar or per-sample gamma over trailing image axes."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim == 0:
        return g
    if g.ndim != 1:
        raise ValueError("gamma must be scalar or 1-d per-sample vector")
    return g.reshape((-1,) + (1,) * (ndim - 1))


def forward_marginal(y0: np.ndarray, gamma, eps: np.ndarray) -> np.ndarray:
    """Noisy target at level gamma: sqrt(gamma)*y0 + sqrt(1-gamma)*eps."""
    if eps.shape != y0.shape:
        raise ValueError(f"eps shape {eps.shape} != y0 shape {y0.shape}")
    g = _expand(gamma, y0.ndim)
    if np.any(g < 0.0) or np.any(g > 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    out = np.sqrt(g) * y0 + np.sqrt(1.0 - g) * eps
    return out.astype(y0.dtype, copy=False)


def _check_mask(mask: np.ndarray | None, target: np.ndarray) -> None:
    if mask is None:
        return
    if mask.shape != target.shape:
        raise ValueError("mask shape mismatch")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError("mask must be binary")


def _masked_mean(dev: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        return ops.mean(dev)
    scale = 1.0 / max(float(mask.sum()), 1.0)
    return ops.mul(ops.total_sum(ops.mul(dev, Tensor(mask))), scale)


def training_loss(model, x: np.ndarray, y0: np.ndarray, gamma,
                  eps: np.ndarray, p: int = 2,
                  mask: np.ndarray | None = None) -> Tensor:
    """Noise-prediction loss: mean over (masked) elements of |eps_hat - eps|^p.

    Differentiable when ``model`` returns a Tensor on the tape (the trainable
    denoiser does); stub callables returning ndarrays also work for tests.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    _check_mask(mask, y0)
    y_noisy = forward_marginal(y0, gamma, eps)
    eps_hat = model(x, y_noisy, gamma)
    resid = ops.sub(eps_hat, Tensor(eps))
    dev = ops.absolute(resid) if p == 1 else ops.square(resid)
    return _masked_mean(dev, mask)


def regression_loss(model, x: np.ndarray, y0: np.ndarray, p: int = 2,
                    mask: np.ndarray | None = None) -> Tensor:
    """Direct-prediction loss for the no-diffusion baseline: |y_hat - y0|^p."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    _check_mask(mask, y0)
    pred = model(x, None, 1.0)
    resid = ops.sub(pred, Tensor(y0))
    dev = ops.absolute(resid) if p == 1 else ops.square(resid)
    return _masked_mean(dev, mask)


def estimate_y0(y_t: np.ndarray, eps_hat: np.ndarray, gamma_t) -> np.ndarray:
    """Invert the forward marginal under the model's noise estimate."""
    g = _expand(gamma_t, y_t.ndim)
    if np.any(g <= 0.0) or np.any(g > 1.0):
        raise ValueError("gamma_t must lie in (0, 1]")
    return ((y_t - np.sqrt(1.0 - g) * eps_hat) / np.sqrt(g)).astype(
        y_t.dtype, copy=False)


def posterior_params(y0: np.ndarray, y_t: np.ndarray, t: int,
                     schedule: NoiseSchedule):
    """Mean and variance of q(y_{t-1} | y0, y_t); gamma_0 := 1 makes t=1 exact."""
    if not 1 <= t <= schedule.num_steps:
        raise ValueError(f"t={t} outside 1..{schedule.num_steps}")
    alpha_t = float(schedule.alpha(t))
    gamma_t = float(schedule.gamma(t))
    gamma_prev = float(schedule.gamma_prev(t))
    if gamma_t >= 1.0:
        raise ValueError("gamma_t = 1 gives a degenerate posterior")
    denom = 1.0 - gamma_t
    coef_y0 = np.sqrt(gamma_prev) * (1.0 - alpha_t) / denom
    coef_yt = np.sqrt(alpha_t) * (1.0 - gamma_prev) / denom
    mu = coef_y0 * y0 + coef_yt * y_t
    sigma2 = (1.0 - gamma_prev) * (1.0 - alpha_t) / denom
    return mu.astype(y0.dtype, copy=False), sigma2


def reverse_step(model, x: np.ndarray, y_t: np.ndarray, t: int,
                 schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One ancestral update: denoise with the eps estimate, then add noise.

    The added noise has the fixed variance (1 - alpha_t); z = 0 at t = 1 so
    the final step is deterministic.
    """
    if not 1 <= t <= schedule.num_steps:
        raise ValueError(f"t={t} outside 1..{schedule.num_steps}")
    alpha_t = float(schedule.alpha(t))
    gamma_t = float(schedule.gamma(t))
    eps_hat = model(x, y_t, gamma_t)
    mean = (y_t - (1.0 - alpha_t) / np.sqrt(1.0 - gamma_t) * eps_hat) \
        / np.sqrt(alpha_t)
    if t == 1:
        return mean.astype(y_t.dtype, copy=False)
    z = rng.standard_normal(y_t.shape)
    return (mean + np.sqrt(1.0 - alpha_t) * z).astype(y_t.dtype, copy=False)


def sample(model, x: np.ndarray, schedule: NoiseSchedule,
           rng: np.random.Generator, composite=None) -> np.ndarray:
    """Generate a target by iterative refinement from pure noise.

    ``composite``, when given as (observed, mask), pastes the observed pixels
    over the mask-0 region of the final output; intermediate steps run
    unconstrained.
    """
    if composite is not None:
        observed, mask = composite
        if mask.shape != observed.shape:
            raise ValueError("composite mask shape mismatch")
    y = rng.standard_normal(x.shape).astype(x.dtype, copy=False)
    for t in range(schedule.num_steps, 0, -1):
        y = reverse_step(model, x, y, t, schedule, rng)
    if composite is not None:
        observed, mask = composite
        if observed.shape != y.shape:
            raise ValueError("composite observed shape mismatch")
        y = mask * y + (1.0 - mask) * observed
    return y
