"""Composite applications: sampling wrappers, panorama growth, the
L1-vs-L2 diversity study, model evaluation and metric reports."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import diffusion, metrics, tasks as task_ops
from ..schedule import NoiseSchedule


def sample_batch(model, x: np.ndarray, schedule: NoiseSchedule,
                 rng: np.random.Generator, composite=None) -> np.ndarray:
    return diffusion.sample(model, x.astype(np.float32), schedule, rng,
                            composite=composite)


def sample_for_task(model, sample: task_ops.CorruptionSample,
                    schedule: NoiseSchedule,
                    rng: np.random.Generator) -> np.ndarray:
    """Sample one output; masked tasks keep their observed pixels."""
    x = sample.x[None]
    composite = None
    if sample.task in ("inpainting", "uncropping"):
        composite = (x, sample.mask[None])
    return sample_batch(model, x, schedule, rng, composite)[0]


# ---------------------------------------------------------------------------
# panorama uncropping


@dataclass
class PanoramaTrace:
    """One extension step: the conditioning, its mask, and where the
    observed half came from on the canvas (column span)."""

    conditioning: np.ndarray
    mask: np.ndarray
    observed_span: tuple[int, int]
    generated_span: tuple[int, int]
    direction: str


def panorama_uncrop(model, seed_image: np.ndarray, schedule: NoiseSchedule,
                    rng: np.random.Generator, n_steps: int,
                    directions=("left", "right"),
                    step_fraction: float = 0.5):
    """Grow a panorama by repeated uncropping.

    Each step shifts the model window by ``step_fraction * width``, builds an
    uncrop conditioning (observed slice of the canvas plus unit noise in the
    new region), samples with the observed region composited back, and
    appends the newly generated columns. Growing n_steps on both sides turns
    width w into w + 2 * n_steps * step_fraction * w.

    Returns (canvas, traces).
    """
    c, h, w = seed_image.shape
    step_px = int(round(step_fraction * w))
    if not 0 < step_px < w:
        raise ValueError("step_fraction must keep the window overlapping")
    canvas = seed_image.astype(np.float32).copy()
    traces: list[PanoramaTrace] = []
    for direction in directions:
        if direction not in ("left", "right"):
            raise ValueError(f"unknown direction {direction!r}")
        for _ in range(n_steps):
            mask = np.zeros((1, c, h, w), dtype=np.float32)
            x = np.empty((1, c, h, w), dtype=np.float32)
            keep = w - step_px
            if direction == "right":
                observed = canvas[:, :, canvas.shape[2] - keep:]
                x[0, :, :, :keep] = observed
                x[0, :, :, keep:] = rng.standard_normal((c, h, step_px))
                mask[0, :, :, keep:] = 1.0
                obs_span = (canvas.shape[2] - keep, canvas.shape[2])
            else:
                observed = canvas[:, :, :keep]
                x[0, :, :, step_px:] = observed
                x[0, :, :, :step_px] = rng.standard_normal((c, h, step_px))
                mask[0, :, :, :step_px] = 1.0
                obs_span = (0, keep)
            out = sample_batch(model, x, schedule, rng, composite=(x, mask))[0]
            if direction == "right":
                new_cols = out[:, :, keep:]
                gen_span = (canvas.shape[2], canvas.shape[2] + step_px)
                canvas = np.concatenate([canvas, new_cols], axis=2)
            else:
                new_cols = out[:, :, :step_px]
                gen_span = (0, step_px)
                canvas = np.concatenate([new_cols, canvas], axis=2)
            traces.append(PanoramaTrace(conditioning=x[0], mask=mask[0],
                                        observed_span=obs_span,
                                        generated_span=gen_span,
                                        direction=direction))
    return canvas, traces


# ---------------------------------------------------------------------------
# evaluation


def draw_samples(model, conditionings: np.ndarray, schedule: NoiseSchedule,
                 rng: np.random.Generator, k: int,
                 batch_size: int = 64) -> np.ndarray:
    """k independent samples per conditioning: (n, k, c, h, w)."""
    n = conditionings.shape[0]
    reps = np.repeat(conditionings, k, axis=0)
    outs = []
    for lo in range(0, reps.shape[0], batch_size):
        outs.append(sample_batch(model, reps[lo:lo + batch_size],
                                 schedule, rng))
    flat = np.concatenate(outs, axis=0)
    return flat.reshape((n, k) + flat.shape[1:])


def evaluate_model(model, extractor, conditionings: np.ndarray,
                   targets: np.ndarray, schedule: NoiseSchedule,
                   rng: np.random.Generator, labels=None,
                   reference_stats: metrics.FeatureStats | None = None) -> dict:
    """Single-sample evaluation record against aligned targets.

    Regression-mode models predict deterministically from the conditioning;
    diffusion models are sampled through the full reverse chain.
    """
    cfg = getattr(model, "config", None)
    if cfg is not None and cfg.mode == "regression":
        samples = model(conditionings.astype(np.float32))
    else:
        samples = draw_samples(model, conditionings, schedule, rng, k=1)[:, 0]
    feats = extractor.features(samples)
    if reference_stats is None:
        reference_stats = metrics.compute_feature_stats(
            extractor.features(targets))
    rec = {
        "fid_proxy": metrics.frechet_distance(
            metrics.compute_feature_stats(feats), reference_stats),
        "inception_score": metrics.inception_score(
            extractor.class_probs(samples)),
        "perceptual_distance": metrics.perceptual_distance(
            extractor, samples, targets),
    }
    if labels is not None:
        rec["classification_accuracy"] = metrics.classification_accuracy(
            extractor, samples, np.asarray(labels))
    return rec


def bootstrap_diff_ci(a, b, rng: np.random.Generator, n_boot: int = 10_000,
                      level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap CI for mean(a) - mean(b), paired when aligned.

    ``a`` and ``b`` are per-unit statistics; equal lengths resample pairs,
    unequal lengths resample independently.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diffs = np.empty(n_boot)
    paired = a.shape == b.shape
    for i in range(n_boot):
        if paired:
            idx = rng.integers(0, a.size, size=a.size)
            diffs[i] = a[idx].mean() - b[idx].mean()
        else:
            ia = rng.integers(0, a.size, size=a.size)
            ib = rng.integers(0, b.size, size=b.size)
            diffs[i] = a[ia].mean() - b[ib].mean()
    tail = (1.0 - level) / 2.0
    return (float(np.quantile(diffs, tail)),
            float(np.quantile(diffs, 1.0 - tail)))


def diversity_study(model_l1, model_l2, extractor, conditionings: np.ndarray,
                    schedule: NoiseSchedule, rng: np.random.Generator,
                    k: int = 8, targets: np.ndarray | None = None,
                    n_boot: int = 10_000) -> dict:
    """Compare sample diversity of an L1- and an L2-trained model.

    Emits, per model: the pooled pairwise MS-SSIM values (first sample vs
    the rest), the mean consecutive-pair feature diversity, and, when
    targets are given, a (fid_proxy, perceptual_distance, diversity) triple.
    Bootstrap CIs cover the L2-minus-L1 differences.
    """
    if k < 2:
        raise ValueError("need k >= 2 samples per conditioning")
    report: dict = {"k": k, "n_inputs": int(conditionings.shape[0])}
    per_model: dict[str, dict] = {}
    per_input_div: dict[str, np.ndarray] = {}
    msssim_rows: dict[str, np.ndarray] = {}
    for name, model in (("l1", model_l1), ("l2", model_l2)):
        samples = draw_samples(model, conditionings, schedule, rng, k)
        pooled = metrics.pairwise_msssim_diversity(samples)
        n = samples.shape[0]
        div_per_input = np.array([
            metrics.pairwise_feature_diversity(extractor, samples[i:i + 1])
            for i in range(n)])
        entry = {
            "msssim_pooled": pooled,
            "msssim_mean": float(np.mean(pooled)),
            "feature_diversity": float(div_per_input.mean()),
        }
        if targets is not None:
            feats = extractor.features(
                samples.reshape((-1,) + samples.shape[2:]))
            ref = metrics.compute_feature_stats(extractor.features(targets))
            entry["fid_proxy"] = metrics.frechet_distance(
                metrics.compute_feature_stats(feats), ref)
            entry["perceptual_distance"] = metrics.perceptual_distance(
                extractor, samples[:, 0], targets)
        per_model[name] = entry
        per_input_div[name] = div_per_input
        msssim_rows[name] = np.asarray(pooled).reshape(n, k - 1).mean(axis=1)
    report["models"] = per_model
    report["diff_ci"] = {
        "feature_diversity_l2_minus_l1": bootstrap_diff_ci(
            per_input_div["l2"], per_input_div["l1"], rng, n_boot),
        "msssim_mean_l2_minus_l1": bootstrap_diff_ci(
            msssim_rows["l2"], msssim_rows["l1"], rng, n_boot),
    }
    return report


# ---------------------------------------------------------------------------
# metric reports


def write_records(path, records: list[dict]) -> None:
    """Line-delimited JSON, one record per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def format_table(records: list[dict]) -> str:
    """Fixed-width text table over the union of record keys."""
    if not records:
        return "(no records)\n"
    keys = sorted({k for r in records for k in r})
    cells = [[_fmt(r.get(k)) for k in keys] for r in records]
    widths = [max(len(k), *(len(row[i]) for row in cells))
              for i, k in enumerate(keys)]
    lines = ["  ".join(k.ljust(w) for k, w in zip(keys, widths)),
             "  ".join("-" * w for w in widths)]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
