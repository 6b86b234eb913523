"""Corruption operators that turn clean targets into training pairs.

Each operator produces a :class:`CorruptionSample` holding the conditioning
image x, the clean target y0, a binary loss mask (1 = region the model must
generate; all-ones when the whole image is the target) and task metadata.
Images are (channels, height, width) floats in [-1, 1]; batch stacking is the
caller's job.

Masked tasks (inpainting, uncropping) fill the hidden region of x with unit
Gaussian noise rather than a constant, and no mask channel is appended; the
model must infer the region to synthesize.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

TASKS = ("colorization", "inpainting", "uncropping", "jpeg_restoration")

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class CorruptionSample:
    x: np.ndarray
    y0: np.ndarray
    mask: np.ndarray
    task: str
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BrushParams:
    """Free-form brush-stroke mask parameters (values are toy-scale choices).

    ``mean_area_band`` is the empirical mean-area-fraction band the defaults
    were calibrated to on 16x16..64x64 images; tests assert against it.
    """

    num_strokes: tuple[int, int] = (1, 4)
    num_segments: tuple[int, int] = (3, 8)
    width_frac: tuple[float, float] = (0.05, 0.15)
    segment_length_frac: tuple[float, float] = (0.15, 0.35)
    mean_area_band: tuple[float, float] = (0.12, 0.22)


@dataclass(frozen=True)
class MaskSpec:
    kind: str
    area_bounds: tuple[float, float] = (0.0, 1.0)
    side: str | None = None


# ---------------------------------------------------------------------------
# colorization


def to_grayscale(y0: np.ndarray) -> np.ndarray:
    """BT.601 luminance replicated to 3 channels."""
    if y0.shape[-3] != 3:
        raise ValueError(f"expected 3 channels, got {y0.shape[-3]}")
    lum = np.tensordot(_LUMA, np.moveaxis(y0, -3, 0), axes=1)
    return np.repeat(lum[..., None, :, :], 3, axis=-3).astype(y0.dtype)


def make_colorization_sample(y0: np.ndarray) -> CorruptionSample:
    return CorruptionSample(x=to_grayscale(y0), y0=y0,
                            mask=np.ones_like(y0), task="colorization")


# ---------------------------------------------------------------------------
# masks


def _stroke_mask(h: int, w: int, rng: np.random.Generator,
                 params: BrushParams) -> np.ndarray:
    """One polyline brush stroke rasterized as a union of capsules."""
    mind = min(h, w)
    width = rng.uniform(*params.width_frac) * mind
    radius = width / 2.0
    n_seg = int(rng.integers(params.num_segments[0], params.num_segments[1] + 1))
    pt = np.array([rng.uniform(0, h), rng.uniform(0, w)])
    yy, xx = np.mgrid[0:h, 0:w]
    pix = np.stack([yy + 0.5, xx + 0.5], axis=-1).astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n_seg):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        length = rng.uniform(*params.segment_length_frac) * mind
        nxt = pt + length * np.array([np.sin(ang), np.cos(ang)])
        seg = nxt - pt
        den = float(seg @ seg)
        if den == 0.0:
            d2 = ((pix - pt) ** 2).sum(-1)
        else:
            t = np.clip(((pix - pt) @ seg) / den, 0.0, 1.0)
            closest = pt + t[..., None] * seg
            d2 = ((pix - closest) ** 2).sum(-1)
        mask |= d2 <= radius * radius
        pt = nxt
    return mask


def gen_freeform_mask(h: int, w: int, params: BrushParams,
                      rng: np.random.Generator) -> np.ndarray:
    """Union of random brush strokes; {0,1} float array of shape (h, w)."""
    if h < 8 or w < 8:
        raise ValueError("mask size must be at least 8x8")
    lo, hi = params.num_strokes
    n = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(n):
        mask |= _stroke_mask(h, w, rng, params)
    return mask.astype(np.float64)


MAX_RECT_RETRIES = 1000


def gen_rect_masks(h: int, w: int, rng: np.random.Generator,
                   area_bounds: tuple[float, float] = (0.10, 0.40),
                   return_rects: bool = False):
    """Union of 1-5 random rectangles with total area in ``area_bounds``.

    The rectangle count is drawn once and kept fixed while positions and
    sizes are rejection-sampled, so the count stays uniform on {1..5}.
    """
    if h < 8 or w < 8:
        raise ValueError("mask size must be at least 8x8")
    count = int(rng.integers(1, 6))
    lo, hi = area_bounds
    for _ in range(MAX_RECT_RETRIES):
        mask = np.zeros((h, w), dtype=bool)
        rects = []
        for _ in range(count):
            rh = max(1, int(round(rng.uniform(0.1, 0.5) * h)))
            rw = max(1, int(round(rng.uniform(0.1, 0.5) * w)))
            top = int(rng.integers(0, h - rh + 1))
            left = int(rng.integers(0, w - rw + 1))
            mask[top:top + rh, left:left + rw] = True
            rects.append((top, left, rh, rw))
        frac = mask.mean()
        if lo <= frac <= hi:
            out = mask.astype(np.float64)
            return (out, rects) if return_rects else out
    raise RuntimeError(f"no rectangle mask in area band {area_bounds} "
                       f"after {MAX_RECT_RETRIES} tries")


# ---------------------------------------------------------------------------
# inpainting

FREEFORM_PROB = 0.6


def _noise_fill(y0: np.ndarray, mask2d: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """x = y0 outside the mask, unit Gaussian noise inside it."""
    m = mask2d[None, :, :]
    noise = rng.standard_normal(y0.shape)
    return (y0 * (1.0 - m) + noise * m).astype(y0.dtype)


def make_inpainting_sample(y0: np.ndarray, rng: np.random.Generator,
                           brush: BrushParams = BrushParams()) -> CorruptionSample:
    _, h, w = y0.shape
    if rng.uniform() < FREEFORM_PROB:
        mask2d = gen_freeform_mask(h, w, brush, rng)
        meta = {"mask_kind": "freeform"}
    else:
        mask2d, rects = gen_rect_masks(h, w, rng, return_rects=True)
        meta = {"mask_kind": "rects", "rects": rects}
    meta["area_fraction"] = float(mask2d.mean())
    mask = np.broadcast_to(mask2d[None], y0.shape).astype(y0.dtype).copy()
    return CorruptionSample(x=_noise_fill(y0, mask2d, rng), y0=y0,
                            mask=mask, task="inpainting", meta=meta)


# ---------------------------------------------------------------------------
# uncropping

SIDES = ("left", "right", "top", "bottom")


def _half_area_inner_rect(h: int, w: int) -> tuple[int, int]:
    """Integer dims of a centered rectangle whose area is closest to h*w/2.

    Starting from the real solution of (h-2b)(w-2b) = h*w/2, the integer dims
    are picked from the floor/ceil combinations; plain rounding of the band
    width b can miss the half-area target by more than one pixel row.
    """
    b = ((h + w) - np.sqrt(h * h + w * w)) / 4.0
    rh_star, rw_star = h - 2.0 * b, w - 2.0 * b
    target = h * w / 2.0
    best = None
    for rh in {int(np.floor(rh_star)), int(np.ceil(rh_star))}:
        for rw in {int(np.floor(rw_star)), int(np.ceil(rw_star))}:
            rhc = min(max(rh, 1), h - 2)
            rwc = min(max(rw, 1), w - 2)
            err = abs(rhc * rwc - target)
            key = (err, rhc, rwc)
            if best is None or key < best:
                best = key
    return best[1], best[2]


def make_uncropping_sample(y0: np.ndarray, rng: np.random.Generator,
                           mode: str | None = None) -> CorruptionSample:
    """Hide half the image: one full side, or a border band on all sides."""
    _, h, w = y0.shape
    if h % 2 or w % 2:
        raise ValueError("uncropping needs even dims")
    if h < 4 or w < 4:
        raise ValueError("image too small for border band")
    if mode is None:
        mode = "one_side" if rng.uniform() < 0.5 else "all_sides"
    if mode not in ("one_side", "all_sides"):
        raise ValueError(f"unknown uncrop mode {mode!r}")
    mask2d = np.zeros((h, w), dtype=np.float64)
    if mode == "one_side":
        side = SIDES[int(rng.integers(4))]
        if side == "left":
            mask2d[:, :w // 2] = 1.0
        elif side == "right":
            mask2d[:, w // 2:] = 1.0
        elif side == "top":
            mask2d[:h // 2, :] = 1.0
        else:
            mask2d[h // 2:, :] = 1.0
        meta = {"mode": mode, "side": side}
    else:
        rh, rw = _half_area_inner_rect(h, w)
        top, left = (h - rh) // 2, (w - rw) // 2
        mask2d[:] = 1.0
        mask2d[top:top + rh, left:left + rw] = 0.0
        meta = {"mode": mode, "inner_rect": (top, left, rh, rw)}
    meta["area_fraction"] = float(mask2d.mean())
    mask = np.broadcast_to(mask2d[None], y0.shape).astype(y0.dtype).copy()
    return CorruptionSample(x=_noise_fill(y0, mask2d, rng), y0=y0,
                            mask=mask, task="uncropping", meta=meta)


# ---------------------------------------------------------------------------
# JPEG restoration

QF_RANGE = (5, 30)

# ITU-T T.81 Annex K reference quantization tables
LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_QTABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)


def sample_jpeg_qf(rng: np.random.Generator) -> int:
    """Quality factor on [5, 30] with weight proportional to exp(-Q/10)."""
    qs = np.arange(QF_RANGE[0], QF_RANGE[1] + 1)
    weights = np.exp(-qs / 10.0)
    return int(rng.choice(qs, p=weights / weights.sum()))


def scaled_qtable(base: np.ndarray, qf: int) -> np.ndarray:
    """libjpeg quality scaling: 5000/Q below 50, else 200 - 2Q."""
    scale = 5000.0 / qf if qf < 50 else 200.0 - 2.0 * qf
    q = np.floor((base * scale + 50.0) / 100.0)
    return np.clip(q, 1.0, 255.0)


def _blockwise_quantize(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """DCT-quantize-dequantize-IDCT every 8x8 block of one padded plane."""
    hp, wp = plane.shape
    blocks = plane.reshape(hp // 8, 8, wp // 8, 8).transpose(0, 2, 1, 3)
    coefs = scipy.fft.dctn(blocks - 128.0, type=2, norm="ortho", axes=(-2, -1))
    coefs = np.round(coefs / qtable) * qtable
    rec = scipy.fft.idctn(coefs, type=2, norm="ortho", axes=(-2, -1)) + 128.0
    return rec.transpose(0, 2, 1, 3).reshape(hp, wp)


def _pad_to(x: np.ndarray, mult: int) -> np.ndarray:
    h, w = x.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    return x


def jpeg_degrade(y0: np.ndarray, qf: int) -> np.ndarray:
    """Round-trip through a pixel-domain baseline JPEG model.

    Stages, stated exactly so a conforming codec reproduces them:
    8-bit quantization of the [-1,1] input; JFIF RGB->YCbCr; 4:2:0 chroma
    subsampling by 2x2 box average; per-plane edge padding to multiples of 8;
    8x8 orthonormal DCT-II; quantization by the Annex K tables under libjpeg
    quality scaling with rounding to nearest integer; the inverse of each
    stage. Entropy coding is omitted: it is lossless and changes no pixel.
    """
    if not 1 <= qf <= 100:
        raise ValueError(f"quality factor {qf} outside [1, 100]")
    if y0.ndim != 3 or y0.shape[0] != 3:
        raise ValueError("expected (3, h, w) image")
    if not np.isfinite(y0).all():
        raise ValueError("image contains non-finite values")
    _, h, w = y0.shape
    rgb = np.clip(np.round((y0.astype(np.float64) + 1.0) * 127.5), 0, 255)
    r, g, b = rgb
    yy = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168735892 * r - 0.331264108 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418687589 * g - 0.081312411 * b
    # 4:2:0: chroma planes halved by 2x2 box average
    cbp = _pad_to(cb, 2)
    crp = _pad_to(cr, 2)
    cb_s = cbp.reshape(cbp.shape[0] // 2, 2, cbp.shape[1] // 2, 2).mean((1, 3))
    cr_s = crp.reshape(crp.shape[0] // 2, 2, crp.shape[1] // 2, 2).mean((1, 3))
    lq = scaled_qtable(LUMA_QTABLE, qf)
    cq = scaled_qtable(CHROMA_QTABLE, qf)
    yy_r = _blockwise_quantize(_pad_to(yy, 8), lq)[:h, :w]
    cb_r = _blockwise_quantize(_pad_to(cb_s, 8), cq)
    cr_r = _blockwise_quantize(_pad_to(cr_s, 8), cq)
    cb_u = cb_r.repeat(2, 0).repeat(2, 1)[:h, :w]
    cr_u = cr_r.repeat(2, 0).repeat(2, 1)[:h, :w]
    r2 = yy_r + 1.402 * (cr_u - 128.0)
    g2 = yy_r - 0.344136286 * (cb_u - 128.0) - 0.714136286 * (cr_u - 128.0)
    b2 = yy_r + 1.772 * (cb_u - 128.0)
    out = np.stack([r2, g2, b2])
    out = np.clip(np.round(out), 0, 255)
    return (out / 127.5 - 1.0).astype(y0.dtype)


def make_jpeg_sample(y0: np.ndarray, rng: np.random.Generator) -> CorruptionSample:
    qf = sample_jpeg_qf(rng)
    return CorruptionSample(x=jpeg_degrade(y0, qf), y0=y0,
                            mask=np.ones_like(y0), task="jpeg_restoration",
                            meta={"qf": qf})


# ---------------------------------------------------------------------------
# multi-task batching and fixtures


def make_task_sample(task: str, y0: np.ndarray,
                     rng: np.random.Generator) -> CorruptionSample:
    if task == "colorization":
        return make_colorization_sample(y0)
    if task == "inpainting":
        return make_inpainting_sample(y0, rng)
    if task == "uncropping":
        return make_uncropping_sample(y0, rng)
    if task == "jpeg_restoration":
        return make_jpeg_sample(y0, rng)
    raise ValueError(f"unknown task {task!r}")


def multi_task_batch(y0_batch: np.ndarray, tasks,
                     rng: np.random.Generator) -> list[CorruptionSample]:
    """Assign each batch element a task uniformly at random and corrupt it."""
    tasks = sorted(set(tasks))
    if not tasks:
        raise ValueError("task set must be nonempty")
    for t in tasks:
        if t not in TASKS:
            raise ValueError(f"unknown task {t!r}")
    picks = rng.integers(0, len(tasks), size=y0_batch.shape[0])
    return [make_task_sample(tasks[k], y0_batch[i], rng)
            for i, k in enumerate(picks)]


def stack_samples(samples: list[CorruptionSample]):
    """Stack a list of samples into (x, y0, mask) batch arrays."""
    x = np.stack([s.x for s in samples])
    y0 = np.stack([s.y0 for s in samples])
    mask = np.stack([s.mask for s in samples])
    return x, y0, mask


def _to_png_array(img: np.ndarray) -> np.ndarray:
    u8 = np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return u8.transpose(1, 2, 0)


def export_fixtures(samples: list[CorruptionSample], out_dir,
                    seed: int) -> Path:
    """Write samples as 8-bit PNGs plus a line-delimited JSON manifest."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, s in enumerate(samples):
            stem = f"{i:05d}_{s.task}"
            for part, img in (("x", s.x), ("y0", s.y0)):
                path = out_dir / f"{stem}_{part}.png"
                Image.fromarray(_to_png_array(img)).save(path)
            mask_path = out_dir / f"{stem}_mask.png"
            m8 = (s.mask[0] * 255).astype(np.uint8)
            Image.fromarray(m8, mode="L").save(mask_path)
            meta = {k: (list(v) if isinstance(v, tuple) else v)
                    for k, v in s.meta.items()}
            rec = {"index": i, "task": s.task, "seed": seed,
                   "x": f"{stem}_x.png", "y0": f"{stem}_y0.png",
                   "mask": f"{stem}_mask.png", "params": meta}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest
