"""Sample-quality and diversity metrics over extractor features.

Distribution metrics (Frechet distance, inception-style score) consume
:class:`FeatureStats` or class-probability matrices; image metrics (SSIM and
multi-scale SSIM) work directly on pixel arrays in [-1, 1]. Diversity scores
follow the two-sided protocol: multi-scale SSIM between the first sample and
each remaining sample, and feature-space distance between consecutive sample
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
PSD_TOLERANCE = -1e-8


# ---------------------------------------------------------------------------
# feature statistics


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.n < 2:
            raise ValueError("need at least 2 samples for covariance")
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape mismatch")
        if np.abs(self.cov - self.cov.T).max() > 1e-10:
            raise ValueError("covariance not symmetric")


def compute_feature_stats(features: np.ndarray) -> FeatureStats:
    """Mean and unbiased covariance of row-vectors of features."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("features must be (n >= 2, d)")
    mean = f.mean(axis=0)
    cov = np.cov(f, rowvar=False, ddof=1)
    cov = np.atleast_2d((cov + cov.T) / 2.0)
    return FeatureStats(mean=mean, cov=cov, n=f.shape[0])


def merge_stats(a: FeatureStats, b: FeatureStats) -> FeatureStats:
    """Combine stats from two disjoint sample sets (associative)."""
    n = a.n + b.n
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.n / n)
    # convert unbiased covs to scatter matrices, add cross term, convert back
    sa = a.cov * (a.n - 1)
    sb = b.cov * (b.n - 1)
    scatter = sa + sb + np.outer(delta, delta) * (a.n * b.n / n)
    return FeatureStats(mean=mean, cov=scatter / (n - 1), n=n)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < PSD_TOLERANCE * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix not PSD: min eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("feature dimension mismatch")
    diff = a.mean - b.mean
    ra = _sqrtm_psd(a.cov)
    inner = ra @ b.cov @ ra
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < PSD_TOLERANCE * max(1.0, abs(vals.max())):
        raise ValueError(f"cross term not PSD: min eigenvalue {vals.min():.3e}")
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov)
                 - 2.0 * tr_sqrt)


# ---------------------------------------------------------------------------
# classifier-based scores


def inception_score(cond_probs: np.ndarray) -> float:
    """exp of mean KL between per-sample class posteriors and their marginal."""
    p = np.asarray(cond_probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("cond_probs must be (n, k)")
    if np.any(p < -1e-12):
        raise ValueError("probabilities must be nonnegative")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("rows must sum to 1")
    marginal = p.mean(axis=0)
    # zero entries contribute nothing to the KL; where p > 0 the marginal is
    # positive too, so both logs are guarded by the same predicate
    safe_p = np.where(p > 0, p, 1.0)
    safe_m = np.where(p > 0, np.broadcast_to(marginal, p.shape), 1.0)
    kl = (p * (np.log(safe_p) - np.log(safe_m))).sum(axis=1)
    return float(np.exp(kl.mean()))


def classification_accuracy(extractor, images: np.ndarray,
                            labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    logits = extractor.logits(images)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    return float((logits.argmax(axis=1) == labels).mean())


def perceptual_distance(extractor, a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between pooled features of aligned pairs."""
    if a.shape[0] != b.shape[0]:
        raise ValueError("pair count mismatch")
    fa = extractor.features(a)
    fb = extractor.features(b)
    return float(np.linalg.norm(fa - fb, axis=1).mean())


# ---------------------------------------------------------------------------
# SSIM family


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_moments(x: np.ndarray, y: np.ndarray, win: np.ndarray):
    """Gaussian-weighted local moments over valid window positions."""
    k = win.shape[0]
    xv = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(-2, -1))
    yv = np.lib.stride_tricks.sliding_window_view(y, (k, k), axis=(-2, -1))
    mx = (xv * win).sum(axis=(-2, -1))
    my = (yv * win).sum(axis=(-2, -1))
    mxx = (xv * xv * win).sum(axis=(-2, -1))
    myy = (yv * yv * win).sum(axis=(-2, -1))
    mxy = (xv * yv * win).sum(axis=(-2, -1))
    vx = mxx - mx * mx
    vy = myy - my * my
    cxy = mxy - mx * my
    return mx, my, vx, vy, cxy


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = 2.0,
         return_cs: bool = False):
    """Structural similarity over (..., h, w); channels averaged if present."""
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}px window")
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my, vx, vy, cxy = _windowed_moments(np.asarray(x, np.float64),
                                            np.asarray(y, np.float64), win)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    cs = (2.0 * cxy + c2) / (vx + vy + c2)
    s = float((lum * cs).mean())
    return (s, float(cs.mean())) if return_cs else s


def _halve(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[-2:]
    x = x[..., :h - h % 2, :w - w % 2]
    return (x[..., 0::2, 0::2] + x[..., 0::2, 1::2]
            + x[..., 1::2, 0::2] + x[..., 1::2, 1::2]) / 4.0


def msssim_scale_count(shape, max_scales: int = len(MSSSIM_WEIGHTS)) -> int:
    """Scales usable before the image falls under the SSIM window."""
    m = 0
    size = min(shape[-2:])
    while m < max_scales and size >= SSIM_WINDOW:
        m += 1
        size //= 2
    if m == 0:
        raise ValueError("image too small for even one SSIM scale")
    return m


def _signed_power(v: float, w: float) -> float:
    return float(np.sign(v) * np.abs(v) ** w)


def ms_ssim(x: np.ndarray, y: np.ndarray, data_range: float = 2.0,
            scales: int | None = None) -> float:
    """Multi-scale SSIM; weights renormalized when fewer scales fit.

    Negative contrast terms use sign-preserving powers so the result stays
    real; a single usable scale reduces the metric to plain SSIM.
    """
    if scales is None:
        scales = msssim_scale_count(x.shape)
    weights = np.asarray(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()
    xs, ys = np.asarray(x, np.float64), np.asarray(y, np.float64)
    out = 1.0
    for j in range(scales):
        s, cs = ssim(xs, ys, data_range, return_cs=True)
        if j < scales - 1:
            out *= _signed_power(cs, weights[j])
            xs, ys = _halve(xs), _halve(ys)
        else:
            out *= _signed_power(s, weights[j])
    return float(out)


# ---------------------------------------------------------------------------
# diversity protocols


def pairwise_msssim_diversity(samples: np.ndarray) -> list[float]:
    """MS-SSIM(first sample, each other sample), pooled across inputs.

    ``samples`` has shape (inputs, k, c, h, w) with k >= 2.
    """
    s = np.asarray(samples)
    if s.ndim != 5 or s.shape[1] < 2:
        raise ValueError("need (inputs, k >= 2, c, h, w) samples")
    vals = []
    for i in range(s.shape[0]):
        for j in range(1, s.shape[1]):
            vals.append(ms_ssim(s[i, 0], s[i, j]))
    return vals


def _normalized_maps(maps: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for m in maps:
        norm = np.sqrt((m * m).sum(axis=1, keepdims=True)) + 1e-10
        out.append(m / norm)
    return out


def feature_map_distance(extractor, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pair distance: mean over layers of spatially averaged L2 between
    channel-unit-normalized activation maps."""
    na = _normalized_maps(extractor.layer_maps(a))
    nb = _normalized_maps(extractor.layer_maps(b))
    per_layer = []
    for ma, mb in zip(na, nb):
        d = np.sqrt(((ma - mb) ** 2).sum(axis=1))
        per_layer.append(d.mean(axis=(1, 2)))
    return np.mean(per_layer, axis=0)


def pairwise_feature_diversity(extractor, samples: np.ndarray) -> float:
    """Mean consecutive-pair feature distance across inputs and pairs."""
    s = np.asarray(samples)
    if s.ndim != 5 or s.shape[1] < 2:
        raise ValueError("need (inputs, k >= 2, c, h, w) samples")
    n, k = s.shape[:2]
    a = s[:, :-1].reshape((n * (k - 1),) + s.shape[2:])
    b = s[:, 1:].reshape((n * (k - 1),) + s.shape[2:])
    return float(feature_map_distance(extractor, a, b).mean())
