"""Real-vs-synthetic image similarity: alignment, post-processing, metrics.

Metric functions take grayscale images with values in [0, 255] (uint8 or
float) plus a boolean mask and return similarities in [0, 1]. The
post-processing simulators (defocus blur, sensor blooming, noise,
exposure) operate on float images normalized to [0, 1], matching how they
are applied to rendered output before 8-bit encoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

METRIC_NAMES = ("hist_wd", "mae", "ssim")
_REPORT_ROWS = (("hist_wd", "1-HistWD"), ("mae", "1-MAE"),
                ("ssim", "SSIM"), ("lpips", "1-LPIPS"))


class MetricError(ValueError):
    """Invalid metric input."""


@dataclass(frozen=True)
class AlignmentParams:
    """Linear intensity alignment applied to synthetic images: factor*x + bias."""

    factor: float
    bias: int

    def __post_init__(self):
        if self.factor <= 0:
            raise MetricError("alignment factor must be positive")
        if not (0 <= self.bias <= 255):
            raise MetricError("alignment bias must be within [0, 255] grey levels")


def _as_grey(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise MetricError(f"expected a 2D grayscale image, got shape {arr.shape}")
    return arr


def _masked(img, mask):
    arr = _as_grey(img)
    if mask is None:
        return arr.ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != arr.shape:
        raise MetricError("mask shape does not match the image")
    vals = arr[mask]
    if vals.size == 0:
        raise MetricError("empty mask")
    return vals


def estimate_alignment(real_set, synth_set, masks=None) -> AlignmentParams:
    """Estimate the linear transform bringing synthetic grey levels onto real.

    bias is the gap between the mean minimal grey value of the real images
    (the leading-zero run in their histograms) and that of the synthetic
    set; the factor is the least-squares ratio of mask-averaged intensities
    after removing those floors.
    """
    real_set = list(real_set)
    synth_set = list(synth_set)
    if not real_set or not synth_set:
        raise MetricError("alignment needs nonempty image sets")
    if masks is None:
        masks = [None] * max(len(real_set), len(synth_set))
    r_min = np.mean([_masked(img, masks[i % len(masks)]).min()
                     for i, img in enumerate(real_set)])
    s_min = np.mean([_masked(img, masks[i % len(masks)]).min()
                     for i, img in enumerate(synth_set)])
    r_mean = np.mean([_masked(img, masks[i % len(masks)]).mean()
                      for i, img in enumerate(real_set)])
    s_mean = np.mean([_masked(img, masks[i % len(masks)]).mean()
                      for i, img in enumerate(synth_set)])
    denom = s_mean - s_min
    if abs(denom) < 1e-9:
        raise MetricError("synthetic set has no masked intensity spread")
    factor = (r_mean - r_min) / denom
    bias = int(round(min(255.0, abs(r_min - s_min))))
    return AlignmentParams(factor=max(factor, 1e-9), bias=bias)


def apply_alignment(img, params: AlignmentParams) -> np.ndarray:
    """factor*x + bias, clipped to the 8-bit range."""
    return np.clip(_as_grey(img) * params.factor + params.bias, 0.0, 255.0)


# ---------------------------------------------------------------------------
# post-processing simulators ([0,1] float domain)
# ---------------------------------------------------------------------------

def _disk_kernel(radius: float) -> np.ndarray:
    if radius <= 0:
        raise MetricError("defocus radius must be positive")
    half = int(np.ceil(radius))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    k = (xx ** 2 + yy ** 2 <= radius ** 2 + 1e-9).astype(np.float64)
    return k / k.sum()


def defocus_blur(img: np.ndarray, radius: float) -> np.ndarray:
    """Disk-kernel convolution approximating out-of-focus optics."""
    return ndimage.convolve(np.asarray(img, dtype=np.float64),
                            _disk_kernel(radius), mode="nearest")


def bloom(img: np.ndarray, threshold: float = 0.95, box: int = 64,
          gain: float = 0.02) -> np.ndarray:
    """Vertical CCD blooming: saturated columns leak a smeared brightness.

    Per-column maxima are masked at the threshold, box-filtered across the
    column axis, scaled by the gain, and added back with clipping; the bleed
    amplitude is bounded by gain and its spread by the box support.
    """
    if box <= 0:
        raise MetricError("bloom box size must be positive")
    arr = np.asarray(img, dtype=np.float64)
    col_max = arr.max(axis=0)
    masked = np.where(col_max >= threshold, col_max, 0.0)
    smeared = ndimage.uniform_filter1d(masked, size=box, mode="constant", cval=0.0)
    return np.clip(arr + gain * smeared[None, :], 0.0, 1.0)


def gaussian_noise(img: np.ndarray, amp: float, rng) -> np.ndarray:
    return np.clip(np.asarray(img, dtype=np.float64)
                   + rng.normal(0.0, amp, np.asarray(img).shape), 0.0, 1.0)


def exposure(img: np.ndarray, stops: float) -> np.ndarray:
    return np.clip(np.asarray(img, dtype=np.float64) * 2.0 ** stops, 0.0, 1.0)


_POST_OPS = {
    "defocus_blur": lambda img, p, rng: defocus_blur(img, p["radius"]),
    "bloom": lambda img, p, rng: bloom(img, p.get("threshold", 0.95),
                                       p.get("box", 64), p.get("gain", 0.02)),
    "gaussian_noise": lambda img, p, rng: gaussian_noise(img, p["amp"], rng),
    "exposure": lambda img, p, rng: exposure(img, p["stops"]),
}


def post_process(img: np.ndarray, ops, seed: int = 0) -> np.ndarray:
    """Apply an ordered list of {'op': name, ...} steps to a [0,1] image."""
    rng = np.random.default_rng(seed)
    out = np.asarray(img, dtype=np.float64)
    for spec in ops:
        name = spec["op"]
        if name not in _POST_OPS:
            raise MetricError(f"unknown post-processing op {name!r}")
        out = _POST_OPS[name](out, spec, rng)
    return out


# ---------------------------------------------------------------------------
# similarity metrics
# ---------------------------------------------------------------------------

def hist_wd(a, b, mask=None) -> float:
    """1 - Wasserstein-1 distance between 256-bin histograms, both /255."""
    va = np.clip(_masked(a, mask), 0, 255)
    vb = np.clip(_masked(b, mask), 0, 255)
    ha, _ = np.histogram(va, bins=256, range=(0, 256))
    hb, _ = np.histogram(vb, bins=256, range=(0, 256))
    ca = np.cumsum(ha / ha.sum())
    cb = np.cumsum(hb / hb.sum())
    w1 = float(np.abs(ca - cb).sum())  # bin width = 1 grey level
    return 1.0 - w1 / 255.0


def mae(a, b, mask=None) -> float:
    """1 - mean absolute error / 255 over the mask."""
    va = _masked(a, mask)
    vb = _masked(b, mask)
    if va.shape != vb.shape:
        raise MetricError("image dims differ")
    return 1.0 - float(np.abs(va - vb).mean()) / 255.0


def _gaussian_window_filter(img, sigma=1.5, size=11):
    pad = size // 2
    x = np.arange(size) - pad
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    return ndimage.correlate1d(out, g, axis=1, mode="constant")


def ssim(a, b, mask=None, k1=0.01, k2=0.03, sigma=1.5, size=11,
         data_range=255.0) -> float:
    """Mean SSIM over windows fully inside the mask (and the image)."""
    x = _as_grey(a)
    y = _as_grey(b)
    if x.shape != y.shape:
        raise MetricError("image dims differ")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_x = _gaussian_window_filter(x, sigma, size)
    mu_y = _gaussian_window_filter(y, sigma, size)
    xx = _gaussian_window_filter(x * x, sigma, size) - mu_x ** 2
    yy = _gaussian_window_filter(y * y, sigma, size) - mu_y ** 2
    xy = _gaussian_window_filter(x * y, sigma, size) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    smap = num / den
    pad = size // 2
    interior = np.zeros_like(mask)
    interior[pad:-pad or None, pad:-pad or None] = True
    valid = ndimage.binary_erosion(mask, structure=np.ones((size, size))) & interior
    if not valid.any():
        raise MetricError("mask too small: no full SSIM window fits inside")
    return float(smap[valid].mean())


_METRIC_FNS = {"hist_wd": hist_wd, "mae": mae, "ssim": ssim}


def best_match_similarity(real_img, synth_instances, metric="ssim", mask=None):
    """Highest similarity between a real image and any synthetic instance.

    Returns (value, index); adding instances can only raise the value.
    """
    fn = _METRIC_FNS[metric] if isinstance(metric, str) else metric
    instances = list(synth_instances)
    if not instances:
        raise MetricError("need at least one synthetic instance")
    values = [fn(real_img, inst, mask) for inst in instances]
    idx = int(np.argmax(values))
    return float(values[idx]), idx


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class SimilarityReport:
    """Per-texture and overall similarity values plus best-match bookkeeping.

    The lpips slot stays None: a learned perceptual metric needs pretrained
    weights and is out of scope, but the table layout keeps its row.
    """

    per_texture: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)
    best_match_indices: dict = field(default_factory=dict)

    def validate(self):
        for scope in [*self.per_texture.values(), self.overall]:
            for key, val in scope.items():
                if key == "lpips" or val is None:
                    continue
                if not (0.0 <= val <= 1.0):
                    raise MetricError(f"similarity {key}={val} outside [0,1]")

    def to_json(self) -> str:
        return json.dumps({
            "per_texture": self.per_texture,
            "overall": self.overall,
            "best_match_indices": self.best_match_indices,
        }, indent=2)

    def to_table(self) -> str:
        textures = sorted(self.per_texture)
        header = ["Method"] + [t.capitalize() for t in textures] + ["All"]
        lines = ["  ".join(f"{h:>12}" for h in header)]
        for key, label in _REPORT_ROWS:
            cells = [label]
            for t in textures:
                v = self.per_texture[t].get(key)
                cells.append("-" if v is None else f"{v:.3f}")
            v = self.overall.get(key)
            cells.append("-" if v is None else f"{v:.3f}")
            lines.append("  ".join(f"{c:>12}" for c in cells))
        return "\n".join(lines)


def load_grey_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64)


def evaluate_directories(real_dir, synth_dir, masks_dir=None,
                         alignment_overrides=None,
                         defocus_radius: float = 1.0) -> SimilarityReport:
    """Score synthetic against real images with best-match aggregation.

    Layout: <dir>/<texture>/<viewpoint>/<image>.png; synthetic viewpoint
    directories hold one image per texture instance. masks_dir holds one
    meta-mask PNG per viewpoint (nonzero = evaluate). Synthetic images are
    intensity-aligned per texture (estimated, or taken from
    alignment_overrides[texture]) and defocus-blurred before scoring.
    """
    real_dir, synth_dir = Path(real_dir), Path(synth_dir)
    textures = sorted(p.name for p in real_dir.iterdir() if p.is_dir())
    if not textures:
        raise MetricError(f"no texture directories under {real_dir}")
    report = SimilarityReport()
    pooled = {m: [] for m in METRIC_NAMES}
    for texture in textures:
        viewpoints = sorted(p.name for p in (real_dir / texture).iterdir() if p.is_dir())
        reals, synths, masks = {}, {}, {}
        for vp in viewpoints:
            reals[vp] = {p.name: load_grey_png(p)
                         for p in sorted((real_dir / texture / vp).glob("*.png"))}
            synth_vp = synth_dir / texture / vp
            synths[vp] = [load_grey_png(p) for p in sorted(synth_vp.glob("*.png"))]
            mask_path = Path(masks_dir) / f"{vp}.png" if masks_dir else None
            if mask_path and mask_path.exists():
                masks[vp] = np.asarray(Image.open(mask_path)) > 0
            else:
                masks[vp] = None
        all_real = [img for vp in viewpoints for img in reals[vp].values()]
        all_synth = [img for vp in viewpoints for img in synths[vp]]
        if not all_real or not all_synth:
            raise MetricError(f"texture {texture}: empty real or synthetic set")
        if alignment_overrides and texture in alignment_overrides:
            align = alignment_overrides[texture]
        else:
            align = estimate_alignment(all_real, all_synth,
                                       [masks[vp] for vp in viewpoints])
        scores = {m: [] for m in METRIC_NAMES}
        indices = {}
        for vp in viewpoints:
            prepared = [defocus_blur(apply_alignment(s, align) / 255.0,
                                     defocus_radius) * 255.0
                        for s in synths[vp]]
            indices[vp] = {}
            for name, real_img in reals[vp].items():
                per_metric_idx = {}
                for m in METRIC_NAMES:
                    val, idx = best_match_similarity(real_img, prepared, m, masks[vp])
                    scores[m].append(val)
                    pooled[m].append(val)
                    per_metric_idx[m] = idx
                indices[vp][name] = per_metric_idx
        report.per_texture[texture] = {
            m: float(np.mean(scores[m])) for m in METRIC_NAMES} | {"lpips": None}
        report.best_match_indices[texture] = indices
    report.overall = {m: float(np.mean(pooled[m])) for m in METRIC_NAMES}
    report.overall["lpips"] = None
    report.validate()
    return report
