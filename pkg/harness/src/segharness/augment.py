"""Image/mask augmentation for segmentation training.

Images are float arrays in grey levels [0, 255], masks are integer class
maps. Geometric ops transform both in lockstep; photometric ops leave the
mask alone. Every op fires independently with probability 0.5.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _disk_kernel(radius: float) -> np.ndarray:
    half = int(np.ceil(radius))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    k = (xx ** 2 + yy ** 2 <= radius ** 2 + 1e-9).astype(np.float64)
    return k / k.sum()


def add_bloom(img: np.ndarray, threshold=0.95, box=64, gain=0.02) -> np.ndarray:
    """Vertical sensor blooming on a [0,255] image (thresholds on [0,1])."""
    arr = img / 255.0
    col_max = arr.max(axis=0)
    masked = np.where(col_max >= threshold, col_max, 0.0)
    smeared = ndimage.uniform_filter1d(masked, size=box, mode="constant", cval=0.0)
    return np.clip(arr + gain * smeared[None, :], 0.0, 1.0) * 255.0


def augment(image: np.ndarray, mask: np.ndarray, seed: int,
            rotation_amplitude_deg: float = 15.0,
            exposure_stops: tuple[float, float] = (-0.5, 1.5),
            noise_amp_grey: float = 5.0,
            defocus_radius: tuple[float, float] = (1.0, 3.0),
            op_probability: float = 0.5):
    """One augmentation draw; returns (image, mask).

    Order: rotation, exposure, noise+defocus, second noise, horizontal
    flip, background noise (outside the object, where the image is black),
    blooming. The mask only changes under rotation and flip.
    """
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    img = np.asarray(image, dtype=np.float64)
    msk = np.asarray(mask).copy()
    background = img < 1.0  # rendered background is black

    if rng.random() < op_probability:
        angle = rng.uniform(-rotation_amplitude_deg, rotation_amplitude_deg)
        img = ndimage.rotate(img, angle, reshape=False, order=1, mode="constant")
        msk = ndimage.rotate(msk, angle, reshape=False, order=0, mode="constant")
        background = ndimage.rotate(background.astype(np.uint8), angle,
                                    reshape=False, order=0, mode="constant",
                                    cval=1).astype(bool)
    if rng.random() < op_probability:
        img = img * 2.0 ** rng.uniform(*exposure_stops)
    if rng.random() < op_probability:
        img = img + rng.normal(0.0, rng.uniform(0.0, noise_amp_grey), img.shape)
        img = ndimage.convolve(img, _disk_kernel(rng.uniform(*defocus_radius)),
                               mode="nearest")
    if rng.random() < op_probability:
        img = img + rng.normal(0.0, rng.uniform(0.0, noise_amp_grey), img.shape)
    if rng.random() < op_probability:
        img = img[:, ::-1]
        msk = msk[:, ::-1]
        background = background[:, ::-1]
    if rng.random() < op_probability:
        noise = rng.normal(0.0, rng.uniform(0.0, noise_amp_grey), img.shape)
        img = np.where(background, img + noise, img)
    if rng.random() < op_probability:
        img = add_bloom(np.clip(img, 0.0, 255.0))
    return np.clip(img, 0.0, 255.0), np.ascontiguousarray(msk)


def biased_crop(image: np.ndarray, mask: np.ndarray, size: int = 256,
                threshold: float = 15.0, seed: int = 0, max_tries: int = 10):
    """Random crop preferring windows with intensity content above threshold.

    Candidate positions are rejection-sampled on the crop's mean grey value;
    after max_tries the last candidate is taken regardless (all-dark images
    fall back to a uniform crop). Images smaller than the crop are zero
    padded first.
    """
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    img = np.asarray(image, dtype=np.float64)
    msk = np.asarray(mask)
    pad_r = max(0, size - img.shape[0])
    pad_c = max(0, size - img.shape[1])
    if pad_r or pad_c:
        img = np.pad(img, ((0, pad_r), (0, pad_c)))
        msk = np.pad(msk, ((0, pad_r), (0, pad_c)))
    max_r = img.shape[0] - size
    max_c = img.shape[1] - size
    r = c = 0
    for _ in range(max_tries):
        r = int(rng.integers(0, max_r + 1))
        c = int(rng.integers(0, max_c + 1))
        if img[r:r + size, c:c + size].mean() > threshold:
            break
    return img[r:r + size, c:c + size], msk[r:r + size, c:c + size]
