"""Demonstration pipelines built on an edge-preserving smoother.

Tone mapping splits log luminance into a base layer (the smoother's output)
and a detail residual, compresses the base, and restores colors by chromatic
ratios. Contrast enhancement treats the smoothed luminance as illumination,
gamma-adjusts it, and recombines with the reflectance.

Internal constants: luminance uses Rec. 709 weights; logs are natural; the
smoother is fed min-max-normalized log luminance replicated to 3 channels
(our models are trained on [0,1] RGB) and its channel mean is taken back.
Both pipelines clamp their output to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
_FLAT_RANGE = 1e-12

Smoother = Callable[[np.ndarray], np.ndarray]


class HdrError(ValueError):
    pass


@dataclass(frozen=True)
class HdrImage:
    """Linear-radiance H x W x 3 image with strictly positive luminance."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise HdrError(f"HDR image must be H x W x 3, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise HdrError("HDR image contains non-finite radiance")
        if np.any(luminance(arr) <= 0):
            raise HdrError("HDR luminance must be strictly positive")

    @property
    def dynamic_range(self) -> float:
        lum = luminance(self.data)
        return float(lum.max() / lum.min())


def luminance(img: np.ndarray) -> np.ndarray:
    return img @ LUMA_WEIGHTS


def smooth_gray(smoother: Smoother, gray: np.ndarray) -> np.ndarray:
    """Run a 3-channel smoother on a single-channel map."""
    out = smoother(np.repeat(gray[:, :, None], 3, axis=2))
    return out.mean(axis=2)


def identity_smoother(img: np.ndarray) -> np.ndarray:
    return img


def gaussian_smoother(sigma: float) -> Smoother:
    """Separable Gaussian blur; the classic halo-prone base filter."""
    radius = max(1, int(np.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()

    def blur(img: np.ndarray) -> np.ndarray:
        padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="edge")
        tmp = np.zeros_like(img)
        for i, kv in enumerate(k):
            tmp += kv * padded[i:i + img.shape[0]]
        padded = np.pad(tmp, ((0, 0), (radius, radius), (0, 0)), mode="edge")
        out = np.zeros_like(img)
        for i, kv in enumerate(k):
            out += kv * padded[:, i:i + img.shape[1]]
        return out

    return blur


def model_smoother(model) -> Smoother:
    from .models import forward
    return lambda img: forward(model, img)


# ---------------------------------------------------------------------------


def tone_map(hdr: HdrImage, smoother: Smoother, compression: float = 5.0) -> np.ndarray:
    """Compress an HDR image's base layer while preserving detail.

    With the identity smoother and compression 1 this reduces to plain
    normalization by the maximum luminance.
    """
    if compression < 1.0:
        raise ValueError(f"compression factor must be >= 1, got {compression}")
    lum = luminance(hdr.data)
    log_lum = np.log(lum)
    lo, hi = float(log_lum.min()), float(log_lum.max())
    if hi - lo < _FLAT_RANGE:
        base = log_lum
    else:
        unit = (log_lum - lo) / (hi - lo)
        base = lo + smooth_gray(smoother, unit) * (hi - lo)
    detail = log_lum - base
    out_log = base / compression + detail
    out_lum = np.exp(out_log)
    display = out_lum / out_lum.max()
    ratio = display / lum
    return np.clip(hdr.data * ratio[:, :, None], 0.0, 1.0)


def contrast_enhance(image: np.ndarray, smoother: Smoother, gamma: float = 0.6,
                     eps: float = 1e-6) -> np.ndarray:
    """Brighten dark illumination while keeping reflectance detail.

    Illumination is the smoothed luminance; reflectance is the per-pixel
    ratio. gamma < 1 lifts dark regions; gamma 1 with the identity smoother
    is (up to the eps guard) the identity.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be H x W x 3, got {image.shape}")
    lum = luminance(image)
    illum = np.clip(smooth_gray(smoother, lum), eps, 1.0)
    reflectance = lum / (illum + eps)
    out_lum = np.power(illum, gamma) * reflectance
    ratio = out_lum / (lum + eps)
    return np.clip(image * ratio[:, :, None], 0.0, 1.0)
