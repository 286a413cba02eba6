"""Paired view generation.

Each source image yields two correlated views: a full-geometry view and a
small crop. The crop is a pixel-exact sub-window of the source — it is
never rescaled, so the crop branch sees the texture at native resolution.
Both views then pass through the same distortion composition: independent
horizontal/vertical flips and a brightness/contrast/saturation jitter.
There is deliberately no blur anywhere in this pipeline.

All randomness comes from an explicit Generator, so augmentation is a pure
function of (image, config, rng) and replays bit-exactly.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigurationError, IngestionError

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 32
    full_size: Tuple[int, int] = (120, 190)  # (height, width)
    color_strength: float = 0.5
    flip_p_horizontal: float = 0.5
    flip_p_vertical: float = 0.5
    seed: Optional[int] = None  # standalone use only; training derives its own streams

    def __post_init__(self):
        if self.crop_size < 1:
            raise ConfigurationError("crop_size must be positive")
        if self.crop_size > min(self.full_size):
            raise ConfigurationError("crop_size must not exceed the full view dimensions")
        if not (0.0 <= self.color_strength <= 1.0):
            raise ConfigurationError("color_strength must lie in [0, 1]")
        for p in (self.flip_p_horizontal, self.flip_p_vertical):
            if not (0.0 <= p <= 1.0):
                raise ConfigurationError("flip probabilities must lie in [0, 1]")


@dataclass
class ImageSample:
    pixels: np.ndarray  # H x W x 3 floats in [0, 1]
    label: Optional[int]
    id: str
    index: int = 0


@dataclass
class ViewPair:
    full: np.ndarray
    crop: np.ndarray
    source_id: str = ""
    label: Optional[int] = None


def random_flip(img, p_h, p_v, rng):
    """Flip horizontally with probability p_h and vertically with p_v."""
    if rng.random() < p_h:
        img = img[:, ::-1, :]
    if rng.random() < p_v:
        img = img[::-1, :, :]
    return np.ascontiguousarray(img)


def color_distort(img, strength, rng):
    """Brightness/contrast/saturation jitter scaled by one strength knob.

    Strength 0 is the bit-exact identity. Output is clamped to [0, 1].
    """
    if strength == 0.0:
        return img.copy()
    lo, hi = max(0.0, 1.0 - 0.8 * strength), 1.0 + 0.8 * strength
    f_bright, f_contrast, f_sat = rng.uniform(lo, hi, size=3)

    out = img * f_bright
    gray = out @ _LUMA
    out = gray.mean() + (out - gray.mean()) * f_contrast
    gray = out @ _LUMA
    out = gray[..., None] + (out - gray[..., None]) * f_sat
    return np.clip(out, 0.0, 1.0)


def resize_bilinear(img, out_h, out_w):
    """Bilinear resample to (out_h, out_w); half-pixel-centered sampling."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def fit_to_size(img, out_h, out_w):
    """Deterministic full-view geometry: aspect-preserving scale, center crop."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    scale = max(out_h / h, out_w / w)
    rh, rw = max(out_h, int(np.ceil(h * scale))), max(out_w, int(np.ceil(w * scale)))
    resized = resize_bilinear(img, rh, rw)
    top = (rh - out_h) // 2
    left = (rw - out_w) // 2
    return np.ascontiguousarray(resized[top : top + out_h, left : left + out_w])


def random_crop(img, size, rng):
    """Uniformly placed size x size sub-window, copied pixel-exact."""
    h, w = img.shape[:2]
    if h < size or w < size:
        raise IngestionError(f"image {h}x{w} smaller than crop size {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size].copy()


def center_crop(img, size):
    h, w = img.shape[:2]
    if h < size or w < size:
        raise IngestionError(f"image {h}x{w} smaller than crop size {size}")
    top = (h - size) // 2
    left = (w - size) // 2
    return img[top : top + size, left : left + size].copy()


def make_view_pair(sample, cfg, rng):
    """Derive the (full view, crop view) pair for one sample.

    Draw order is fixed: full flips, full color, crop offsets, crop flips,
    crop color — so a given rng state maps to exactly one pair.
    """
    px = sample.pixels
    if px.ndim != 3 or px.shape[2] != 3:
        raise IngestionError(f"sample {sample.id}: expected HxWx3 pixels")
    if px.shape[0] < cfg.crop_size or px.shape[1] < cfg.crop_size:
        raise IngestionError(
            f"sample {sample.id}: {px.shape[0]}x{px.shape[1]} smaller than crop size {cfg.crop_size}"
        )

    full = fit_to_size(px, cfg.full_size[0], cfg.full_size[1])
    full = random_flip(full, cfg.flip_p_horizontal, cfg.flip_p_vertical, rng)
    full = color_distort(full, cfg.color_strength, rng)

    crop = random_crop(px, cfg.crop_size, rng)
    crop = random_flip(crop, cfg.flip_p_horizontal, cfg.flip_p_vertical, rng)
    crop = color_distort(crop, cfg.color_strength, rng)

    return ViewPair(full=full, crop=crop, source_id=sample.id, label=sample.label)


def deterministic_views(sample, cfg):
    """Augmentation-free views used when embedding a dataset: the centered
    full-geometry view and the centered crop."""
    full = fit_to_size(sample.pixels, cfg.full_size[0], cfg.full_size[1])
    crop = center_crop(sample.pixels, cfg.crop_size)
    return ViewPair(full=full, crop=crop, source_id=sample.id, label=sample.label)
