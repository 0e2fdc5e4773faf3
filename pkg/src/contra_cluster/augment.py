"""Stochastic image augmentations used to build positive pairs.

Order is fixed: crop -> rotate -> flip -> blur -> noise. Each transform is
applied independently with probability ``apply_probability``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    apply_probability: float = 0.5
    max_rotation_deg: float = 30.0
    blur_sigma_range: tuple[float, float] = (0.1, 2.0)
    noise_std: float = 0.05
    crop_scale_range: tuple[float, float] = (0.6, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must be in [0, 1]")
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be >= 0")
        lo, hi = self.crop_scale_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError("crop_scale_range must lie within (0, 1]")
        object.__setattr__(self, "blur_sigma_range", tuple(self.blur_sigma_range))
        object.__setattr__(self, "crop_scale_range", tuple(self.crop_scale_range))

    def to_dict(self):
        d = asdict(self)
        d["blur_sigma_range"] = list(self.blur_sigma_range)
        d["crop_scale_range"] = list(self.crop_scale_range)
        return d


def rotate(img, angle_deg):
    """Rotate counter-clockwise about the image center with bilinear sampling.

    Pixels that map from outside the frame are zero.
    """
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle_deg)
    cos_t, sin_t = math.cos(t), math.sin(t)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map in (x = col, y = up = -row) coordinates
    dx, dy = cols - cx, -(rows - cy)
    sx = cos_t * dx + sin_t * dy
    sy = -sin_t * dx + cos_t * dy
    src = np.stack([cy - sy, cx + sx])
    return ndimage.map_coordinates(img, src, order=1, mode="constant", cval=0.0).astype(img.dtype)


def hflip(img):
    return img[:, ::-1].copy()


def gaussian_blur(img, sigma):
    if sigma <= 0:
        return img.copy()
    return ndimage.gaussian_filter(img, sigma=sigma, mode="nearest").astype(img.dtype)


def resized_crop(img, top, left, size_h, size_w):
    """Crop a (size_h, size_w) window and resample it bilinearly to the full frame."""
    h, w = img.shape
    r = top + (np.arange(h) + 0.5) * size_h / h - 0.5
    c = left + (np.arange(w) + 0.5) * size_w / w - 0.5
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return ndimage.map_coordinates(img, np.stack([rr, cc]), order=1, mode="nearest").astype(img.dtype)


def augment_once(x, cfg, rng):
    """Augment a single (H, W) image; output is clamped to [0, 1]."""
    out = np.asarray(x)
    h, w = out.shape
    p = cfg.apply_probability
    # draw all coin flips up front so the stream layout does not depend on outcomes
    coins = rng.random(5) < p
    if coins[0]:
        lo, hi = cfg.crop_scale_range
        scale = rng.uniform(lo, hi)
        side_h = max(1.0, math.sqrt(scale) * h)
        side_w = max(1.0, math.sqrt(scale) * w)
        top = rng.uniform(0.0, h - side_h)
        left = rng.uniform(0.0, w - side_w)
        if scale < 1.0:
            out = resized_crop(out, top, left, side_h, side_w)
    if coins[1] and cfg.max_rotation_deg > 0:
        out = rotate(out, rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    if coins[2]:
        out = hflip(out)
    if coins[3]:
        lo, hi = cfg.blur_sigma_range
        out = gaussian_blur(out, rng.uniform(lo, hi))
    if coins[4] and cfg.noise_std > 0:
        out = out + rng.normal(0.0, cfg.noise_std, size=out.shape).astype(out.dtype)
    if out is x:
        return np.array(x, copy=True)
    return np.clip(out, 0.0, 1.0).astype(np.asarray(x).dtype)


def augment_pair(x, cfg, rng):
    """Two independently augmented views of a (B, 1, H, W) batch.

    Each sample and view gets its own child generator spawned from ``rng``.
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] == 0:
        raise ValueError(f"expected a nonempty (B, 1, H, W) batch, got {x.shape}")
    b = x.shape[0]
    streams = rng.spawn(2 * b)
    v1 = np.empty_like(x)
    v2 = np.empty_like(x)
    for i in range(b):
        for c in range(x.shape[1]):
            v1[i, c] = augment_once(x[i, c], cfg, streams[2 * i])
            v2[i, c] = augment_once(x[i, c], cfg, streams[2 * i + 1])
    return v1, v2
