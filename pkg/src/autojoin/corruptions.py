"""Held-out corruption effects at severities 1..5.

These are small parametric stand-ins for the ImageNet-C effects, sized for
64x64 frames. They are never used for training; the evaluator runs them as
the Unseen suite. Stochastic effects (fog, snow, rain, frost) draw from
``numpy.random.default_rng(seed)``.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from . import kernels
from .perturb import as_image, gaussian_taps

UNSEEN_EFFECTS = ("fog", "snow", "rain", "frost", "motion_blur", "zoom_blur", "compression")
LEVELS = (1, 2, 3, 4, 5)

FOG_STRENGTH = (0.15, 0.25, 0.35, 0.45, 0.55)
SNOW_DENSITY = (0.01, 0.02, 0.03, 0.045, 0.06)
SNOW_HAZE = (0.05, 0.1, 0.15, 0.2, 0.25)
RAIN_DROPS = (20, 35, 50, 70, 90)
RAIN_LENGTH = (4, 6, 8, 10, 12)
RAIN_DARKEN = (0.95, 0.9, 0.85, 0.8, 0.75)
FROST_WEIGHT = (0.2, 0.3, 0.4, 0.5, 0.6)
MOTION_LENGTH = (3, 5, 7, 9, 11)
ZOOM_SPAN = (0.06, 0.11, 0.16, 0.21, 0.26)
JPEG_QUALITY = (25, 18, 15, 10, 7)

FROST_COLOR = np.array([200.0, 220.0, 255.0])


def _smooth_field(rng, h, w, coarse=8):
    """Low-frequency noise in [0, 1]: a coarse random grid blurred and upsampled."""
    grid = rng.random((coarse, coarse, 1))
    ys = np.linspace(0, coarse - 1, h)
    xs = np.linspace(0, coarse - 1, w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    field = kernels.remap_bilinear(grid, xx, yy)[..., 0]
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)


def fog(img, level, seed=0):
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    weight = FOG_STRENGTH[level - 1] * (0.5 + 0.5 * _smooth_field(rng, h, w))
    weight = weight[..., None]
    return img * (1.0 - weight) + 255.0 * weight


def snow(img, level, seed=0):
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    flakes = (rng.random((h, w)) < SNOW_DENSITY[level - 1]).astype(np.float64)
    flakes = kernels.blur_separable(flakes[..., None], gaussian_taps(0.6))[..., 0]
    flakes = np.clip(flakes * 3.0, 0.0, 1.0)
    cover = np.clip(flakes + SNOW_HAZE[level - 1], 0.0, 1.0)[..., None]
    return img * (1.0 - cover) + 255.0 * cover


def rain(img, level, seed=0):
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    mask = np.zeros((h, w))
    length = RAIN_LENGTH[level - 1]
    for _ in range(RAIN_DROPS[level - 1]):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        for t in range(length):
            y, x = y0 + t, x0 + t // 3
            if y < h and x < w:
                mask[y, x] = 1.0
    mask = np.clip(kernels.blur_separable(mask[..., None], gaussian_taps(0.5))[..., 0] * 1.5, 0.0, 1.0)
    mask = mask[..., None]
    return img * RAIN_DARKEN[level - 1] * (1.0 - 0.7 * mask) + 200.0 * 0.7 * mask


def frost(img, level, seed=0):
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    texture = 0.6 * _smooth_field(rng, h, w, coarse=6) + 0.4 * _smooth_field(rng, h, w, coarse=16)
    weight = (FROST_WEIGHT[level - 1] * (0.5 + 0.5 * texture))[..., None]
    return img * (1.0 - weight) + FROST_COLOR * weight


def motion_blur(img, level, seed=0):
    length = MOTION_LENGTH[level - 1]
    r = length // 2
    padded = np.pad(img.astype(np.float64), ((0, 0), (r, r), (0, 0)), mode="edge")
    w = img.shape[1]
    out = np.zeros(img.shape)
    for k in range(length):
        out += padded[:, k:k + w]
    return out / length


def zoom_blur(img, level, seed=0):
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    scales = np.linspace(1.0, 1.0 + ZOOM_SPAN[level - 1], 6)
    out = np.zeros(img.shape)
    for s in scales:
        out += kernels.remap_bilinear(img, cx + (xs - cx) / s, cy + (ys - cy) / s)
    return out / len(scales)


def compression(img, level, seed=0):
    buf = io.BytesIO()
    Image.fromarray(np.clip(np.rint(img), 0, 255).astype(np.uint8)).save(
        buf, format="JPEG", quality=JPEG_QUALITY[level - 1]
    )
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64)


_EFFECTS = {
    "fog": fog,
    "snow": snow,
    "rain": rain,
    "frost": frost,
    "motion_blur": motion_blur,
    "zoom_blur": zoom_blur,
    "compression": compression,
}


def apply_unseen(img, effect, level, seed=0):
    """Apply a held-out corruption ``effect`` at severity ``level`` (1..5)."""
    if effect not in _EFFECTS:
        raise ValueError(f"unknown unseen effect {effect!r}; expected one of {UNSEEN_EFFECTS}")
    if level not in LEVELS:
        raise ValueError(f"severity level must be in 1..5, got {level!r}")
    out = _EFFECTS[effect](as_image(img), level, seed)
    return np.clip(out, 0.0, 255.0).astype(np.float32)
