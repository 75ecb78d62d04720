"""Image perturbations parameterised by an intensity ``alpha`` in [0, 1].

Images are ``H x W x 3`` float32 arrays holding RGB values in [0, 255].
Channel shifts follow the linear blend ``alpha * bound + (1 - alpha) * v``
toward the darker bound ``a_c`` or the lighter bound ``b_c``; H, S and V are
reached through an RGB <-> HSV round trip with H in half-degrees (so the
lighter hue bound 179 is 358 degrees) and S, V in [0, 255]. ``alpha = 0``
returns an exact copy for every kind.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

CHANNELS = ("R", "G", "B", "H", "S", "V")
DIRECTIONS = ("light", "dark")

CHANNEL_KINDS = tuple(f"{c}-{d}" for c in CHANNELS for d in DIRECTIONS)
BASE_KINDS = CHANNEL_KINDS + ("noise", "blur", "distort")

# the nine undirected perturbations; channel direction is drawn per image
UNDIRECTED_KINDS = CHANNELS + ("noise", "blur", "distort")

SHEN_LEVELS = (0.02, 0.2, 0.5, 0.65, 1.0)

# (a_c, b_c) per channel
DEFAULT_BOUNDS = {
    "R": (0.0, 255.0),
    "G": (0.0, 255.0),
    "B": (0.0, 255.0),
    "H": (0.0, 179.0),
    "S": (0.0, 255.0),
    "V": (10.0, 255.0),
}
HSV_LIMITS = {"H": 179.0, "S": 255.0, "V": 255.0}

# Maxima reached at alpha = 1, tuned for 64x64 frames: visibly degraded, still drivable.
NOISE_SIGMA_MAX = 0.2  # fraction of the 0..255 range
NOISE_SIGMA_PER_IMAGE = 1.0  # multiple of the image's own std in "per_image" mode
BLUR_SIGMA_MAX = 3.0  # pixels
DISTORT_K_MAX = 0.5  # radial coefficient, radius normalised to the half-diagonal


def as_image(img):
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    return arr.astype(np.float32, copy=True)


def _finish(arr):
    return np.clip(arr, 0.0, 255.0).astype(np.float32)


def parse_kind(kind):
    """Split ``"G-dark"`` into ``("G", "dark")``; non-channel kinds return ``(kind, None)``."""
    if kind in CHANNEL_KINDS:
        channel, direction = kind.split("-")
        return channel, direction
    if kind in ("noise", "blur", "distort"):
        return kind, None
    raise ValueError(f"unknown perturbation kind {kind!r}")


def channel_shift(img, channel, direction, alpha, bounds=None):
    """Blend one RGB or HSV channel toward its darker or lighter bound."""
    img = as_image(img)
    if channel not in DEFAULT_BOUNDS:
        raise ValueError(f"unknown channel {channel!r}")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'light' or 'dark', got {direction!r}")
    if alpha == 0:
        return img
    lo, hi = (bounds or DEFAULT_BOUNDS)[channel]
    target = hi if direction == "light" else lo
    a = float(alpha)

    if channel in "RGB":
        idx = "RGB".index(channel)
        v = img[..., idx].astype(np.float64)
        img[..., idx] = np.clip(a * target + (1.0 - a) * v, 0.0, 255.0)
        return img

    return _finish(kernels.hsv_to_rgb(shift_hsv(kernels.rgb_to_hsv(img), channel, direction, a, bounds)))


def shift_hsv(hsv, channel, direction, alpha, bounds=None):
    """The linear blend applied in HSV space (float64, before converting back)."""
    lo, hi = (bounds or DEFAULT_BOUNDS)[channel]
    target = hi if direction == "light" else lo
    idx = "HSV".index(channel)
    a = float(alpha)
    out = np.array(hsv, dtype=np.float64)
    out[..., idx] = np.clip(a * target + (1.0 - a) * out[..., idx], 0.0, HSV_LIMITS[channel])
    return out


def noise_sigma(img, alpha, mode="range"):
    if mode == "range":
        return float(alpha) * NOISE_SIGMA_MAX * 255.0
    if mode == "per_image":
        return float(alpha) * NOISE_SIGMA_PER_IMAGE * float(np.std(img))
    raise ValueError(f"noise_std_mode must be 'range' or 'per_image', got {mode!r}")


def gaussian_noise(img, alpha, seed=0, mode="range"):
    """Add zero-mean Gaussian noise with std ``alpha * sigma_max``; seeded."""
    img = as_image(img)
    if alpha == 0:
        return img
    sigma = noise_sigma(img, alpha, mode)
    noise = np.random.default_rng(seed).standard_normal(img.shape) * sigma
    return _finish(img + noise)


def gaussian_taps(sigma):
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (x / sigma) ** 2)
    return taps / taps.sum()


def gaussian_blur(img, alpha):
    """Separable Gaussian blur with std ``alpha * BLUR_SIGMA_MAX``, clamp-to-edge."""
    img = as_image(img)
    sigma = float(alpha) * BLUR_SIGMA_MAX
    if sigma <= 0:
        return img
    return _finish(kernels.blur_separable(img, gaussian_taps(sigma)))


def distortion_source_coords(height, width, k):
    """Inverse barrel map: where each output pixel samples from.

    ``r_src = r_dst * (1 + k * r_dst**2)`` with radii normalised by the
    half-diagonal, so the corners sit at r = 1.
    """
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    norm = math.hypot(cx, cy) or 1.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = (xs - cx) / norm, (ys - cy) / norm
    factor = 1.0 + k * (dx * dx + dy * dy)
    return cx + dx * factor * norm, cy + dy * factor * norm


def radial_distortion(img, alpha):
    img = as_image(img)
    k = float(alpha) * DISTORT_K_MAX
    if k == 0:
        return img
    xs, ys = distortion_source_coords(img.shape[0], img.shape[1], k)
    return _finish(kernels.remap_bilinear(img, xs, ys))


def fuse_images(a, b, c):
    """Pixelwise mean of three equally sized images."""
    a, b, c = as_image(a), as_image(b), as_image(c)
    if not (a.shape == b.shape == c.shape):
        raise ValueError(f"cannot fuse images of shapes {a.shape}, {b.shape}, {c.shape}")
    return ((a.astype(np.float64) + b + c) / 3.0).astype(np.float32)


def apply(img, kind, alpha, seed=0, noise_mode="range", bounds=None):
    """Apply one base perturbation by name, e.g. ``apply(img, "S-dark", 0.5)``."""
    name, direction = parse_kind(kind)
    if direction is not None:
        return channel_shift(img, name, direction, alpha, bounds)
    if name == "noise":
        return gaussian_noise(img, alpha, seed, noise_mode)
    if name == "blur":
        return gaussian_blur(img, alpha)
    return radial_distortion(img, alpha)


# Six fixed multi-perturbation recipes, applied in order. Intensities are the
# Shen levels; recipe 1 is green-darkening with noise and blur on top.
COMBINED_RECIPES = {
    1: (("G-dark", 0.5), ("noise", 0.5), ("blur", 0.5)),
    2: (("R-light", 0.65), ("distort", 0.5), ("noise", 0.2)),
    3: (("V-dark", 0.65), ("blur", 0.65)),
    4: (("S-light", 0.5), ("H-dark", 0.2), ("noise", 0.5)),
    5: (("B-dark", 0.5), ("V-light", 0.2), ("distort", 1.0)),
    6: (("H-light", 0.65), ("S-dark", 0.5), ("blur", 0.2), ("noise", 0.2)),
}


def apply_recipe(img, steps, seed=0):
    out = as_image(img)
    for i, (kind, alpha) in enumerate(steps):
        out = apply(out, kind, alpha, seed=(seed, i))
    return out


def compose_combined(img, recipe, seed=0):
    if recipe not in COMBINED_RECIPES:
        raise ValueError(f"unknown combined recipe {recipe!r}; expected 1..6")
    return apply_recipe(img, COMBINED_RECIPES[recipe], seed)
