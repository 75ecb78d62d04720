"""Synthetic driving frames with known steering angles, plus dataset I/O.

Each frame is a 64x64 RGB view of a road receding to a horizon. The road's
centreline is quadratic in depth, ``x(t) = x0 + offset * (1 - t) + bend * t**2``
with ``bend = BEND_PX * kappa``, and the label is
``clamp(k_steer * kappa, -90, 90)`` degrees. Curvature is therefore visible
in the image and maps monotonically to the angle.

On disk a dataset is a directory of PNGs plus ``labels.csv`` with columns
``filename,angle_degrees``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

ANGLE_LIMIT = 90.0
BEND_PX = 12.0  # horizontal bend at the horizon per unit curvature
LABELS_FILE = "labels.csv"


class DatasetError(ValueError):
    """Malformed, missing or empty dataset on disk."""


@dataclass
class Dataset:
    images: np.ndarray  # N x H x W x 3 uint8
    angles: np.ndarray  # N float64, degrees
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if len(self.images) != len(self.angles):
            raise DatasetError(f"{len(self.images)} images but {len(self.angles)} angles")
        if not self.names:
            self.names = [f"{i:06d}.png" for i in range(len(self.images))]

    def __len__(self):
        return len(self.angles)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.angles[idx], [self.names[i] for i in idx])


@dataclass
class SyntheticSpec:
    count: int = 200
    height: int = 64
    width: int = 64
    k_steer: float = 20.0  # degrees per unit curvature; kappa ~ N(0, 1)
    max_offset: float = 4.0  # lateral camera offset, pixels
    texture_std: float = 12.0
    seed: int = 0

    def validate(self):
        if self.count < 1:
            raise ValueError("synthetic spec needs count >= 1")
        if self.height < 16 or self.width < 16:
            raise ValueError("synthetic frames must be at least 16x16")
        if self.k_steer <= 0:
            raise ValueError("k_steer must be positive")

    @classmethod
    def from_dict(cls, doc):
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {', '.join(unknown)}")
        return cls(**known)


def angle_for_curvature(kappa, k_steer):
    return float(np.clip(k_steer * kappa, -ANGLE_LIMIT, ANGLE_LIMIT))


def render_frame(kappa, rng, spec):
    """Draw one frame for curvature ``kappa`` using ``rng`` for palette and texture."""
    h, w = spec.height, spec.width
    horizon = int(round(h * 0.375)) + int(rng.integers(-2, 3))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    sky_top = rng.uniform([80, 130, 200], [150, 190, 255])
    sky_low = np.minimum(sky_top + rng.uniform(30, 70), 255)
    frac = np.clip(ys / max(horizon, 1), 0, 1)[..., None]
    img = sky_top * (1 - frac) + sky_low * frac

    grass = rng.uniform([40, 100, 25], [90, 160, 70])
    road_gray = rng.uniform(85, 130)
    ground = ys >= horizon
    depth = np.clip((h - 1 - ys) / max(h - 1 - horizon, 1), 0, 1)  # 0 at bottom, 1 at horizon
    shade = (0.75 + 0.25 * depth)[..., None]
    tex = rng.normal(0, spec.texture_std, (h, w, 1))
    grass_px = grass * shade + tex
    img = np.where(ground[..., None], grass_px, img)

    offset = rng.uniform(-spec.max_offset, spec.max_offset)
    center = (w - 1) / 2 + offset * (1 - depth) + BEND_PX * kappa * depth**2
    half = rng.uniform(19, 25) * (1 - 0.9 * depth)
    dist = np.abs(xs - center)
    road = ground & (dist < half)
    road_px = road_gray * shade + 0.5 * tex
    img = np.where(road[..., None], road_px, img)

    edge = road & (dist > 0.86 * half)
    img = np.where(edge[..., None], np.array([235.0, 235.0, 235.0]), img)
    persp = 1.0 / (1.0 - 0.9 * depth)
    dashes = (np.mod(persp * 2.0 + rng.uniform(), 1.0) < 0.5) & road & (dist < 0.07 * half + 0.5)
    img = np.where(dashes[..., None], np.array([240.0, 210.0, 60.0]), img)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic(spec):
    """Render ``spec.count`` frames; byte-identical for equal specs."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    kappa_rng = np.random.default_rng(root.spawn(1)[0])
    kappas = kappa_rng.standard_normal(spec.count)
    images = np.empty((spec.count, spec.height, spec.width, 3), dtype=np.uint8)
    angles = np.empty(spec.count)
    for i, child in enumerate(root.spawn(spec.count)):
        images[i] = render_frame(kappas[i], np.random.default_rng(child), spec)
        angles[i] = angle_for_curvature(kappas[i], spec.k_steer)
    return Dataset(images, angles)


def angle_cdf(angle, spec):
    """CDF of generated labels: a clamped normal with std ``k_steer``."""
    if angle >= ANGLE_LIMIT:
        return 1.0
    if angle < -ANGLE_LIMIT:
        return 0.0
    return 0.5 * (1.0 + math.erf(angle / (spec.k_steer * math.sqrt(2.0))))


def save_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / LABELS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "angle_degrees"])
        for name, img, angle in zip(ds.names, ds.images, ds.angles):
            Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path / name)
            writer.writerow([name, repr(float(angle))])


def load_dataset(path):
    path = Path(path)
    labels = path / LABELS_FILE
    if not path.is_dir():
        raise DatasetError(f"dataset directory not found: {path}")
    if not labels.exists():
        if not any(path.iterdir()):
            raise DatasetError(f"dataset directory is empty: {path}")
        raise DatasetError(f"missing {LABELS_FILE} in {path}")

    names, angles, images = [], [], []
    with open(labels, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["filename", "angle_degrees"]:
            raise DatasetError(f"{labels}: header must be 'filename,angle_degrees'")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetError(f"{labels}: row {row_no} has {len(row)} columns, expected 2")
            name, raw = row[0].strip(), row[1].strip()
            try:
                angle = float(raw)
            except ValueError:
                raise DatasetError(f"{labels}: row {row_no} has non-numeric angle {raw!r}") from None
            if not math.isfinite(angle):
                raise DatasetError(f"{labels}: row {row_no} has non-finite angle {raw!r}")
            img_path = path / name
            if not img_path.exists():
                raise DatasetError(f"{labels}: row {row_no} references missing image {name}")
            img = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.uint8)
            if images and img.shape != images[0].shape:
                raise DatasetError(f"{labels}: row {row_no} image {name} is {img.shape[1]}x{img.shape[0]}, "
                                   f"expected {images[0].shape[1]}x{images[0].shape[0]}")
            images.append(img)
            names.append(name)
            angles.append(angle)
    if not names:
        raise DatasetError(f"dataset at {path} has no samples")
    return Dataset(np.stack(images), np.array(angles), names)


def split(ds, fraction, seed=0):
    """Deterministic shuffled split into ``(train, test)`` with ``round(fraction * n)`` train samples."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at {fraction} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(order[:n_train])), ds.subset(np.sort(order[n_train:]))
