"""FGSM and PGD against the steering regressor (l1 loss on the angle).

Images are NCHW arrays in [0, 1]. Every output satisfies
``|x_adv - x| <= eps`` exactly when the difference is evaluated in float64,
and ``0 <= x_adv <= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_EPSILONS = (0.01, 0.025, 0.05, 0.075, 0.1)


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    eps: float = 0.05
    pgd_steps: int = 10
    pgd_step_size: float | None = None  # defaults to eps / 4
    random_start: bool = False
    seed: int = 0

    @property
    def step_size(self):
        return self.eps / 4.0 if self.pgd_step_size is None else self.pgd_step_size

    def validate(self):
        if self.method not in ("fgsm", "pgd"):
            raise ValueError(f"attack method must be 'fgsm' or 'pgd', got {self.method!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.method == "pgd":
            if self.pgd_steps < 1:
                raise ValueError("pgd_steps must be at least 1")
            if self.step_size * self.pgd_steps < self.eps:
                raise ValueError("pgd_step_size * pgd_steps must reach eps")


def _frozen(model):
    """View of ``model`` whose parameters do not collect gradients."""
    from .models import JointModel

    params = {n: Tensor(p.data, dtype=p.data.dtype) for n, p in model.params.items()}
    return JointModel(model.spec, params)


def input_gradient(model, images, true_angles):
    """d l1(p(e(x)), a_t) / dx for a batch of NCHW images."""
    x = Tensor(images, requires_grad=True, dtype=images.dtype)
    y = Tensor(np.asarray(true_angles, dtype=images.dtype).reshape(-1, 1), dtype=images.dtype)
    loss = ad.l1_loss(model.predict(model.encode(x)), y)
    try:
        ad.backward(loss)
    except ad.NonFiniteError as exc:
        raise ad.NonFiniteError(f"attack gradient is not finite: {exc}") from exc
    return x.grad


def project(candidate, origin, eps):
    """Clip into the L-inf ball around ``origin`` and into [0, 1], rounding inward."""
    x64 = origin.astype(np.float64)
    hi = (x64 + eps).astype(origin.dtype)
    lo = (x64 - eps).astype(origin.dtype)
    hi = np.where(hi.astype(np.float64) - x64 > eps, np.nextafter(hi, origin.dtype.type(-np.inf)), hi)
    lo = np.where(x64 - lo.astype(np.float64) > eps, np.nextafter(lo, origin.dtype.type(np.inf)), lo)
    out = np.minimum(np.maximum(candidate, lo), hi)
    return np.clip(out, 0.0, 1.0).astype(origin.dtype)


def fgsm(model, images, true_angles, eps):
    images = np.asarray(images)
    if eps == 0:
        return images.copy()
    g = input_gradient(_frozen(model), images, true_angles)
    return project(images + images.dtype.type(eps) * np.sign(g), images, eps)


def pgd(model, images, true_angles, config):
    """Iterated signed-gradient ascent, projected after every step."""
    config.validate()
    images = np.asarray(images)
    if config.eps == 0:
        return images.copy()
    frozen = _frozen(model)
    adv = images.copy()
    if config.random_start:
        rng = np.random.default_rng(config.seed)
        adv = project(images + rng.uniform(-config.eps, config.eps, images.shape).astype(images.dtype),
                      images, config.eps)
    step = images.dtype.type(config.step_size)
    for _ in range(config.pgd_steps):
        g = input_gradient(frozen, adv, true_angles)
        adv = project(adv + step * np.sign(g), images, config.eps)
    return adv


def run_attack(model, images, true_angles, config, batch_size=256):
    """Batched FGSM/PGD over NCHW ``images``."""
    config.validate()
    out = np.empty_like(images)
    for s in range(0, len(images), batch_size):
        sl = slice(s, s + batch_size)
        if config.method == "fgsm":
            out[sl] = fgsm(model, images[sl], true_angles[sl], config.eps)
        else:
            out[sl] = pgd(model, images[sl], true_angles[sl], config)
    return out
