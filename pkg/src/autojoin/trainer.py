"""Joint denoising + steering training and its ablation variants.

Every image in an epoch receives the next perturbation from a shuffled
working copy of the perturbation set (reshuffled after each full pass) at an
intensity drawn from the curriculum range. The perturbed batch is encoded
once; the latent feeds both the decoder (reconstruction vs. the clean image,
l2) and the regression head (angle vs. ground truth, l1).
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import perturb
from .autodiff import Tensor
from .curriculum import CurriculumState, sample_intensity, update
from .models import build_nvidia_desk, preset, to_batch

log = logging.getLogger(__name__)

VARIANTS = (
    "standard",
    "autojoin",
    "autojoin_fuse",
    "feedback",
    "no_dae",
    "no_full_set",
    "no_random_intensity",
    "no_fs_ri",
)

# Perturbation subsets used for the subset ablation; names map to kind filters.
SUBSETS = {
    "all": perturb.BASE_KINDS,
    "no_rgb": tuple(k for k in perturb.BASE_KINDS if k[0] not in "RGB" or "-" not in k),
    "no_hsv": tuple(k for k in perturb.BASE_KINDS if k[0] not in "HSV" or "-" not in k),
    "no_bnd": perturb.CHANNEL_KINDS,
    "rgb_noise": tuple(k for k in perturb.CHANNEL_KINDS if k[0] in "RGB") + ("noise",),
    "hsv_noise": tuple(k for k in perturb.CHANNEL_KINDS if k[0] in "HSV") + ("noise",),
    "no_blur_distort": perturb.CHANNEL_KINDS + ("noise",),
}


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss) or was misconfigured."""


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0  # lambda1, reconstruction l2
    regress: float = 10.0  # lambda2, steering l1
    recon_regress: float | None = None  # lambda3, feedback term

    def validate(self):
        values = [self.recon, self.regress] + ([self.recon_regress] if self.recon_regress is not None else [])
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ValueError(f"loss weights must be finite and non-negative, got {values}")
        if not any(v > 0 for v in values):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "autojoin"
    weights: LossWeights = field(default_factory=LossWeights)
    kinds: tuple | None = None  # perturbation subset filter; None means all 15
    c_min: float = 0.0
    c_max: float = 1.0
    c_step: float = 0.1
    improvement_mode: str = "best"
    batch_size: int = 124
    lr: float = 1e-4
    epochs: int = 500
    seed: int = 0
    fuse_fraction: float = 0.1
    noise_mode: str = "range"
    architecture: str = "nvidia-desk"
    checkpoint_every: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        self.weights.validate()
        if self.weights.recon_regress is not None and self.variant != "feedback":
            raise ValueError("lambda3 (recon_regress) is only used by the feedback variant")
        if self.variant == "feedback" and self.weights.recon_regress is None:
            raise ValueError("the feedback variant needs lambda3 (recon_regress)")
        if self.kinds is not None:
            bad = [k for k in self.kinds if k not in perturb.BASE_KINDS]
            if bad or not self.kinds:
                raise ValueError(f"invalid perturbation subset {self.kinds!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.lr <= 0:
            raise ValueError("batch_size, epochs and lr must be positive")
        if not 0.0 < self.fuse_fraction <= 1.0:
            raise ValueError("fuse_fraction must be in (0, 1]")
        preset(self.architecture)
        CurriculumState.start(self.c_min, self.c_max, self.c_step, self.improvement_mode)

    @property
    def perturbs(self):
        return self.variant != "standard"

    @property
    def uses_decoder(self):
        return self.variant not in ("standard", "no_dae")

    @property
    def full_set(self):
        return self.variant not in ("no_full_set", "no_fs_ri")

    @property
    def random_intensity(self):
        return self.variant not in ("no_random_intensity", "no_fs_ri")

    def to_dict(self):
        d = asdict(self)
        d["kinds"] = list(self.kinds) if self.kinds is not None else None
        return d

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        weights = doc.pop("weights", {}) or {}
        if isinstance(weights, (list, tuple)):
            weights = dict(zip(("recon", "regress", "recon_regress"), weights))
        unknown = sorted(set(doc) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown training config keys: {', '.join(unknown)}")
        bad_w = sorted(set(weights) - set(LossWeights.__dataclass_fields__))
        if bad_w:
            raise ValueError(f"unknown loss weight keys: {', '.join(bad_w)}")
        if doc.get("kinds") is not None:
            kinds = doc["kinds"]
            doc["kinds"] = SUBSETS[kinds] if isinstance(kinds, str) and kinds in SUBSETS else tuple(kinds)
        return cls(weights=LossWeights(**weights), **doc)


PAPER_PRESET = TrainConfig()
# desk scale: smaller batches, 30 epochs, a 10x learning rate so 30 epochs suffice,
# and the reconstruction-weighted (10, 1) loss so the decoder term is not swamped
# by an l1 measured in degrees
DESK_PRESET = TrainConfig(weights=LossWeights(recon=10.0, regress=1.0), batch_size=32, epochs=30, lr=1e-3)


class PerturbationSchedule:
    """Shuffled working copy of the perturbation set with a running cursor.

    Image ``i`` (counted over the whole run) receives ``order[i mod L]``;
    the order is reshuffled after every ``L`` images, so each aligned block
    of ``L`` images sees every kind exactly once.
    """

    def __init__(self, kinds, rng):
        if not kinds:
            raise TrainingError("perturbation set is empty")
        self.kinds = list(kinds)
        self.rng = rng
        self.order = list(self.kinds)
        self.rng.shuffle(self.order)
        self.cursor = 0

    def __len__(self):
        return len(self.kinds)

    def next(self):
        kind = self.order[self.cursor % len(self.order)]
        self.cursor += 1
        if self.cursor % len(self.order) == 0:
            self.rng.shuffle(self.order)
        return kind


def draw_intensity(config, curriculum, rng):
    if config.random_intensity:
        return sample_intensity(curriculum, rng)
    return float(perturb.SHEN_LEVELS[rng.integers(len(perturb.SHEN_LEVELS))])


def perturb_batch(images, schedule, curriculum, rng, config, seed_prefix=(0,)):
    """Perturb each HWC image with the next scheduled kind.

    Returns the float32 batch and a log of ``(kind, alpha)`` per image.
    ``seed_prefix`` plus the image's cursor position seeds its noise stream.
    """
    out = np.empty(images.shape, dtype=np.float32)
    applied = []
    for i, img in enumerate(images):
        position = schedule.cursor
        kind = schedule.next()
        if kind in perturb.CHANNELS:
            kind = f"{kind}-{perturb.DIRECTIONS[rng.integers(2)]}"
        alpha = draw_intensity(config, curriculum, rng)
        out[i] = perturb.apply(img, kind, alpha, seed=(*seed_prefix, position), noise_mode=config.noise_mode)
        applied.append((kind, alpha))
    return out, applied


def fuse_batch(batch, fraction, rng):
    """Replace ``round(fraction * N)`` (at least 1) images by the mean of three.

    Each sampled image is averaged with two other distinct images from the
    (unfused) batch. Returns the new batch and ``(target, partner, partner)`` triples.
    """
    n = len(batch)
    if n < 3:
        raise TrainingError(f"fusion needs at least 3 images in a batch, got {n}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fuse fraction must be in (0, 1]")
    m = max(1, int(round(fraction * n)))
    targets = rng.choice(n, size=m, replace=False)
    out = batch.copy()
    triples = []
    for t in targets:
        others = np.delete(np.arange(n), t)
        a, b = rng.choice(others, size=2, replace=False)
        out[t] = perturb.fuse_images(batch[t], batch[a], batch[b])
        triples.append((int(t), int(a), int(b)))
    return out, triples


def joint_loss(recon, clean, pred_angles, true_angles, weights):
    """lambda1 * l2(recon, clean) + lambda2 * l1(pred, truth)."""
    terms = []
    if weights.recon > 0:
        terms.append(ad.scale(ad.l2_loss(recon, clean), weights.recon))
    if weights.regress > 0 or not terms:
        terms.append(ad.scale(ad.l1_loss(pred_angles, true_angles), weights.regress))
    loss = terms[0]
    for t in terms[1:]:
        loss = ad.add(loss, t)
    return loss


def feedback_loss(recon, clean, pred_angles, recon_pred_angles, true_angles, weights):
    """Joint loss plus lambda3 * l1 on angles predicted from the reconstruction."""
    if weights.recon_regress is None:
        raise ValueError("feedback loss needs lambda3 (recon_regress)")
    loss = joint_loss(recon, clean, pred_angles, true_angles, weights)
    if weights.recon_regress == 0:
        return loss
    extra = ad.scale(ad.l1_loss(recon_pred_angles, true_angles), weights.recon_regress)
    return ad.add(loss, extra)


@dataclass
class TrainResult:
    model: object
    config: TrainConfig
    history: list
    applied: list = field(default_factory=list)

    @property
    def predictor(self):
        """Encoder and head only; the decoder is dropped after training."""
        return self.model.without_decoder()


def _batch_loss(model, config, x, clean, y):
    z = model.encode(x)
    pred = model.predict(z)
    if config.variant == "standard":
        return ad.l1_loss(pred, y)
    if not config.uses_decoder:
        return ad.scale(ad.l1_loss(pred, y), config.weights.regress)
    recon = model.decode(z)
    if config.variant == "feedback":
        recon_pred = model.predict(model.encode(recon))
        return feedback_loss(recon, clean, pred, recon_pred, y, config.weights)
    return joint_loss(recon, clean, pred, y, config.weights)


def train(config, dataset, out_dir=None, record_applied=False, progress=None):
    """Run the epoch loop and return a :class:`TrainResult`.

    ``out_dir`` (optional) receives ``train_log.jsonl`` and periodic
    checkpoints. ``record_applied`` keeps the full ``(kind, alpha)`` log.
    """
    config.validate()
    if len(dataset) == 0:
        raise TrainingError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    sched_rng = np.random.default_rng([config.seed, 1])
    model = build_nvidia_desk(preset(config.architecture), seed=config.seed)
    opt = ad.Adam(model.trainable(include_decoder=config.uses_decoder), lr=config.lr)
    kinds = config.kinds or perturb.BASE_KINDS
    if not config.full_set:
        # undirected channel kinds; direction drawn per image
        chans = [c for c in perturb.CHANNELS if any(k.startswith(c + "-") for k in kinds)]
        kinds = chans + [k for k in kinds if "-" not in k]
    schedule = PerturbationSchedule(kinds, sched_rng)
    curriculum = CurriculumState.start(config.c_min, config.c_max, config.c_step, config.improvement_mode)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w")

    history, applied_all = [], []
    n = len(dataset)
    angles = dataset.angles.astype(np.float32)
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                clean_imgs = dataset.images[idx]
                if config.perturbs:
                    batch, applied = perturb_batch(
                        clean_imgs, schedule, curriculum, rng, config, seed_prefix=(config.seed, epoch)
                    )
                    if record_applied:
                        applied_all.extend(applied)
                    if config.variant == "autojoin_fuse" and len(idx) >= 3:
                        batch, _ = fuse_batch(batch, config.fuse_fraction, rng)
                else:
                    batch = clean_imgs
                x = Tensor(to_batch(batch))
                clean = Tensor(to_batch(clean_imgs))
                y = Tensor(angles[idx][:, None])

                opt.zero_grad()
                try:
                    loss = _batch_loss(model, config, x, clean, y)
                except ad.NonFiniteError as exc:
                    raise TrainingError(f"epoch {epoch} batch at {start}: {exc}") from exc
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"epoch {epoch} batch at {start}: loss became {value}")
                loss.backward()
                opt.step()
                total += value * len(idx)

            epoch_loss = total / n
            c_used = curriculum.c_current
            if config.perturbs:
                update(curriculum, epoch_loss)
            entry = {
                "epoch": epoch,
                "loss": epoch_loss,
                "c": c_used,
                "c_next": curriculum.c_current,
                "wall_time": time.perf_counter() - t0,
            }
            history.append(entry)
            log.info("epoch %d loss %.5f c %.2f", epoch, epoch_loss, c_used)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if progress is not None:
                progress(entry)
            if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_model(model, out_dir / f"checkpoint_epoch{epoch + 1:04d}.json", config)
    finally:
        if log_fh is not None:
            log_fh.close()

    return TrainResult(model=model, config=config, history=history, applied=applied_all)


def save_model(model, path, config=None, include_decoder=True):
    meta = {"architecture": model.spec.name}
    if config is not None:
        meta["train_config"] = config.to_dict()
    params = model.state_dict()
    if not include_decoder:
        params = {k: v for k, v in params.items() if not k.startswith("decoder.")}
    ad.save_checkpoint(path, params, meta)


def with_overrides(config, **changes):
    return replace(config, **changes)
