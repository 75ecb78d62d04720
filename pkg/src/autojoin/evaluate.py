"""Test suites and the MA / MAE metrics.

MA is the mean over thresholds of the fraction of predictions whose
absolute error is strictly below the threshold, in percent. Suites are
described by light descriptors and rendered on demand, so a full suite set
over a few hundred test frames fits comfortably in memory.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import perturb
from .attacks import DEFAULT_EPSILONS, AttackConfig, run_attack
from .corruptions import LEVELS, UNSEEN_EFFECTS, apply_unseen
from .models import from_batch, to_batch

THRESHOLDS = (1.5, 3.0, 7.5, 15.0, 30.0, 75.0)
CATEGORIES = ("clean", "single", "combined", "unseen", "fgsm", "pgd")
EXPECTED_CASES = {"clean": 1, "single": 75, "combined": 6, "unseen": 35, "fgsm": 5, "pgd": 5}


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise ValueError("metrics need at least one prediction")
    if pred.shape != truth.shape:
        raise ValueError(f"{pred.size} predictions but {truth.size} ground-truth angles")
    return pred, truth


def mean_accuracy(pred, truth, thresholds=THRESHOLDS):
    """Percent of (threshold, prediction) pairs with error strictly below the threshold.

    Computed as one division of the integer hit count, i.e. the exact rational
    rounded once, so any correct implementation agrees bit for bit.
    """
    pred, truth = _check_pair(pred, truth)
    err = np.abs(pred - truth)
    t = np.asarray(thresholds, dtype=np.float64)
    hits = int((err[None, :] < t[:, None]).sum())
    return 100 * hits / (len(t) * err.size)


def mean_absolute_error(pred, truth):
    """Mean |error| with an exactly rounded sum, so the value does not depend on summation order."""
    pred, truth = _check_pair(pred, truth)
    return math.fsum(np.abs(pred - truth).tolist()) / pred.size


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteCase:
    category: str
    name: str
    params: dict
    images: np.ndarray | None = None  # only attack cases carry pre-rendered frames


@dataclass
class SuiteSet:
    clean: object  # Dataset
    seed: int
    cases: dict  # category -> list[SuiteCase]
    meta: dict = field(default_factory=dict)

    def counts(self):
        return {cat: len(cases) for cat, cases in self.cases.items()}

    def render(self, case):
        """uint8 frames for ``case`` (N x H x W x 3), deterministic in the suite seed."""
        if case.images is not None:
            return case.images
        return render_case(case, self.clean.images, self.seed)

    def iter_cases(self, categories=CATEGORIES):
        for cat in categories:
            for case in self.cases.get(cat, []):
                yield case

    def manifest(self):
        return {
            "seed": self.seed,
            "dataset_sha256": dataset_digest(self.clean),
            "n_images": len(self.clean),
            "meta": self.meta,
            "counts": self.counts(),
            "cases": [
                {"category": c.category, "name": c.name, "params": c.params} for c in self.iter_cases()
            ],
        }


def dataset_digest(ds):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images, dtype=np.uint8).tobytes())
    h.update(np.asarray(ds.angles, dtype="<f8").tobytes())
    return h.hexdigest()


def quantize(images):
    return np.clip(np.rint(images), 0, 255).astype(np.uint8)


def quantize_toward(adv01, clean_u8):
    """8-bit adversarial frames whose offset never exceeds the float offset."""
    clean = clean_u8.astype(np.float64)
    delta = np.trunc(from_batch(adv01.astype(np.float64)) - clean)
    return np.clip(clean + delta, 0, 255).astype(np.uint8)


def render_case(case, clean_images, seed):
    p = case.params
    out = np.empty(clean_images.shape, dtype=np.uint8)
    for i, img in enumerate(clean_images):
        img_seed = (seed, p["index"], i)
        if case.category == "clean":
            out[i] = img
        elif case.category == "single":
            out[i] = quantize(perturb.apply(img, p["kind"], p["alpha"], seed=img_seed))
        elif case.category == "combined":
            out[i] = quantize(perturb.compose_combined(img, p["recipe"], seed=img_seed))
        elif case.category == "unseen":
            out[i] = quantize(apply_unseen(img, p["effect"], p["level"], seed=img_seed))
        else:
            raise ValueError(f"case {case.name} has no stored images and cannot be rendered")
    return out


def build_suites(clean, seed=0, generator=None, include_attacks=True, attack_batch=256, pgd_steps=10,
                 pgd_step_size=None):
    """Describe all six categories over ``clean``; attack cases are generated now.

    ``generator`` is the model trained on clean data only; adversarial frames
    are crafted against it and later transferred to the models under test.
    """
    cases = {"clean": [SuiteCase("clean", "clean", {"index": 0})]}
    single = []
    for kind in perturb.BASE_KINDS:
        for alpha in perturb.SHEN_LEVELS:
            single.append(SuiteCase("single", f"{kind}@{alpha}", {"index": len(single), "kind": kind, "alpha": alpha}))
    cases["single"] = single
    cases["combined"] = [
        SuiteCase("combined", f"recipe{r}", {"index": 100 + r, "recipe": r,
                                               "steps": [list(s) for s in perturb.COMBINED_RECIPES[r]]})
        for r in sorted(perturb.COMBINED_RECIPES)
    ]
    unseen = []
    for effect in UNSEEN_EFFECTS:
        for level in LEVELS:
            unseen.append(SuiteCase("unseen", f"{effect}@{level}",
                                    {"index": 200 + len(unseen), "effect": effect, "level": level}))
    cases["unseen"] = unseen

    meta = {}
    if include_attacks:
        if generator is None:
            raise ValueError("attack suites need a generator model trained on clean data")
        meta["generator_sha256"] = generator.checksum()
        x = to_batch(clean.images)
        for method in ("fgsm", "pgd"):
            cases[method] = []
            for eps in DEFAULT_EPSILONS:
                cfg = AttackConfig(method=method, eps=eps, pgd_steps=pgd_steps,
                                   pgd_step_size=pgd_step_size, seed=seed)
                adv = run_attack(generator, x, clean.angles, cfg, batch_size=attack_batch)
                params = {"index": 300 + len(cases[method]), "method": method, "eps": eps}
                if method == "pgd":
                    params.update(steps=cfg.pgd_steps, step_size=cfg.step_size)
                cases[method].append(SuiteCase(method, f"{method}@{eps}", params, quantize_toward(adv, clean.images)))
    return SuiteSet(clean=clean, seed=seed, cases=cases, meta=meta)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    cases: list  # dicts: category, name, ma, mae
    categories: dict  # category -> {"ma": .., "mae": .., "n_cases": ..}
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"meta": self.meta, "categories": self.categories, "cases": self.cases}

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["category", "ma", "mae", "n_cases"])
        for cat in CATEGORIES:
            if cat in self.categories:
                c = self.categories[cat]
                writer.writerow([cat, f"{c['ma']:.6f}", f"{c['mae']:.6f}", c["n_cases"]])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.csv_text())


def _summarise(rows):
    cats = {}
    for cat in CATEGORIES:
        sel = [r for r in rows if r["category"] == cat]
        if sel:
            cats[cat] = {
                "ma": float(np.mean([r["ma"] for r in sel])),
                "mae": float(np.mean([r["mae"] for r in sel])),
                "n_cases": len(sel),
            }
    return cats


def evaluate_many(models, suites, categories=CATEGORIES, batch_size=500):
    """Score several models on the same suites, rendering each case once."""
    rows = {name: [] for name in models}
    truth = suites.clean.angles
    for case in suites.iter_cases(categories):
        frames = suites.render(case)
        for name, model in models.items():
            pred = model.predict_angles(frames, batch_size=batch_size)
            rows[name].append({
                "category": case.category,
                "name": case.name,
                "ma": mean_accuracy(pred, truth),
                "mae": mean_absolute_error(pred, truth),
            })
    reports = {}
    for name, model in models.items():
        meta = {
            "model_sha256": model.checksum(),
            "suite_seed": suites.seed,
            "dataset_sha256": dataset_digest(suites.clean),
            "suite_meta": suites.meta,
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        reports[name] = EvalReport(cases=rows[name], categories=_summarise(rows[name]), meta=meta)
    return reports


def evaluate(model, suites, categories=CATEGORIES):
    return evaluate_many({"model": model}, suites, categories)["model"]


# ---------------------------------------------------------------------------
# on-disk suites

SUITE_MANIFEST = "manifest.json"


def save_suites(suites, path, materialize=False):
    """Write ``clean/`` (dataset), attack cases as PNG dirs, and ``manifest.json``.

    Synthetic cases are stored as descriptors and re-rendered on load, which
    is exact because rendering is seeded. ``materialize`` also writes every
    rendered case as a PNG directory for inspection.
    """
    from .data import Dataset, save_dataset

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_dataset(suites.clean, path / "clean")
    doc = suites.manifest()
    for entry, case in zip(doc["cases"], suites.iter_cases()):
        if case.images is not None or materialize:
            rel = f"{case.category}/{case.name.replace('@', '_')}"
            save_dataset(Dataset(suites.render(case), suites.clean.angles, suites.clean.names), path / rel)
            entry["dir"] = rel
    (path / SUITE_MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc


def load_suites(path):
    from .data import DatasetError, load_dataset

    path = Path(path)
    manifest = path / SUITE_MANIFEST
    if not manifest.exists():
        raise DatasetError(f"suite manifest not found: {manifest}")
    doc = json.loads(manifest.read_text())
    clean = load_dataset(path / "clean")
    if dataset_digest(clean) != doc["dataset_sha256"]:
        raise DatasetError(f"{path / 'clean'}: contents do not match the manifest digest")
    cases = {}
    for entry in doc["cases"]:
        images = None
        if entry["category"] in ("fgsm", "pgd"):
            if "dir" not in entry:
                raise DatasetError(f"{manifest}: attack case {entry['name']} has no image directory")
            images = load_dataset(path / entry["dir"]).images
        cases.setdefault(entry["category"], []).append(
            SuiteCase(entry["category"], entry["name"], entry["params"], images))
    return SuiteSet(clean=clean, seed=doc["seed"], cases=cases, meta=doc.get("meta", {}))
