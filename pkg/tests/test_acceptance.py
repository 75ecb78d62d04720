"""Acceptance criteria, one test each, at their stated tolerances and time limits.

Every test prints one ``PASS``/``FAIL`` line; the lines are repeated in the
terminal summary. Criteria 8 to 10 train three desk models twice and take
several minutes.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from autojoin import attacks as A
from autojoin import curriculum as cur
from autojoin import experiment as ex
from autojoin import gradcheck, kernels, perturb
from autojoin.data import SyntheticSpec, generate_synthetic
from autojoin.evaluate import EXPECTED_CASES, build_suites, mean_accuracy
from autojoin.models import model_from_checkpoint, to_batch
from autojoin.trainer import DESK_PRESET, train, with_overrides

from conftest import ACCEPTANCE_LINES

ASSETS = Path(__file__).parent / "assets"


def verdict(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def timed(limit):
    start = time.perf_counter()
    return lambda: (time.perf_counter() - start, limit)


def within(clock):
    elapsed, limit = clock()
    return elapsed <= limit, f"{elapsed:.2f}s (limit {limit:.0f}s)"


# 1 ---------------------------------------------------------------------------


def test_criterion_1_perturbation_exactness():
    from PIL import Image

    rng = np.random.default_rng(0)
    images = [np.asarray(Image.open(ASSETS / "reference.png").convert("RGB")),
              rng.integers(0, 256, (64, 64, 3)).astype(np.uint8),
              rng.integers(0, 256, (17, 23, 3)).astype(np.uint8)]
    clock = timed(1.0)
    failures, cases = [], 0
    for kind in perturb.BASE_KINDS:
        channel, direction = perturb.parse_kind(kind)
        for n, img in enumerate(images):
            cases += 1
            if not np.array_equal(perturb.apply(img, kind, 0.0, seed=n), img.astype(np.float32)):
                failures.append(f"{kind}#{n} alpha=0")
            if direction is None:
                continue
            lo, hi = perturb.DEFAULT_BOUNDS[channel]
            bound = hi if direction == "light" else lo
            if channel in "RGB":
                got = perturb.apply(img, kind, 1.0)[..., "RGB".index(channel)]
            else:
                got = perturb.shift_hsv(kernels.rgb_to_hsv(img), channel, direction, 1.0)[..., "HSV".index(channel)]
            if not (got == bound).all():
                failures.append(f"{kind}#{n} alpha=1")
    fast, t = within(clock)
    ok = not failures and cases == 45 and fast
    verdict(1, "perturbation exactness", ok,
            f"{cases} cases, {len(failures)} mismatches {failures[:3]}, {t}")


# 2 ---------------------------------------------------------------------------

OP_SEEDS = 100
LOSS_SEEDS = 8


def test_criterion_2_gradient_correctness():
    clock = timed(30.0)
    worst = {}
    for name in gradcheck.OP_NAMES:
        worst[name] = max(gradcheck.check_op(name, seed) for seed in range(OP_SEEDS))
    for kind in ("joint", "feedback"):
        worst[f"{kind}_loss"] = max(gradcheck.check_joint_loss(kind, seed, n_coords=1) for seed in range(LOSS_SEEDS))
    fast, t = within(clock)
    top = max(worst, key=worst.get)
    ok = worst[top] < gradcheck.TOL and fast
    verdict(2, "gradient correctness", ok,
            f"{len(gradcheck.OP_NAMES)} ops x {OP_SEEDS} seeds + 2 losses x {LOSS_SEEDS} seeds, "
            f"worst rel err {worst[top]:.2e} ({top}) vs {gradcheck.TOL:g}, {t}")


# 3 ---------------------------------------------------------------------------


def _oracle_ma(pred, truth):
    hits = 0
    for tau in (1.5, 3.0, 7.5, 15.0, 30.0, 75.0):
        for p, t in zip(pred, truth):
            if abs(p - t) < tau:
                hits += 1
    return 100 * hits / (6 * len(pred))


def _oracle_mae(pred, truth):
    terms = []
    for p, t in zip(pred, truth):
        terms.append(abs(p - t))
    return math.fsum(terms) / len(pred)


def test_criterion_3_metric_oracle():
    from autojoin.evaluate import mean_absolute_error

    rng = np.random.default_rng(3)
    clock = timed(5.0)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        truth = rng.uniform(-90, 90, n)
        pred = truth + rng.normal(scale=rng.choice([1.0, 5.0, 30.0]), size=n)
        if rng.random() < 0.3:  # errors landing exactly on thresholds
            pred = truth + rng.choice([1.5, 3.0, 7.5, 15.0, 30.0, 75.0], n) * rng.choice([-1, 1], n)
        pl, tl = pred.tolist(), truth.tolist()
        mismatches += mean_accuracy(pred, truth) != _oracle_ma(pl, tl)
        mismatches += mean_absolute_error(pred, truth) != _oracle_mae(pl, tl)
    hand = abs(mean_accuracy([5.0], [0.0]) - 66.66666666666667) < 1e-9
    hand &= abs(mean_accuracy([5.0], [0.0]) - 66.667) < 5e-4
    fast, t = within(clock)
    verdict(3, "metric oracle", mismatches == 0 and hand and fast,
            f"1000 random sets, {mismatches} mismatches, error 5.0 -> {mean_accuracy([5.0], [0.0]):.3f}, {t}")


# 4 ---------------------------------------------------------------------------


def test_criterion_4_curriculum():
    clock = timed(1.0)
    state = cur.CurriculumState.start()
    updates = 0
    loss = 100.0
    while state.c_current < 1.0 and updates < 50:
        loss -= 1.0
        cur.update(state, loss)
        updates += 1
    exact = state.c_current == 1.0 and updates == 10

    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(1000):
        s = cur.CurriculumState.start(improvement_mode=str(rng.choice(["best", "previous"])))
        prev = s.c_current
        for value in rng.normal(size=int(rng.integers(1, 40))) * 10:
            cur.update(s, value)
            violations += s.c_current < prev or s.c_current > 1.0
            prev = s.c_current
    fast, t = within(clock)
    verdict(4, "curriculum", exact and violations == 0 and fast,
            f"c={state.c_current} after {updates} updates, {violations} decreases in 1000 sequences, {t}")


# 5 ---------------------------------------------------------------------------


def test_criterion_5_schedule():
    ds = generate_synthetic(SyntheticSpec(count=150, seed=5))
    clock = timed(5.0)
    res = train(with_overrides(DESK_PRESET, variant="autojoin", epochs=10), ds, record_applied=True)
    kinds = [k for k, _ in res.applied]
    windows = [kinds[s:s + 15] for s in range(0, len(kinds), 15)]
    bad = sum(sorted(w) != sorted(perturb.BASE_KINDS) for w in windows)
    ri = train(with_overrides(DESK_PRESET, variant="no_random_intensity", epochs=1), ds, record_applied=True)
    levels = {a for _, a in ri.applied}
    fast, t = within(clock)
    ok = len(res.applied) == 1500 and bad == 0 and levels <= set(perturb.SHEN_LEVELS) and fast
    verdict(5, "training schedule", ok,
            f"{len(windows)} windows of 15, {bad} incomplete; no_random_intensity levels {sorted(levels)}, {t}")


# 6 ---------------------------------------------------------------------------


def test_criterion_6_suite_cardinalities():
    generator, _ = model_from_checkpoint(ASSETS / "desk_standard.json")
    clean = generate_synthetic(SyntheticSpec(count=100, seed=6))
    clock = timed(10.0)
    plain = build_suites(clean, seed=0, include_attacks=False)
    fast, t = within(clock)
    start = time.perf_counter()
    full = build_suites(clean, seed=0, generator=generator)
    attack_s = time.perf_counter() - start
    counts = full.counts()
    want = {k: v for k, v in EXPECTED_CASES.items() if k != "clean"}
    got = {k: counts[k] for k in want}
    ok = got == want and plain.counts() == {k: EXPECTED_CASES[k] for k in plain.counts()} and fast
    verdict(6, "suite cardinalities", ok, f"{got}, suites {t} + attack generation {attack_s:.1f}s")


# 7 ---------------------------------------------------------------------------


def test_criterion_7_attack_constraints(monkeypatch):
    model, _ = model_from_checkpoint(ASSETS / "desk_standard.json")
    ds = generate_synthetic(SyntheticSpec(count=100, seed=7))
    x, y = to_batch(ds.images), ds.angles
    iterates = []
    real_project = A.project

    def recording_project(candidate, origin, eps):
        out = real_project(candidate, origin, eps)
        iterates.append((out, eps))
        return out

    monkeypatch.setattr(A, "project", recording_project)

    def violations(adv, eps):
        dev = np.abs(adv.astype(np.float64) - x.astype(np.float64)).max()
        return int(dev > eps) + int(adv.min() < 0.0) + int(adv.max() > 1.0)

    clock = timed(30.0)
    bad, checked, mismatched = 0, 0, 0
    for eps in A.DEFAULT_EPSILONS:
        bad += violations(A.fgsm(model, x, y, eps), eps)
        bad += violations(A.pgd(model, x, y, A.AttackConfig("pgd", eps)), eps)
        one = A.pgd(model, x, y, A.AttackConfig("pgd", eps, pgd_steps=1, pgd_step_size=eps))
        mismatched += not np.array_equal(one, A.fgsm(model, x, y, eps))
    for adv, eps in iterates:
        bad += violations(adv, eps)
        checked += 1
    fast, t = within(clock)
    verdict(7, "attack constraints", bad == 0 and mismatched == 0 and fast,
            f"{checked} projected iterates over 5 eps, {bad} ball/clip violations, "
            f"{mismatched} PGD(1, eps) != FGSM, {t}")


# 8 to 10 -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    first = ex.run_desk_experiment(seed=0, out_dir=out / "run1")
    second = ex.run_desk_experiment(seed=0, out_dir=out / "run2")
    return first, second


def _fmt(checks, *names):
    return "; ".join(checks[n][1] for n in names)


@pytest.mark.slow
def test_criterion_8_desk_reproduction(desk_runs):
    checks = ex.desk_criteria(desk_runs[0])
    names = ("single_margin", "unseen_margin", "clean_tolerance", "budget")
    verdict(8, "AutoJoin vs Standard on the desk preset", all(checks[n][0] for n in names), _fmt(checks, *names))


@pytest.mark.slow
def test_criterion_9_no_dae_ablation(desk_runs):
    checks = ex.desk_criteria(desk_runs[0])
    ok = checks["no_dae_lower"][0] and checks["budget"][0]
    verdict(9, "no_dae below AutoJoin on Single", ok, _fmt(checks, "no_dae_lower", "budget"))


@pytest.mark.slow
def test_criterion_10_determinism(desk_runs):
    a = ex.reported_numbers(desk_runs[0]["repeats"][0])
    b = ex.reported_numbers(desk_runs[1]["repeats"][0])
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = not differing and a.keys() == b.keys()
    verdict(10, "bit-exact rerun", ok, f"{len(a)} reported numbers, {len(differing)} differ {differing[:3]}")
