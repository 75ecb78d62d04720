"""The desk-scale Standard / AutoJoin / no-DAE comparison.

Training runs and suite evaluation are split into independent jobs and fanned
out over worker processes. Every job pins BLAS to one thread, so the numbers
do not depend on how many workers ran them. Job CPU times are recorded so the
wall time of the same job list on a machine with more cores can be projected
(longest-processing-time-first list scheduling).
"""

from __future__ import annotations

import heapq
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import multiprocessing as mp

import numpy as np

from .data import SyntheticSpec, generate_synthetic, split
from .evaluate import EvalReport, _summarise, build_suites, dataset_digest, mean_absolute_error, mean_accuracy
from .models import build_nvidia_desk, preset
from .trainer import DESK_PRESET, train, with_overrides

# Margins for the desk reproduction (repo constants, in MA percentage points).
SINGLE_MARGIN = 5.0
UNSEEN_MARGIN = 3.0
CLEAN_TOLERANCE = 2.0
BUDGET_SECONDS = 600.0
BUDGET_CORES = 4

N_TRAIN = 2000
N_TEST = 500
VARIANTS = ("standard", "autojoin", "no_dae")
EVAL_CATEGORIES = ("clean", "single", "combined", "unseen")
CASES_PER_JOB = 15

_STATE = {}


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(1)
    except ImportError:  # pragma: no cover
        return None


def _init_worker(payload):
    from ._accel import tune_allocator

    tune_allocator()
    _STATE.update(payload)


def _datasets(seed):
    ds = generate_synthetic(SyntheticSpec(count=N_TRAIN + N_TEST, seed=seed))
    return split(ds, N_TRAIN / (N_TRAIN + N_TEST), seed=seed)


def _train_job(variant, rep):
    _limit_threads()
    t0 = time.process_time()
    config = with_overrides(_STATE["config"], variant=variant)
    result = train(config, _STATE["train"])
    model = result.predictor
    return {
        "variant": variant,
        "rep": rep,
        "params": model.state_dict(),
        "history": result.history,
        "cpu": time.process_time() - t0,
    }


def _eval_job(rep, case_ids, params_by_variant):
    _limit_threads()
    t0 = time.process_time()
    suites = _STATE["suites"]
    cases = [c for c in suites.iter_cases(EVAL_CATEGORIES)]
    spec = preset(_STATE["config"].architecture)
    models = {}
    for v, params in params_by_variant.items():
        model = build_nvidia_desk(spec).without_decoder()
        model.load_state_dict(params)
        models[v] = model
    truth = suites.clean.angles
    rows = {v: [] for v in models}
    for i in case_ids:
        frames = suites.render(cases[i])
        for v, model in models.items():
            pred = model.predict_angles(frames, batch_size=250)
            rows[v].append({"index": i, "category": cases[i].category, "name": cases[i].name,
                            "ma": mean_accuracy(pred, truth), "mae": mean_absolute_error(pred, truth)})
    return {"rep": rep, "rows": rows, "cpu": time.process_time() - t0}


def projected_makespan(phases, workers):
    """Wall time of phase-by-phase LPT scheduling of job durations on ``workers``."""
    total = 0.0
    for durations in phases:
        loads = [0.0] * workers
        heapq.heapify(loads)
        for d in sorted(durations, reverse=True):
            heapq.heappush(loads, heapq.heappop(loads) + d)
        total += max(loads) if durations else 0.0
    return total


def _run_jobs(pool, fn, arglist):
    if pool is None:
        return [fn(*args) for args in arglist]
    futures = [pool.submit(fn, *args) for args in arglist]
    return [f.result() for f in futures]


def run_desk_experiment(seed=0, repeats=1, workers=None, variants=VARIANTS, config=None, out_dir=None):
    """Train ``variants`` ``repeats`` times from scratch and score them on the desk suites.

    Returns a dict with per-repeat category scores, training histories, job
    CPU times, the measured wall time and the projected wall time on
    ``BUDGET_CORES`` workers.
    """
    from ._accel import tune_allocator

    wall0 = time.perf_counter()
    tune_allocator()
    workers = workers or os.cpu_count() or 1
    config = with_overrides(config or DESK_PRESET, seed=seed)
    t0 = time.process_time()
    train_ds, test_ds = _datasets(seed)
    suites = build_suites(test_ds, seed=seed, include_attacks=False)
    setup_cpu = time.process_time() - t0
    payload = {"config": config, "train": train_ds, "suites": suites}

    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, mp_context=mp.get_context("fork"),
                                   initializer=_init_worker, initargs=(payload,))
    else:
        _STATE.update(payload)
    try:
        train_out = _run_jobs(pool, _train_job, [(v, r) for r in range(repeats) for v in variants])
        params = {(o["rep"], o["variant"]): o["params"] for o in train_out}
        n_cases = sum(1 for _ in suites.iter_cases(EVAL_CATEGORIES))
        chunks = [list(range(s, min(s + CASES_PER_JOB, n_cases))) for s in range(0, n_cases, CASES_PER_JOB)]
        eval_args = [(r, ch, {v: params[(r, v)] for v in variants}) for r in range(repeats) for ch in chunks]
        eval_out = _run_jobs(pool, _eval_job, eval_args)
    finally:
        if pool is not None:
            pool.shutdown()

    reps = []
    for r in range(repeats):
        rows = {v: [] for v in variants}
        for o in eval_out:
            if o["rep"] == r:
                for v in variants:
                    rows[v].extend(o["rows"][v])
        rep = {}
        for v in variants:
            ordered = sorted(rows[v], key=lambda row: row["index"])
            for row in ordered:
                row.pop("index")
            report = EvalReport(cases=ordered, categories=_summarise(ordered))
            hist = next(o["history"] for o in train_out if o["rep"] == r and o["variant"] == v)
            rep[v] = {
                "categories": report.categories,
                "cases": report.cases,
                "final_loss": hist[-1]["loss"],
                "final_c": hist[-1]["c_next"],
                "model_sha256": _params_digest(params[(r, v)]),
            }
        reps.append(rep)

    train_cpu = [o["cpu"] for o in train_out]
    eval_cpu = [o["cpu"] for o in eval_out]
    result = {
        "seed": seed,
        "config": config.to_dict(),
        "dataset_sha256": dataset_digest(test_ds),
        "n_train": len(train_ds),
        "n_test": len(test_ds),
        "repeats": reps,
        "histories": {f"{o['variant']}#{o['rep']}": o["history"] for o in train_out},
        "timing": {
            "workers": workers,
            "cpu_count": os.cpu_count(),
            "wall_seconds": time.perf_counter() - wall0,
            "setup_cpu": setup_cpu,
            "train_cpu": {f"{o['variant']}#{o['rep']}": o["cpu"] for o in train_out},
            "eval_cpu_total": float(sum(eval_cpu)),
            "projected_wall_seconds": setup_cpu + projected_makespan([train_cpu, eval_cpu], BUDGET_CORES),
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "desk_experiment.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def _params_digest(params):
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    return h.hexdigest()


def reported_numbers(rep):
    """Flat ``{label: value}`` of every number a repeat reports (for bit-exact comparison)."""
    out = {}
    for v, r in rep.items():
        for cat, c in r["categories"].items():
            out[f"{v}.{cat}.ma"] = c["ma"]
            out[f"{v}.{cat}.mae"] = c["mae"]
        for case in r["cases"]:
            out[f"{v}.{case['name']}.ma"] = case["ma"]
            out[f"{v}.{case['name']}.mae"] = case["mae"]
        out[f"{v}.final_loss"] = r["final_loss"]
        out[f"{v}.model_sha256"] = r["model_sha256"]
    return out


def desk_criteria(result):
    """Evaluate the desk claims on the first repeat; returns ``{name: (passed, detail)}``.

    The budget applies to a single-repeat run.
    """
    rep = result["repeats"][0]
    ma = {v: {c: s["ma"] for c, s in r["categories"].items()} for v, r in rep.items()}
    std, aj = ma["standard"], ma["autojoin"]
    checks = {}
    d = aj["single"] - std["single"]
    checks["single_margin"] = (d >= SINGLE_MARGIN, f"AutoJoin {aj['single']:.3f} vs Standard {std['single']:.3f} (+{d:.3f}, need >= {SINGLE_MARGIN})")
    d = aj["unseen"] - std["unseen"]
    checks["unseen_margin"] = (d >= UNSEEN_MARGIN, f"AutoJoin {aj['unseen']:.3f} vs Standard {std['unseen']:.3f} (+{d:.3f}, need >= {UNSEEN_MARGIN})")
    d = aj["clean"] - std["clean"]
    checks["clean_tolerance"] = (d >= -CLEAN_TOLERANCE, f"AutoJoin {aj['clean']:.3f} vs Standard {std['clean']:.3f} ({d:+.3f}, need >= -{CLEAN_TOLERANCE})")
    if "no_dae" in ma:
        nd = ma["no_dae"]["single"]
        checks["no_dae_lower"] = (nd < aj["single"], f"no_dae {nd:.3f} vs AutoJoin {aj['single']:.3f}")
    t = result["timing"]
    measured, projected = t["wall_seconds"], t["projected_wall_seconds"]
    if t["cpu_count"] >= BUDGET_CORES:
        ok = measured <= BUDGET_SECONDS
        detail = f"measured {measured:.1f}s on {t['cpu_count']} cores (budget {BUDGET_SECONDS:.0f}s)"
    else:
        # a run that fits on fewer cores fits on more; otherwise fall back to the projection
        ok = measured <= BUDGET_SECONDS or projected <= BUDGET_SECONDS
        detail = (f"measured {measured:.1f}s on {t['cpu_count']} core(s), projected {projected:.1f}s on "
                  f"{BUDGET_CORES} workers from job CPU times (budget {BUDGET_SECONDS:.0f}s)")
    checks["budget"] = (ok, detail)
    return checks
