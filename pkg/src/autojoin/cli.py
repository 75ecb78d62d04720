"""Command-line entry point: ``autojoin <command> ...``.

Failures print one line ``error: <ErrorClass>: <message>`` to stderr and
exit with status 1; usage errors exit with status 2.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from pathlib import Path

import click

from . import config as cfgmod
from .config import ConfigError

SPLIT_FRACTION = 0.8
SPLIT_SEED = 0


class CheckpointError(FileNotFoundError):
    """A checkpoint path does not exist or cannot be parsed."""


def _set_threads(n):
    n = max(1, int(n))
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(n)
    except ImportError:
        pass


def _fail(exc):
    msg = " ".join(str(exc).split())
    click.echo(f"error: {type(exc).__name__}: {msg}", err=True)
    sys.exit(1)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
            _fail(exc)


def _load_ckpt(path):
    from .models import model_from_checkpoint

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        return model_from_checkpoint(path)
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def _split(data_dir):
    from .data import load_dataset, split

    return split(load_dataset(data_dir), SPLIT_FRACTION, seed=SPLIT_SEED)


@click.group(cls=_Group)
@click.option("--threads", type=int, default=os.cpu_count() or 1, show_default=True,
              help="Worker threads for numba kernels and BLAS.")
@click.option("-v", "--verbose", is_flag=True, help="Log per-epoch progress.")
def main(threads, verbose):
    """Gradient-free robust steering regression workbench."""
    import logging

    from ._accel import tune_allocator

    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    _set_threads(threads)
    tune_allocator()


@main.command("gen-data")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), default=None,
              help="TOML file with SyntheticSpec fields.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=int, default=None)
@click.option("--seed", type=int, default=None)
def gen_data(spec_path, out, count, seed):
    """Render a procedural driving dataset to PNGs plus labels.csv."""
    from dataclasses import asdict

    from .data import generate_synthetic, save_dataset

    spec = cfgmod.resolve_synthetic_spec(spec_path, {"count": count, "seed": seed})
    ds = generate_synthetic(spec)
    save_dataset(ds, out)
    cfgmod.write_provenance(out, "gen-data", asdict(spec), spec.seed)
    click.echo(f"wrote {len(ds)} frames to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="TOML training config; omitted keys come from the preset.")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--variant", default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train(config_path, data_dir, out, variant, epochs, seed):
    """Train one variant on the training split and write model.json."""
    from .trainer import save_model, train as run_train

    config = cfgmod.resolve_train_config(config_path, {"variant": variant, "epochs": epochs, "seed": seed})
    train_ds, _ = _split(data_dir)
    result = run_train(config, train_ds, out_dir=out)
    save_model(result.model, Path(out) / "model.json", config)
    cfgmod.write_provenance(out, "train", config.to_dict(), config.seed)
    last = result.history[-1]
    click.echo(f"trained {config.variant} for {config.epochs} epochs; final loss {last['loss']:.5f}")


@main.command("build-suites")
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--generator-ckpt", type=click.Path(dir_okay=False), default=None,
              help="Clean-trained model used to craft FGSM/PGD frames.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--pgd-steps", type=int, default=10, show_default=True)
@click.option("--pgd-step-size", type=float, default=None, help="Defaults to eps / 4.")
@click.option("--no-attacks", is_flag=True, help="Skip the FGSM/PGD categories.")
@click.option("--materialize", is_flag=True, help="Also write every rendered case as PNGs.")
def build_suites(data_dir, generator_ckpt, out, seed, pgd_steps, pgd_step_size, no_attacks, materialize):
    """Build the evaluation suites over the test split."""
    from .evaluate import build_suites as build, save_suites

    _, test_ds = _split(data_dir)
    generator = None
    if not no_attacks:
        if generator_ckpt is None:
            raise click.UsageError("--generator-ckpt is required unless --no-attacks is given")
        generator, _ = _load_ckpt(generator_ckpt)
    suites = build(test_ds, seed=seed, generator=generator, include_attacks=not no_attacks,
                   pgd_steps=pgd_steps, pgd_step_size=pgd_step_size)
    doc = save_suites(suites, out, materialize=materialize)
    resolved = {"data": str(data_dir), "generator_ckpt": generator_ckpt, "seed": seed,
                "pgd_steps": pgd_steps, "pgd_step_size": pgd_step_size, "attacks": not no_attacks}
    cfgmod.write_provenance(out, "build-suites", resolved, seed)
    click.echo("suite counts: " + ", ".join(f"{k}={v}" for k, v in doc["counts"].items()))


def _eps_list(ctx, param, value):
    try:
        eps = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"not a comma-separated list of numbers: {value!r}") from None
    if not eps or any(e < 0 for e in eps):
        raise click.BadParameter("need at least one non-negative epsilon")
    return eps


@main.command()
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--method", type=click.Choice(["fgsm", "pgd"]), required=True)
@click.option("--eps", default="0.01,0.025,0.05,0.075,0.1", callback=_eps_list, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--pgd-steps", type=int, default=10, show_default=True)
@click.option("--pgd-step-size", type=float, default=None, help="Defaults to eps / 4.")
@click.option("--seed", type=int, default=0, show_default=True)
def attack(ckpt, data_dir, method, eps, out, pgd_steps, pgd_step_size, seed):
    """Craft adversarial frames for the test split, one PNG directory per epsilon."""
    from .attacks import AttackConfig, run_attack
    from .data import Dataset, save_dataset
    from .evaluate import quantize_toward
    from .models import to_batch

    model, _ = _load_ckpt(ckpt)
    _, test_ds = _split(data_dir)
    x = to_batch(test_ds.images)
    out = Path(out)
    entries = []
    for e in eps:
        cfg = AttackConfig(method=method, eps=e, pgd_steps=pgd_steps, pgd_step_size=pgd_step_size, seed=seed)
        adv = quantize_toward(run_attack(model, x, test_ds.angles, cfg), test_ds.images)
        rel = f"{method}_{e:g}"
        save_dataset(Dataset(adv, test_ds.angles, test_ds.names), out / rel)
        entries.append({"method": method, "eps": e, "dir": rel, "step_size": cfg.step_size if method == "pgd" else None})
    manifest = {"ckpt": str(ckpt), "model_sha256": model.checksum(), "cases": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    cfgmod.write_provenance(out, "attack", {"ckpt": str(ckpt), "method": method, "eps": eps,
                                            "pgd_steps": pgd_steps, "pgd_step_size": pgd_step_size}, seed)
    click.echo(f"wrote {len(entries)} {method} cases to {out}")


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--suites", "suites_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Report JSON path; a CSV summary is written next to it.")
def eval_cmd(ckpt, suites_dir, out):
    """Score a checkpoint on a suite directory (JSON + CSV report)."""
    from .evaluate import evaluate, load_suites

    model, meta = _load_ckpt(ckpt)
    suites = load_suites(suites_dir)
    report = evaluate(model.without_decoder() if model.has_decoder else model, suites)
    report.meta.pop("created", None)  # keeps repeated evaluations byte-identical
    report.meta["ckpt"] = str(ckpt)
    report.meta["variant"] = meta.get("train_config", {}).get("variant", Path(ckpt).stem)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_json(out)
    report.write_csv(out.with_suffix(".csv"))
    cfgmod.write_provenance(out.parent, "eval", {"ckpt": str(ckpt), "suites": str(suites_dir)},
                            suites.seed)
    click.echo(report.csv_text(), nl=False)


def _find_report(path):
    path = Path(path)
    if path.is_file():
        return path
    hits = sorted(path.glob("*.json"))
    hits = [h for h in hits if h.name not in ("provenance.json", "model.json", "manifest.json")]
    if not hits:
        raise FileNotFoundError(f"no evaluation report found in {path}")
    return hits[0]


REPORT_COLUMNS = ("clean", "single", "combined", "unseen", "fgsm", "pgd")


def report_table(reports):
    """One row per run; MA and MAE for every category, as in a results table."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["run"]
    for cat in REPORT_COLUMNS:
        header += [f"{cat}_ma", f"{cat}_mae"]
    writer.writerow(header)
    for name, doc in reports:
        row = [name]
        for cat in REPORT_COLUMNS:
            c = doc["categories"].get(cat)
            row += [f"{c['ma']:.2f}", f"{c['mae']:.2f}"] if c else ["", ""]
        writer.writerow(row)
    return buf.getvalue()


@main.command()
@click.option("--runs", required=True, multiple=True, type=click.Path(exists=True),
              help="Report JSON files or directories holding one; repeat for each run.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def report(runs, out):
    """Comparison table across evaluated runs (CSV)."""
    reports = []
    for run in runs:
        path = _find_report(run)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a JSON report ({exc})") from None
        if "categories" not in doc:
            raise ValueError(f"{path}: missing 'categories'")
        reports.append((doc.get("meta", {}).get("variant", path.parent.name), doc))
    text = report_table(reports)
    if out:
        Path(out).write_text(text)
        cfgmod.write_provenance(Path(out).parent, "report", {"runs": list(runs)}, None)
    click.echo(text, nl=False)


if __name__ == "__main__":
    main()
