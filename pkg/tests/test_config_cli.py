import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from autojoin import config as C
from autojoin.cli import main
from autojoin.trainer import DESK_PRESET


def run(*args):
    return CliRunner().invoke(main, ["--threads", "1", *map(str, args)], catch_exceptions=False)


def write(path, text):
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# config resolution


def test_defaults_are_the_desk_preset():
    assert C.resolve_train_config(environ={}) == DESK_PRESET


def test_precedence_file_env_cli(tmp_path):
    cfg = write(tmp_path / "c.toml", 'epochs = 4\nlr = 0.01\nvariant = "no_dae"\n[weights]\nrecon = 2.0\n')
    env = {"AUTOJOIN_EPOCHS": "6", "AUTOJOIN_WEIGHTS__REGRESS": "3", "AUTOJOIN_BACKEND": "numpy"}
    out = C.resolve_train_config(cfg, {"epochs": 9, "seed": None}, env)
    assert (out.epochs, out.lr, out.variant) == (9, 0.01, "no_dae")
    assert (out.weights.recon, out.weights.regress) == (2.0, 3.0)
    assert out.seed == DESK_PRESET.seed


def test_paper_preset_selectable(tmp_path):
    out = C.resolve_train_config(write(tmp_path / "p.toml", 'preset = "paper"\n'), environ={})
    assert (out.batch_size, out.lr, out.epochs) == (124, 1e-4, 500)


@pytest.mark.parametrize("body, match", [
    ("lr = 'fast'\n", "key 'lr' expects float"),
    ("epoch = 3\n", "unknown key 'epoch'"),
    ("[weights]\nfoo = 1\n", "unknown key 'weights.foo'"),
    ("preset = 'huge'\n", "unknown preset"),
    ("variant = 'mystery'\n", "variant"),
    ("epochs = [\n", "c.toml"),
])
def test_config_errors_name_file_and_key(tmp_path, body, match):
    path = write(tmp_path / "c.toml", body)
    with pytest.raises(C.ConfigError, match=match):
        C.resolve_train_config(path, environ={})


def test_missing_config_file(tmp_path):
    with pytest.raises(C.ConfigError, match="not found"):
        C.resolve_train_config(tmp_path / "none.toml", environ={})


def test_env_values_parse_as_toml():
    env = {"AUTOJOIN_LR": "0.5", "AUTOJOIN_KINDS": '["noise", "blur"]', "AUTOJOIN_VARIANT": "autojoin",
           "OTHER": "1"}
    assert C.env_overrides(env) == {"lr": 0.5, "kinds": ["noise", "blur"], "variant": "autojoin"}


def test_config_hash_is_order_free():
    assert C.config_hash({"a": 1, "b": [2]}) == C.config_hash({"b": [2], "a": 1})
    assert C.config_hash({"a": 1}) != C.config_hash({"a": 2})


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--out", root / "data", "--count", 40, "--seed", 2).exit_code == 0
    cfg = write(root / "train.toml", "epochs = 2\nbatch_size = 16\n")
    for variant in ("standard", "autojoin"):
        res = run("train", "--config", cfg, "--data", root / "data", "--out", root / variant, "--variant", variant)
        assert res.exit_code == 0, res.output
    res = run("build-suites", "--data", root / "data", "--generator-ckpt", root / "standard" / "model.json",
              "--out", root / "suites", "--pgd-steps", 4)
    assert res.exit_code == 0, res.output
    for variant in ("standard", "autojoin"):
        res = run("eval", "--ckpt", root / variant / "model.json", "--suites", root / "suites",
                  "--out", root / "eval" / variant / "report.json")
        assert res.exit_code == 0, res.output
    return root


def test_pipeline_artifacts(pipeline):
    assert len(list((pipeline / "data").glob("*.png"))) == 40
    log = (pipeline / "autojoin" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 2
    prov = json.loads((pipeline / "autojoin" / "provenance.json").read_text())
    assert {"command", "git_revision", "package_version", "backend", "seed", "config_sha256", "config"} <= set(prov)
    assert prov["config"]["epochs"] == 2 and prov["config"]["variant"] == "autojoin"
    assert prov["config_sha256"] == C.config_hash(prov["config"])
    manifest = json.loads((pipeline / "suites" / "manifest.json").read_text())
    assert manifest["counts"] == {"clean": 1, "single": 75, "combined": 6, "unseen": 35, "fgsm": 5, "pgd": 5}
    csv = (pipeline / "eval" / "autojoin" / "report.csv").read_text().splitlines()
    assert csv[0] == "category,ma,mae,n_cases" and len(csv) == 7


def test_eval_twice_is_byte_identical(pipeline):
    first = (pipeline / "eval" / "standard" / "report.json").read_bytes()
    res = run("eval", "--ckpt", pipeline / "standard" / "model.json", "--suites", pipeline / "suites",
              "--out", pipeline / "again" / "report.json")
    assert res.exit_code == 0
    assert (pipeline / "again" / "report.json").read_bytes() == first
    assert (pipeline / "again" / "report.csv").read_bytes() == (pipeline / "eval" / "standard" / "report.csv").read_bytes()


def test_report_table(pipeline):
    out = pipeline / "table.csv"
    res = run("report", "--runs", pipeline / "eval" / "standard", "--runs", pipeline / "eval" / "autojoin",
              "--out", out)
    assert res.exit_code == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("run,clean_ma,clean_mae,single_ma")
    assert [r.split(",")[0] for r in rows[1:]] == ["standard", "autojoin"]


def test_attack_command(pipeline):
    res = run("attack", "--ckpt", pipeline / "standard" / "model.json", "--data", pipeline / "data",
              "--method", "pgd", "--eps", "0.01,0.05", "--pgd-steps", 4, "--out", pipeline / "adv")
    assert res.exit_code == 0, res.output
    manifest = json.loads((pipeline / "adv" / "manifest.json").read_text())
    assert [c["eps"] for c in manifest["cases"]] == [0.01, 0.05]
    assert all((pipeline / "adv" / c["dir"] / "labels.csv").exists() for c in manifest["cases"])


def test_errors_are_one_line_and_exit_1(pipeline, tmp_path):
    res = CliRunner().invoke(main, ["eval", "--ckpt", str(tmp_path / "none.json"), "--suites",
                                    str(pipeline / "suites"), "--out", str(tmp_path / "r.json")])
    assert res.exit_code == 1
    assert res.output.strip().splitlines()[-1].startswith("error: CheckpointError: checkpoint not found")
    bad = write(tmp_path / "bad.toml", "lr = 'x'\n")
    res = CliRunner().invoke(main, ["train", "--config", str(bad), "--data", str(pipeline / "data"),
                                    "--out", str(tmp_path / "o")])
    assert res.exit_code == 1 and "bad.toml: key 'lr'" in res.output


def test_entry_point_exit_codes():
    ok = subprocess.run([sys.executable, "-m", "autojoin.cli", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "gen-data" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "autojoin.cli", "train", "--bogus"], capture_output=True, text=True)
    assert bad.returncode == 2 and "--bogus" in bad.stderr
