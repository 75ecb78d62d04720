"""TOML configuration with ``AUTOJOIN_*`` environment overrides.

Precedence, lowest first: preset, config file, environment, CLI flags.
Nested keys use a double underscore in the environment, e.g.
``AUTOJOIN_WEIGHTS__RECON=10``.
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .data import SyntheticSpec
from .trainer import DESK_PRESET, PAPER_PRESET, TrainConfig

ENV_PREFIX = "AUTOJOIN_"
# variables that select behaviour elsewhere and are not config keys
_RESERVED_ENV = {"AUTOJOIN_BACKEND", "AUTOJOIN_NO_MALLOPT"}

TRAIN_PRESETS = {"desk": DESK_PRESET, "paper": PAPER_PRESET}


class ConfigError(ValueError):
    """A config file, key or value could not be used."""


def read_toml(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_env_value(raw):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX) or key in _RESERVED_ENV:
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_env_value(raw)
    return out


def merge(base, extra):
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def _check_type(source, key, default, value):
    if isinstance(default, bool) or isinstance(value, bool):
        ok = isinstance(default, bool) == isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, dict):
        ok = isinstance(value, (dict, list))
        if isinstance(value, dict):
            for sub, v in value.items():
                if sub not in default:
                    raise ConfigError(f"{source}: unknown key '{key}.{sub}'")
                if v is not None and not isinstance(v, (int, float)):
                    raise ConfigError(f"{source}: key '{key}.{sub}' must be a number, got {v!r}")
    else:  # optional fields such as kinds
        ok = True
    if not ok:
        raise ConfigError(f"{source}: key '{key}' expects {type(default).__name__}, got {value!r}")


def resolve_train_config(path=None, cli=None, environ=None):
    """Build a validated :class:`TrainConfig` from preset + file + env + CLI values."""
    doc = read_toml(path) if path else {}
    source = str(path) if path else "<defaults>"
    layered = merge(merge(doc, env_overrides(environ)), {k: v for k, v in (cli or {}).items() if v is not None})
    preset_name = layered.pop("preset", "desk")
    if preset_name not in TRAIN_PRESETS:
        raise ConfigError(f"{source}: key 'preset': unknown preset {preset_name!r}")
    base = TRAIN_PRESETS[preset_name].to_dict()
    unknown = sorted(set(layered) - set(base))
    if unknown:
        raise ConfigError(f"{source}: unknown key '{unknown[0]}'")
    for key, value in layered.items():
        _check_type(source, key, base[key], value)
    resolved = merge(base, layered)
    try:
        config = TrainConfig.from_dict(resolved)
        config.validate()
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return config


def resolve_synthetic_spec(path=None, cli=None, environ=None):
    doc = read_toml(path) if path else {}
    source = str(path) if path else "<defaults>"
    env = {k: v for k, v in env_overrides(environ).items() if k in SyntheticSpec.__dataclass_fields__}
    layered = merge(merge(doc, env), {k: v for k, v in (cli or {}).items() if v is not None})
    try:
        spec = SyntheticSpec.from_dict(layered)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return spec


def config_hash(doc):
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def git_revision():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_provenance(out_dir, command, resolved, seed):
    """Record what is needed to reproduce an artifact directory."""
    from .kernels import BACKEND

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "git_revision": git_revision(),
        "package_version": __version__,
        "backend": BACKEND,
        "seed": seed,
        "config_sha256": config_hash(resolved),
        "config": resolved,
    }
    (out_dir / "provenance.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str))
    return doc
