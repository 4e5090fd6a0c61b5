"""INI experiment configuration.

Two sections, both optional; keys are the field names of
:class:`~lpokit.synthetic.SyntheticTask` and
:class:`~lpokit.trainer.TrainingConfig`::

    [task]
    dim = 2
    centers = 0,0; 0,0        # one point per condition, ';'-separated
    targets = 1,1; -1,1
    list_size = 4
    corruption = 0.0

    [train]
    seed = 0
    steps = 2000
    loss = lpo
    beta = 0.01

Unknown sections or keys are rejected. ``LPO_SEED`` in the environment
overrides ``train.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from collections.abc import Mapping

from .synthetic import SyntheticTask
from .trainer import TrainingConfig

SEED_ENV = "LPO_SEED"


class ConfigFileError(ValueError):
    pass


def _points(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in p.split(",")) for p in text.split(";") if p.strip())


def _coerce(cls, key: str, raw: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigFileError(f"unknown key '{key}' for {cls.__name__}")
    if key in ("centers", "targets"):
        return _points(raw)
    default = fields[key].default
    if default is dataclasses.MISSING:
        default = fields[key].default_factory()
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigFileError(f"'{key}' must be a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    try:
        return type(default)(raw.strip())
    except ValueError:
        raise ConfigFileError(f"'{key}' must be {type(default).__name__}, got {raw!r}") from None


def build_config(sections: Mapping[str, Mapping[str, str]],
                 env: Mapping[str, str] | None = None) -> tuple[SyntheticTask, TrainingConfig]:
    env = os.environ if env is None else env
    extra = set(sections) - {"task", "train", "DEFAULT"}
    if extra:
        raise ConfigFileError(f"unknown section(s): {sorted(extra)}")
    task_kw = {k: _coerce(SyntheticTask, k, v) for k, v in sections.get("task", {}).items()}
    train_kw = {k: _coerce(TrainingConfig, k, v) for k, v in sections.get("train", {}).items()}
    if env.get(SEED_ENV):
        try:
            train_kw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigFileError(f"{SEED_ENV} must be an integer") from None
    try:
        return SyntheticTask(**task_kw), TrainingConfig(**train_kw)
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from None


def load_config(path=None, env: Mapping[str, str] | None = None) -> tuple[SyntheticTask, TrainingConfig]:
    """Read an INI file; ``path=None`` gives the defaults (plus env override)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive field names (``T``)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigFileError(f"cannot parse {path}: {exc}") from None
    sections = {s: dict(parser.items(s, raw=True)) for s in parser.sections()}
    return build_config(sections, env)


def dump_config(task: SyntheticTask, cfg: TrainingConfig) -> str:
    """Render a config file that :func:`load_config` reads back identically."""
    lines = ["[task]"]
    for f in dataclasses.fields(task):
        v = getattr(task, f.name)
        if f.name in ("centers", "targets"):
            v = "; ".join(",".join(repr(float(c)) for c in p) for p in v)
        lines.append(f"{f.name} = {v}")
    lines += ["", "[train]"]
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"
