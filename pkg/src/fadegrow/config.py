"""Plain-text run configuration.

Config files hold ``key = value`` lines; ``#`` starts a comment.  Values
are merged with precedence command-line flag > file > default, every key
is type-checked, and unknown keys are rejected.  :func:`dump` writes the
resolved configuration in the same format, so a run can be repeated from
its own echo.
"""

from __future__ import annotations

from typing import Any

from . import losses as L
from .errors import ConfigError
from .sampler import SamplerConfig
from .schedule import Schedule
from .train import TrainConfig


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ks(text: str) -> tuple:
    ks = tuple(int(k) for k in text.replace(",", " ").split())
    if not ks:
        raise ValueError("empty list")
    return ks


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


# key -> (parser, default)
KEYS: dict[str, tuple] = {
    "seed": (int, 0),
    "out_dir": (str, "out"),
    "checkpoint_path": (str, ""),
    "data_path": (str, ""),
    "threads": (int, 1),
    "schedule.kind": (str, "geometric"),
    "schedule.beta_min": (float, 1e-3),
    "schedule.beta_max": (float, 10.0),
    "schedule.beta_scale": (float, 0.01),
    "schedule.steps": (int, 20),
    "loss.setting": (str, "pairwise"),
    "loss.n_lambda": (int, 1),
    "loss.adaptive_virtual_item": (_bool, False),
    "loss.include_beta": (_bool, True),
    "model.d": (int, 64),
    "model.n_blocks": (int, 1),
    "model.precision": (int, 64),
    "train.nonpref_prob": (float, 0.1),
    "train.batch_size": (int, 256),
    "train.lr": (float, 1e-3),
    "train.max_epochs": (int, 200),
    "train.patience": (int, 20),
    "train.eval_ks": (_ks, (1, 5, 10, 20)),
    "sampler.w": (float, 0.0),
    "sampler.steps": (_opt_int, None),
    "sampler.trajectories": (int, 1),
    "sampler.top_k": (int, 10),
    "synth.n": (int, 50),
    "synth.count": (int, 3000),
    "synth.noise": (float, 0.0),
}


class RunConfig(dict):
    """Resolved configuration; a ``dict`` from key to typed value."""

    def schedule(self) -> Schedule:
        return Schedule(kind=self["schedule.kind"], beta_min=self["schedule.beta_min"],
                        beta_max=self["schedule.beta_max"], beta_scale=self["schedule.beta_scale"],
                        num_steps=self["schedule.steps"])

    def setting(self) -> L.Setting:
        return L.Setting(self["loss.setting"], n_lambda=self["loss.n_lambda"],
                         adaptive_virtual_item=self["loss.adaptive_virtual_item"])

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(steps=self["sampler.steps"], w=self["sampler.w"],
                             n_trajectories=self["sampler.trajectories"], seed=self["seed"])

    def train(self) -> TrainConfig:
        return TrainConfig(setting=self.setting(), schedule=self.schedule(),
                           nonpref_prob=self["train.nonpref_prob"], batch_size=self["train.batch_size"],
                           lr=self["train.lr"], max_epochs=self["train.max_epochs"],
                           patience=self["train.patience"], seed=self["seed"],
                           eval_ks=self["train.eval_ks"], d=self["model.d"],
                           n_blocks=self["model.n_blocks"], precision=self["model.precision"],
                           include_beta=self["loss.include_beta"], sampler=self.sampler(),
                           threads=self["threads"])


def parse_value(key: str, text: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return KEYS[key][0](text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_text(text: str) -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def resolve(file_text: str | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig({k: d for k, (_, d) in KEYS.items()})
    if file_text:
        cfg.update(parse_text(file_text))
    for k, v in (overrides or {}).items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        cfg[k] = v
    # construct the typed views once so bad combinations fail early
    cfg.train()
    return cfg


def dump(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in KEYS)
