"""Flat ``key = value`` configuration files.

Lines are ``section.key = value``; ``#`` starts a comment. A line
``include = other.cfg`` pulls in another file (relative to the including
file) whose values the including file may then override. Every key must
appear in :data:`DEFAULTS`; values are coerced to the default's type.
"""
from __future__ import annotations

from pathlib import Path

__all__ = ["DEFAULTS", "ConfigError", "Config", "load_config", "parse_value", "format_config"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": 0,
    # knowledge graph
    "kg.dir": "",
    "kg.train_frac": 0.8,
    "kg.valid_frac": 0.1,
    # KGE
    "kge.model": "transe",
    "kge.dim": 16,
    "kge.learning_rate": 0.01,
    "kge.margin": 2.0,
    "kge.margin_norm": 2,
    "kge.score_norm": 1,
    "kge.epochs": 300,
    "kge.batch_size": 64,
    "kge.negatives_per_positive": 1,
    "kge.training_mode": "slcwa",
    "kge.respect_constraints": True,
    "kge.filtered": True,
    "kge.n_seeds": 10,
    # molecule corpus ("" = bundled corpus)
    "corpus.path": "",
    "corpus.limit": 0,
    # diffusion (desk-scale profile; the estimator default is T = 1000)
    "diffusion.T": 200,
    "diffusion.hidden": 64,
    "diffusion.layers": 3,
    "diffusion.steps": 2000,
    "diffusion.batch_size": 64,
    "diffusion.learning_rate": 0.001,
    "diffusion.weighting": "sigma2",
    "diffusion.checkpoint_every": 500,
    "diffusion.prior_scale": 1.0,
    # property inference network
    "pin.hidden": 64,
    "pin.layers": 3,
    "pin.steps": 2000,
    "pin.batch_size": 32,
    "pin.learning_rate": 0.001,
    "pin.alpha": 1.0,
    "pin.n_molecules": 200,
    # guidance: entity label or pattern such as "_,targets,protein1_0"
    "guidance.context": "",
    "guidance.scale": 0.2,
    "guidance.composite": False,
    # generation
    "generate.n": 1000,
    "generate.n_atoms": 0,
    # fine-tuning
    "finetune.profile": "unconditional",
    "finetune.iterations": 200,
    "finetune.batch_size": 64,
    "finetune.lr": 1e-5,
    "finetune.stride": 10,
    "finetune.estimator": "modified",
    "finetune.baseline": "running",
    "finetune.patience": 50,
    "finetune.checkpoint_every": 50,
    "finetune.max_grad_norm": 0.0,
}


def parse_value(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


class Config(dict):
    """Mapping of every known key to its effective value."""

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.items() if k.startswith(prefix)}


def _read(path: Path, seen: set, out: dict) -> None:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"include cycle through {path}")
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    seen = seen | {path}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "include":
            _read(path.parent / value, seen, out)
            continue
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = parse_value(key, value)


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the file (and its includes), then ``overrides``."""
    values = dict(DEFAULTS)
    if path:
        _read(Path(path), set(), values)
    for k, v in (overrides or {}).items():
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = parse_value(k, str(v)) if isinstance(v, str) else v
    return Config(values)


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in cfg.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
