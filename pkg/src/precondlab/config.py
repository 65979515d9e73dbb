"""Line-oriented key=value experiment configs.

One ``key = value`` pair per line, ``#`` starts a comment, lists are
comma-separated.  Unknown keys are an error (no silent typos), and so are
duplicates; errors carry the key name and line number.  Every command
resolves its config against a full default table and writes the resolved
result next to its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

__all__ = ["ConfigError", "Key", "load_config", "resolve", "format_config", "COMMAND_KEYS"]


class ConfigError(ValueError):
    """Bad config content; message carries key and line number where known."""


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _str(text: str) -> str:
    return text


def _int_list(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    return tuple(int(part.strip()) for part in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(part.strip()) for part in text.split(","))


_MODEL_KEYS = [
    Key("dim", _int, 100),
    Key("lambda_min", _float, 1e-2),
    Key("lambda_max", _float, 1e2),
    Key("model_seed", _int, 7),
    Key("sigma", _float, 0.1),
    Key("batch", _int, 1),
]

_RUN_KEYS = [
    Key("iters", _int, 3000),
    Key("record_every", _int, 30),
    Key("init_std", _float, 1e-2),
    Key("n_seeds", _int, 30),
    Key("seed_base", _int, 0),
    Key("seeds", _int_list, ()),
    Key("alpha_bar", _float, 0.0),  # <= 0 means auto
    Key("jobs", _int, 1),
    Key("out_dir", _str, ""),
]

_DEFLATE_KEYS = [
    Key("deflate_mode", _str, "none"),
    Key("deflate_s", _int, 5),
    Key("deflate_v", _float, 0.0),
]

COMMAND_KEYS: dict[str, list[Key]] = {
    "quad-sweep": _MODEL_KEYS
    + _RUN_KEYS
    + [
        Key("sweep_s_list", _int_list, (1, 5, 10, 25, 50)),
        Key("sweep_v_list", _float_list, (1.0, 2.0, 3.0, 5.0, 10.0)),
        Key("common_s", _int, 20),
    ],
    "bounds": [Key("dim", _int, 20)]
    + [k for k in _MODEL_KEYS if k.name != "dim"]
    + [k for k in _RUN_KEYS if k.name != "iters"]
    + [Key("iters", _int, 2000)]
    + _DEFLATE_KEYS
    + [
        Key("schedule", _str, "fixed"),
        Key("beta", _float, 0.0),  # <= 0 means auto
        Key("gamma", _float, 0.0),  # <= 0 means auto
    ],
    # milder default spectrum: the admissible local rate scales with
    # r^2/(l_hat K), which degenerates at condition number 1e4
    "basin": [Key("dim", _int, 10), Key("lambda_min", _float, 1.0), Key("lambda_max", _float, 10.0), Key("sigma", _float, 0.05)]
    + [k for k in _MODEL_KEYS if k.name not in ("dim", "lambda_min", "lambda_max", "sigma")]
    + [k for k in _RUN_KEYS if k.name not in ("iters", "n_seeds")]
    + [
        Key("iters", _int, 1500),  # cap on the finite horizon standing in for tau = infinity
        Key("n_seeds", _int, 500),
        Key("basin_r", _float_list, ()),  # absolute radii; empty means use the factor grid
        Key("basin_r_factors", _float_list, (0.5, 1.0, 2.0)),
        Key("basin_alpha_factors", _float_list, (0.5,)),
    ]
    + _DEFLATE_KEYS,
    "franke": [
        Key("phase1_epochs", _int, 500),
        Key("phase2_epochs", _int, 1000),
        Key("n_points", _int, 256),
        Key("noise_var", _float, 1e-4),
        Key("hidden_dims", _int_list, (50, 50)),
        Key("activation", _str, "relu"),
        Key("cg_iters", _int, 5),
        Key("cg_damping", _float, 1e-3),
        Key("phase1_lr", _float, 1e-3),
        Key("lr_sgd", _float, 0.05),
        Key("lr_momentum", _float, 0.02),
        Key("lr_adam", _float, 1e-3),
        Key("lr_lbfgs", _float, 0.05),
        Key("lr_cg_hessian", _float, 0.1),
        Key("lr_cg_ggn", _float, 0.1),
        Key("n_seeds", _int, 5),
        Key("seed_base", _int, 42),
        Key("seeds", _int_list, ()),
        Key("jobs", _int, 1),
        Key("out_dir", _str, ""),
    ],
}


def load_config(path: str | Path, command: str) -> dict[str, Any]:
    """Parse and resolve a config file for the given command."""
    schema = {k.name: k for k in COMMAND_KEYS[command]}
    raw: dict[str, Any] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        name, _, value = stripped.partition("=")
        name = name.strip()
        value = value.strip()
        if name not in schema:
            raise ConfigError(f"line {lineno}: unknown key {name!r}")
        if name in raw:
            raise ConfigError(f"line {lineno}: duplicate key {name!r}")
        try:
            raw[name] = schema[name].parse(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for key {name!r}: {exc}") from exc
    return resolve(raw, command)


def resolve(overrides: dict[str, Any], command: str) -> dict[str, Any]:
    """Defaults for the command merged with explicit overrides."""
    schema = COMMAND_KEYS[command]
    known = {k.name for k in schema}
    for name in overrides:
        if name not in known:
            raise ConfigError(f"unknown key {name!r} for command {command!r}")
    cfg = {k.name: k.default for k in schema}
    cfg.update(overrides)
    return cfg


def format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def format_config(cfg: dict[str, Any]) -> str:
    """Fully-resolved config as sorted key = value lines."""
    lines = [f"{name} = {format_value(cfg[name])}" for name in sorted(cfg)]
    return "\n".join(lines) + "\n"
