"""Flat key = value run configuration: parsing, environment overrides, validation.

Config files hold one ``key = value`` per line; ``#`` starts a comment and
blank lines are ignored. Unknown keys are rejected by name. Any key can be
overridden through the environment as ``CSFL_<KEY_IN_UPPER_CASE>``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .fl import MASK_DERIVED, MASK_SENT, MODE_CS, MODE_VANILLA, ExperimentConfig
from .nn import Architecture, Hyperparams

ENV_PREFIX = "CSFL_"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_hidden(s: str) -> tuple[int, ...]:
    # "x" works as a separator too so sweep values (comma-split) can carry widths
    parts = [p.strip() for p in s.replace("x", ",").split(",") if p.strip()]
    if not parts:
        raise ValueError("expected layer widths like 160,128 or 160x128")
    return tuple(int(p) for p in parts)


def _parse_str(options: tuple[str, ...]):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


# key -> (parser, default); None default means optional
_SCHEMA: dict[str, tuple[object, object]] = {
    "mode": (_parse_str((MODE_CS, MODE_VANILLA)), MODE_CS),
    "seed": (int, 0),
    "rounds": (int, 50),
    "n_clients": (int, 20),
    "clients_per_round": (int, 10),
    "server_sparsity": (float, 0.5),
    "aggregation_ratio": (float, 1.5),
    "allow_ratio_outside_bound": (_parse_bool, False),
    "input_dim": (int, 16),
    "hidden": (_parse_hidden, (160, 128)),
    "output_classes": (int, 3),
    "optimizer": (_parse_str(("sgd", "adam")), "adam"),
    "learning_rate": (float, 0.01),
    "batch_size": (int, 4),
    "local_epochs": (int, 10),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_epsilon": (float, 1e-7),
    "dataset": (_parse_str(("synthetic", "csv")), "synthetic"),
    "samples_per_class": (int, 200),
    "separation": (float, 3.0),
    "train_fraction": (float, 0.8),
    "csv_path": (str, None),
    "label_column": (str, "label"),
    "partition_alpha": (float, 0.5),
    "min_per_client": (int, 10),
    "output": (str, "metrics.csv"),
    "metrics_format": (_parse_str(("csv", "json")), "csv"),
    "ledger_mode": (_parse_str((MASK_DERIVED, MASK_SENT)), MASK_DERIVED),
    "eval_every": (int, 1),
    "plots": (_parse_bool, True),
}


@dataclass
class RunConfig:
    experiment: ExperimentConfig
    dataset: str
    samples_per_class: int
    separation: float
    train_fraction: float
    csv_path: str | None
    label_column: str
    output: str
    metrics_format: str
    ledger_mode: str
    eval_every: int
    plots: bool


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line.split()[0], f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in pairs:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        pairs[key] = value
    return pairs


def parse_values(pairs: dict[str, str], apply_env: bool = True) -> dict[str, object]:
    """Typed config values from raw strings, with defaults and env overrides."""
    for key in pairs:
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown configuration key")
    values: dict[str, object] = {}
    for key, (parser, default) in _SCHEMA.items():
        raw = pairs.get(key)
        if apply_env:
            env = os.environ.get(ENV_PREFIX + key.upper())
            if env is not None:
                raw = env
        if raw is None:
            values[key] = default
            continue
        try:
            values[key] = parser(raw)  # type: ignore[operator]
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return values


def build_run_config(values: dict[str, object]) -> RunConfig:
    """Assemble and structurally validate a RunConfig; raises ConfigError."""
    try:
        arch = Architecture(
            input_dim=values["input_dim"],
            hidden=values["hidden"],
            output_classes=values["output_classes"],
        )
    except ValueError as exc:
        raise ConfigError("input_dim/hidden/output_classes", str(exc)) from None
    try:
        hp = Hyperparams(
            optimizer=values["optimizer"],
            learning_rate=values["learning_rate"],
            batch_size=values["batch_size"],
            local_epochs=values["local_epochs"],
            adam_beta1=values["adam_beta1"],
            adam_beta2=values["adam_beta2"],
            adam_epsilon=values["adam_epsilon"],
        )
    except ValueError as exc:
        key = "learning_rate" if "learning_rate" in str(exc) else "optimizer/batch_size/local_epochs"
        raise ConfigError(key, str(exc)) from None
    experiment = ExperimentConfig(
        arch=arch,
        hp=hp,
        n_clients=values["n_clients"],
        clients_per_round=values["clients_per_round"],
        rounds=values["rounds"],
        server_sparsity=values["server_sparsity"],
        aggregation_ratio=values["aggregation_ratio"],
        seed=values["seed"],
        partition_alpha=values["partition_alpha"],
        min_per_client=values["min_per_client"],
        mode=values["mode"],
        allow_ratio_outside_bound=values["allow_ratio_outside_bound"],
    )
    cfg = RunConfig(
        experiment=experiment,
        dataset=values["dataset"],
        samples_per_class=values["samples_per_class"],
        separation=values["separation"],
        train_fraction=values["train_fraction"],
        csv_path=values["csv_path"],
        label_column=values["label_column"],
        output=values["output"],
        metrics_format=values["metrics_format"],
        ledger_mode=values["ledger_mode"],
        eval_every=values["eval_every"],
        plots=values["plots"],
    )
    _structural_check(cfg)
    return cfg


def _structural_check(cfg: RunConfig) -> None:
    try:
        cfg.experiment.check()  # warnings handled by the caller
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k in _SCHEMA if k in msg), "config")
        raise ConfigError(key, msg) from None
    if cfg.dataset == "csv" and not cfg.csv_path:
        raise ConfigError("csv_path", "required when dataset = csv")
    if cfg.dataset == "synthetic" and cfg.samples_per_class < 1:
        raise ConfigError("samples_per_class", "must be positive")
    if not 0.0 < cfg.train_fraction < 1.0:
        raise ConfigError("train_fraction", f"must be in (0, 1), got {cfg.train_fraction}")
    if cfg.separation < 0.0:
        raise ConfigError("separation", "must be nonnegative")
    if cfg.eval_every < 1:
        raise ConfigError("eval_every", "must be >= 1")


def load_values(path: str | Path, apply_env: bool = True) -> dict[str, object]:
    """Typed config values from a file, before RunConfig assembly."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_values(_read_pairs(path), apply_env=apply_env)


def load_config(path: str | Path, apply_env: bool = True) -> RunConfig:
    """Parse, override from the environment, and validate a config file."""
    return build_run_config(load_values(path, apply_env=apply_env))


def config_warnings(cfg: RunConfig) -> list[str]:
    return cfg.experiment.check()


def override_value(values: dict[str, object], key: str, raw: str) -> dict[str, object]:
    """Typed single-key override (used by parameter sweeps)."""
    if key not in _SCHEMA:
        raise ConfigError(key, "unknown configuration key")
    parser, _ = _SCHEMA[key]
    try:
        out = dict(values)
        out[key] = parser(raw)  # type: ignore[operator]
        return out
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
