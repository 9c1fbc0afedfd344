"""Run configuration loaded from a TOML file.

Example::

    scale = "MADRS"
    manifest = "manifest.csv"        # relative paths resolve against this file
    functionals = "functionals.csv"  # only needed for egemaps models
    cache_dir = "cache"
    out_dir = "runs"
    feature_kind = "spectrogram"     # or "egemaps"
    model_kind = "spec_cnn_lstm"     # spec_cnn, spec_cnn_lstm, egemaps_cnn, egemaps_cnn_lstm
    task = "classify"                # or "regress"
    drop_last = false
    voting = "soft"                  # or "hard"
    combination = "mean_prob"        # "count_threshold:K" or "auto" (chosen on val)

    [model]
    use_batchnorm = false
    dropout_rate = 0.0
    n_features = 88

    [train]
    seed = 0
    batch_size = 32
    max_epochs = 100
    alpha = 0.0005
    beta1 = 0.9
    beta2 = 0.999
    epsilon = 1e-8
    l2_lambda = 1e-4
    n_search_trials = 4
    class_weights = false
    stop_at_perfect = true

The environment variable ``ITEMVOICE_SEED`` overrides ``train.seed``.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .autodiff import AdamConfig
from .corpus import ScaleDefinition, get_scale
from .errors import ConfigError
from .models import KINDS, TASKS, ModelSpec
from .pipeline import FEATURE_KINDS
from .training import TrainConfig
from .voting import CombinationRule

SEED_ENV = "ITEMVOICE_SEED"

_TOP_KEYS = {
    "scale", "manifest", "functionals", "cache_dir", "out_dir", "feature_kind", "model_kind",
    "task", "drop_last", "voting", "combination", "model", "train",
}
_MODEL_KEYS = {"use_batchnorm", "dropout_rate", "n_features", "hidden_size", "encoder_hidden"}
_TRAIN_KEYS = {
    "seed", "batch_size", "max_epochs", "alpha", "beta1", "beta2", "epsilon", "l2_lambda",
    "n_search_trials", "class_weights", "stop_at_perfect",
}
_ADAM_KEYS = {"alpha", "beta1", "beta2", "epsilon", "l2_lambda"}


@dataclass(frozen=True)
class RunConfig:
    scale: ScaleDefinition
    manifest: Path
    out_dir: Path
    functionals: Path | None = None
    cache_dir: Path | None = None
    feature_kind: str = "spectrogram"
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = TrainConfig()
    drop_last: bool = False
    voting: str = "soft"
    combination: str = "mean_prob"

    def combination_rule(self) -> CombinationRule | None:
        """None means "select on the validation split"."""
        return None if self.combination == "auto" else CombinationRule.parse(self.combination)

    def checkpoint_dir(self) -> Path:
        return self.out_dir / "checkpoints"

    def log_dir(self) -> Path:
        return self.out_dir / "logs"


def _unknown(section: str, got: dict, allowed: set[str]) -> None:
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def parse_config(data: dict, base_dir: Path, env: dict | None = None) -> RunConfig:
    env = os.environ if env is None else env
    _unknown("config", data, _TOP_KEYS)
    model_tbl = data.get("model", {})
    train_tbl = dict(data.get("train", {}))
    _unknown("[model]", model_tbl, _MODEL_KEYS)
    _unknown("[train]", train_tbl, _TRAIN_KEYS)

    def path(key: str, required: bool = False) -> Path | None:
        value = data.get(key)
        if value is None:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return None
        p = Path(value)
        return p if p.is_absolute() else (base_dir / p)

    try:
        scale = get_scale(data.get("scale", "MADRS"))
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    feature_kind = data.get("feature_kind", "spectrogram")
    if feature_kind not in FEATURE_KINDS:
        raise ConfigError(f"feature_kind must be one of {FEATURE_KINDS}, got {feature_kind!r}")
    default_kind = "spec_cnn_lstm" if feature_kind == "spectrogram" else "egemaps_cnn_lstm"
    kind = data.get("model_kind", default_kind)
    if kind not in KINDS:
        raise ConfigError(f"model_kind must be one of {KINDS}, got {kind!r}")
    if kind.startswith("spec") != (feature_kind == "spectrogram"):
        raise ConfigError(f"model_kind {kind!r} does not take {feature_kind} features")
    task = data.get("task", "classify")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")

    if SEED_ENV in env:
        try:
            train_tbl["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    try:
        model = ModelSpec(kind=kind, task=task, **model_tbl)
        adam = AdamConfig(**{k: v for k, v in train_tbl.items() if k in _ADAM_KEYS})
        train = TrainConfig(adam=adam, voting=data.get("voting", "soft"),
                            **{k: v for k, v in train_tbl.items() if k not in _ADAM_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    combination = data.get("combination", "mean_prob")
    if combination != "auto":
        try:
            CombinationRule.parse(combination)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    cfg = RunConfig(
        scale=scale,
        manifest=path("manifest", required=True),
        out_dir=path("out_dir") or base_dir / "runs",
        functionals=path("functionals"),
        cache_dir=path("cache_dir"),
        feature_kind=feature_kind,
        model=model,
        train=train,
        drop_last=bool(data.get("drop_last", False)),
        voting=train.voting,
        combination=combination,
    )
    if not cfg.manifest.exists():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    if feature_kind == "egemaps" and (cfg.functionals is None or not cfg.functionals.exists()):
        raise ConfigError("egemaps models need an existing 'functionals' file")
    return cfg


def load_config(path: str | Path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, path.resolve().parent, env)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply command-line overrides; None values are ignored."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    train = cfg.train
    for key in ("seed", "max_epochs", "batch_size", "n_search_trials"):
        if key in overrides:
            train = replace(train, **{key: overrides.pop(key)})
    if "voting" in overrides:
        train = replace(train, voting=overrides["voting"])
    return replace(cfg, train=train, **overrides)
