"""Experiment configuration: schema, YAML loading, overrides, fingerprints.

One config file describes one run. Precedence for field values is
file < environment variables < CLI overrides. Environment variables use the
prefix ``CURDA_`` with ``__`` separating nesting levels, e.g.
``CURDA_ADAPT_STAGE__EPOCHS=3``; values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .attacks import AttackBudget
from .errors import ConfigError
from .losses import LossWeights
from .pseudolabel import LabelerSchedule

ENV_PREFIX = "CURDA_"

METHODS = ("SR", "SR_UDA", "SR_UDA_RT", "CURDA")

# Default ablation switches per method; for CURDA each switch may be toggled
# to form a leave-one-component-out arm. For the baselines the switch set is
# fixed (they are definitions, not ablation hosts).
_METHOD_SWITCHES = {
    "SR": dict(use_con=False, use_saa=False, use_trade=False, use_dis=False, switch_encoders=False),
    "SR_UDA": dict(use_con=False, use_saa=False, use_trade=False, use_dis=True, switch_encoders=False),
    "SR_UDA_RT": dict(use_con=False, use_saa=False, use_trade=True, use_dis=True, switch_encoders=False),
    "CURDA": dict(use_con=True, use_saa=True, use_trade=True, use_dis=True, switch_encoders=True),
}
_FIXED_SWITCH_METHODS = ("SR", "SR_UDA", "SR_UDA_RT")


@dataclass
class DataConfig:
    source_train: str = "data/wide/train"
    target_train: str = "data/slim/train"
    target_test: str = "data/slim/test"
    source_test: str | None = None
    source_format: str = "idx"
    target_format: str = "idx"
    num_classes: int = 10
    image_size: int = 28


@dataclass
class ModelConfig:
    encoder_kind: str = "lenet-small"
    conv_channels: tuple[int, int] = (20, 50)
    feature_dim: int = 500
    classifier_hidden: int | None = None
    discriminator_hidden: int = 500


@dataclass
class StageConfig:
    epochs: int = 80
    batch_size: int = 300
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # late learning-rate phase (source stage only; ignored when None)
    lr_late: float | None = None
    lr_switch_epoch: int | None = None

    def validate(self, name: str) -> None:
        if self.epochs < 1:
            raise ConfigError(f"{name}.epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError(f"{name}.batch_size must be >= 2")
        for attr in ("lr", "momentum", "weight_decay"):
            if getattr(self, attr) < 0:
                raise ConfigError(f"{name}.{attr} must be >= 0")
        if self.lr <= 0:
            raise ConfigError(f"{name}.lr must be > 0")
        if (self.lr_late is None) != (self.lr_switch_epoch is None):
            raise ConfigError(f"{name}: lr_late and lr_switch_epoch must be set together")
        if self.lr_late is not None and self.lr_late <= 0:
            raise ConfigError(f"{name}.lr_late must be > 0")

    def lr_at(self, epoch: int) -> float:
        if self.lr_switch_epoch is not None and epoch >= self.lr_switch_epoch:
            return float(self.lr_late)
        return float(self.lr)


@dataclass
class Switches:
    use_con: bool = True
    use_saa: bool = True
    use_trade: bool = True
    use_dis: bool = True
    switch_encoders: bool = True


@dataclass
class EvalConfig:
    batch_size: int = 256
    embedding_samples: int = 0  # per domain; 0 disables the dump
    embedding_classes: list[int] | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    method: str = "CURDA"
    domain_pair: str = "wide->slim"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    source_stage: StageConfig = field(default_factory=lambda: StageConfig(
        epochs=80, batch_size=300, lr=0.001, lr_late=0.0001, lr_switch_epoch=50))
    adapt_stage: StageConfig = field(default_factory=lambda: StageConfig(epochs=60, batch_size=300))
    attack_source: AttackBudget = field(default_factory=lambda: AttackBudget(random_start=True))
    attack_adapt: AttackBudget = field(default_factory=lambda: AttackBudget(random_start=True))
    attack_eval: AttackBudget = field(default_factory=lambda: AttackBudget(random_start=False))
    loss: LossWeights = field(default_factory=LossWeights)
    labeler: LabelerSchedule = field(default_factory=LabelerSchedule)
    switches: Switches = field(default_factory=Switches)
    eval: EvalConfig = field(default_factory=EvalConfig)
    checkpoint_every: int = 5  # epochs; stage boundaries always checkpoint

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.source_stage.validate("source_stage")
        self.adapt_stage.validate("adapt_stage")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.data.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.method in _FIXED_SWITCH_METHODS:
            expected = _METHOD_SWITCHES[self.method]
            actual = asdict(self.switches)
            if actual != expected:
                raise ConfigError(
                    f"method {self.method} fixes ablation switches to {expected}, got {actual}"
                )
        return self


def _switch_defaults(method: str) -> Switches:
    if method not in _METHOD_SWITCHES:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    return Switches(**_METHOD_SWITCHES[method])


# ---------------------------------------------------------------------------
# dict <-> dataclass plumbing

def _build_budget(raw: dict[str, Any], where: str) -> AttackBudget:
    try:
        return AttackBudget(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad attack budget at {where}: {exc}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out = asdict(cfg)
    out["model"]["conv_channels"] = list(cfg.model.conv_channels)
    return out


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - {f for f in ExperimentConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def section(name, cls, **extra):
        data = raw.get(name, {})
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        allowed = set(cls.__dataclass_fields__)
        bad = set(data) - allowed
        if bad:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
        try:
            return cls(**{**extra, **data})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config section {name!r}: {exc}") from exc

    method = str(raw.get("method", "CURDA"))
    switches_raw = raw.get("switches")
    if switches_raw is None:
        switches = _switch_defaults(method)
    else:
        base = asdict(_switch_defaults(method))
        bad = set(switches_raw) - set(base)
        if bad:
            raise ConfigError(f"unknown keys in 'switches': {sorted(bad)}")
        base.update({k: bool(v) for k, v in switches_raw.items()})
        switches = Switches(**base)

    model_raw = dict(raw.get("model") or {})
    if "conv_channels" in model_raw:
        cc = model_raw["conv_channels"]
        if not (isinstance(cc, (list, tuple)) and len(cc) == 2):
            raise ConfigError("model.conv_channels must be a pair")
        model_raw["conv_channels"] = (int(cc[0]), int(cc[1]))
    raw["model"] = model_raw

    cfg = ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        method=method,
        domain_pair=str(raw.get("domain_pair", "wide->slim")),
        seed=int(raw.get("seed", 0)),
        data=section("data", DataConfig),
        model=section("model", ModelConfig),
        source_stage=section("source_stage", StageConfig),
        adapt_stage=section("adapt_stage", StageConfig),
        attack_source=_build_budget(raw.get("attack_source", {"random_start": True}), "attack_source"),
        attack_adapt=_build_budget(raw.get("attack_adapt", {"random_start": True}), "attack_adapt"),
        attack_eval=_build_budget(raw.get("attack_eval", {"random_start": False}), "attack_eval"),
        loss=section("loss", LossWeights),
        labeler=section("labeler", LabelerSchedule),
        switches=switches,
        eval=section("eval", EvalConfig),
        checkpoint_every=int(raw.get("checkpoint_every", 5)),
    )
    return cfg.validate()


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, value in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = yaml.safe_load(value)
    return out


def _set_overrides(assignments: list[str]) -> dict:
    out: dict = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        key, value = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    return out


def load_config(
    path: str | Path,
    *,
    overrides: list[str] | None = None,
    seed: int | None = None,
    environ=None,
) -> ExperimentConfig:
    """Load a YAML config applying env-var and CLI overrides in that order."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no config file at {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is None:
        raw = {}
    raw = _deep_merge(raw, _env_overrides(environ))
    if overrides:
        raw = _deep_merge(raw, _set_overrides(overrides))
    if seed is not None:
        raw["seed"] = int(seed)
    return config_from_dict(raw)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def fingerprint(cfg: ExperimentConfig) -> str:
    """Stable digest of the full semantic config."""
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
