"""INI experiment configuration with strict key checking."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .agent import TrainConfig
from .errors import ConfigError
from .theory import VerifyConfig


@dataclass
class EnvSection:
    kind: str = "PointMass2D"
    horizon: int = 100
    dt: float = 0.1
    obs_noise_std: float = 0.2
    goal_distance: float = 1.0
    goal_radius: float = 0.1
    goal_terminates: bool = False


@dataclass
class DemoSection:
    episodes: int = 100
    train_fraction: float = 0.7


@dataclass
class DynamicsSection:
    ensemble_size: int = 5
    epochs: int = 30
    hidden: int = 64
    depth: int = 4
    lr: float = 1e-3
    batch_size: int = 128


@dataclass
class RewardSection:
    quantile: float = 0.95
    literal_eq2: bool = False


@dataclass
class BcSection:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 128


@dataclass
class ExperimentConfig:
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    demos: DemoSection = field(default_factory=DemoSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    reward: RewardSection = field(default_factory=RewardSection)
    bc: BcSection = field(default_factory=BcSection)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_env_steps=20_000))
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    SECTIONS = ("env", "demos", "dynamics", "reward", "bc", "train", "verify")

    def validate(self) -> "ExperimentConfig":
        if self.demos.episodes < 1:
            raise ConfigError("demos.episodes must be >= 1")
        if self.dynamics.ensemble_size < 2:
            raise ConfigError("dynamics.ensemble_size must be >= 2")
        if self.dynamics.epochs < 1 or self.bc.epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.verify.trials < 0 or self.verify.joint_trials < 0:
            raise ConfigError("verification trial counts must be >= 0")
        # TrainConfig re-validates on construction
        self.train = dataclasses.replace(self.train)
        return self

    def to_ini(self) -> str:
        lines = ["[run]", f"seed = {self.seed}", ""]
        for name in self.SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                lines.append(f"{f.name} = {_render(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _apply(section_obj, items, section: str):
    known = {f.name: f for f in dataclasses.fields(section_obj)}
    updates = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in section [{section}]; known: {', '.join(known)}")
        updates[key] = _parse(raw, getattr(section_obj, key), f"[{section}] {key}")
    try:
        return dataclasses.replace(section_obj, **updates)
    except ConfigError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = ExperimentConfig()
    for section in parser.sections():
        items = parser.items(section)
        if section == "run":
            for key, raw in items:
                if key != "seed":
                    raise ConfigError(f"unknown key {key!r} in section [run]; known: seed")
                cfg.seed = _parse(raw, 0, "[run] seed")
        elif section in ExperimentConfig.SECTIONS:
            setattr(cfg, section, _apply(getattr(cfg, section), items, section))
        else:
            raise ConfigError(f"unknown section [{section}]; known: run, {', '.join(ExperimentConfig.SECTIONS)}")
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(), str(p))
