"""One JSON document configures the whole pipeline.

The document has a global seed plus one section per subsystem; every
section maps onto a frozen dataclass whose defaults are the library
defaults. Unknown keys anywhere are rejected, values are type-checked
against the defaults, and section validation reuses the dataclasses'
own __post_init__ checks.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .env import TASKS, CurriculumConfig, EnvConfig, RewardCoeffs, TaskSpec
from .evaluation import PRESET_NAMES
from .kinematics import ArmModel
from .planner import PlannerConfig
from .real2sim import CedConfig
from .rl import TrainConfig
from .scenegen import SensorParams
from .vae import VaeConfig
from .waygen import REGIMES, TrainRegime, WaygenConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSection:
    """Scene randomization plus dataset sizing."""
    task: str = "reach"
    n_obs_choices: tuple = None      # None -> the task's default choices
    n_scenes: int = 200
    samples_per_path: int = 6
    ced_pairs: int = 0               # translator pair budget; 0 -> one per scene
    sensor: SensorParams = SensorParams()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.n_scenes <= 0 or self.samples_per_path <= 0:
            raise ValueError("n_scenes and samples_per_path must be positive")
        if self.ced_pairs < 0:
            raise ValueError("ced_pairs must be >= 0")
        self.task_spec().randomization()   # validates n_obs_choices

    def task_spec(self):
        return TaskSpec(self.task, self.n_obs_choices)


@dataclass(frozen=True)
class WaygenSection:
    """Generator training: optimizer settings plus the data regime."""
    regime: str = "ced_plus_sim"
    data_fraction: float = 1.0
    lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 64
    hidden: int = 256

    def __post_init__(self):
        self.train_regime()
        self.train_config()

    def train_regime(self):
        return TrainRegime(self.regime, self.data_fraction)

    def train_config(self):
        return WaygenConfig(self.lr, self.epochs, self.batch_size,
                            self.hidden)


@dataclass(frozen=True)
class EnvSection:
    """Environment dynamics, reward weights, and the reset curriculum."""
    dt: float = 0.01
    horizon: int = 300
    d_goal: float = 0.05
    k: int = 5
    spacing: float = 0.15
    image_style: str = "sim"
    terminate_on_collision: bool = False
    curriculum: CurriculumConfig = CurriculumConfig()
    reward: RewardCoeffs = RewardCoeffs()

    def __post_init__(self):
        self.env_config()

    def env_config(self):
        return EnvConfig(self.dt, self.horizon, self.d_goal, self.k,
                         self.spacing, self.image_style,
                         self.terminate_on_collision)


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 50
    regimes: tuple = REGIMES
    fractions: tuple = (0.1, 0.5, 1.0)
    n_obs: tuple = (0, 1)
    presets: tuple = PRESET_NAMES

    def __post_init__(self):
        if self.episodes <= 0:
            raise ValueError("episodes must be positive")
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"regime must be one of {REGIMES}, got {r!r}")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ValueError(f"fractions must be in (0, 1], got {f}")
        for n in self.n_obs:
            if not (isinstance(n, int) and n >= 0):
                raise ValueError(f"n_obs entries must be ints >= 0, got {n!r}")
        for p in self.presets:
            if p not in PRESET_NAMES:
                raise ValueError(
                    f"preset must be one of {PRESET_NAMES}, got {p!r}")


@dataclass(frozen=True)
class ServeSection:
    port: int = 8765
    hz: float = 30.0

    def __post_init__(self):
        if not 0 < self.port < 65536:
            raise ValueError("port must be in 1..65535")
        if self.hz <= 0:
            raise ValueError("hz must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    arm: ArmModel = ArmModel()
    scene: SceneSection = SceneSection()
    planner: PlannerConfig = PlannerConfig()
    vae: VaeConfig = VaeConfig()
    ced: CedConfig = CedConfig()
    waygen: WaygenSection = WaygenSection()
    env: EnvSection = EnvSection()
    rl: TrainConfig = TrainConfig()
    eval: EvalSection = EvalSection()
    serve: ServeSection = ServeSection()


# ---------------------------------------------------------------------------
# document -> dataclasses

def _tuplify(value, key):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v, key) for v in value)
    if isinstance(value, (bool, int, float, str)) or value is None:
        return value
    raise ConfigError(f"{key}: unsupported element {value!r}")


def _coerce(value, default, key):
    """Check a leaf value against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple) or default is None:
        if value is None:
            return None
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return _tuplify(value, key)
    raise ConfigError(f"{key}: cannot override field of type "
                      f"{type(default).__name__}")


def _build(dc_type, doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object, got {doc!r}")
    fields = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in doc.items():
        default = fields[name].default
        key = f"{path}.{name}"
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _coerce(value, default, key)
    try:
        return dc_type(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_config(doc):
    """Validate a parsed JSON document into a PipelineConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    sections = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(doc) - set(sections))
    if unknown:
        raise ConfigError(f"config: unknown section(s) {unknown}")
    kwargs = {}
    for name, value in doc.items():
        if name == "seed":
            kwargs[name] = _coerce(value, 0, "seed")
        else:
            kwargs[name] = _build(type(sections[name].default), value, name)
    return PipelineConfig(**kwargs)


def load_config(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") \
            from None
    return build_config(doc)


def config_to_dict(cfg):
    """JSON-ready document; build_config on the result reproduces cfg."""
    return dataclasses.asdict(cfg)
