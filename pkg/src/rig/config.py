"""Declarative experiment configuration.

An :class:`ExperimentConfig` is a tree of frozen dataclasses. It converts to and
from plain dicts (the YAML/JSON layout), rejecting unknown keys and
out-of-range values with an error naming the offending key.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .envs import EnvKind, EnvSpec
from .replay import REWARD_KINDS, RewardType, make_strategy
from .rl import Td3Config

OBSERVATION_MODES = ("latent", "state", "pixel")
GOAL_SOURCES = ("prior", "env")
STRATEGIES = ("none", "future", "prior", "vae", "mixture", "future_or_uniform")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass(frozen=True)
class VaeConfig:
    latent_dim: int = 4
    beta: float = 5.0
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    batch_size: int = 64
    pretrain: bool = True
    pretrain_images: int = 10_000
    pretrain_epochs: int = 50
    # KL weight ramps from 0 to beta over this many epochs of the first training
    warmup_epochs: int = 0
    # exploration episodes for data collection are cut after this many steps (0 = horizon)
    explore_steps_per_reset: int = 0
    finetune_period: int = 25
    finetune_epochs: int = 2
    finetune_images: int = 2000
    finetune_data_fraction: float = 0.5
    online: bool = False
    online_interval: int = 3000
    online_epochs: int = 10
    online_max_images: int = 10_000
    train: bool = True


@dataclass(frozen=True)
class RlConfig:
    gamma: float = 0.99
    tau: float = 1e-2
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    hidden: tuple[int, ...] = (64, 64)
    batch_size: int = 128
    updates_per_step: int = 4
    ou_theta: float = 0.15
    ou_sigma: float = 0.3
    replay_capacity: int = 100_000

    def td3(self) -> Td3Config:
        return Td3Config(self.gamma, self.tau, self.actor_lr, self.critic_lr, self.policy_noise,
                         self.noise_clip, self.policy_delay, self.hidden)


@dataclass(frozen=True)
class RelabelConfig:
    strategy: str = "mixture"
    lam: float = 0.5
    k: int = 4

    def build(self):
        return make_strategy(self.strategy, self.lam, self.k)


@dataclass(frozen=True)
class RewardConfig:
    kind: str = "latent_euclid"
    scale: float = 1e-4
    epsilon: float = 0.10

    def build(self) -> RewardType:
        return RewardType(self.kind, self.scale, self.epsilon)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "rig"
    seed: int = 0
    observation: str = "latent"
    exploration_goals: str = "prior"
    episodes: int = 400
    eval_interval: int = 1000
    eval_episodes: int = 30
    variable_object_eval: bool = False
    save_checkpoint: bool = True
    output_dir: str = "runs/rig"
    env: EnvSpec = field(default_factory=EnvSpec)
    vae: VaeConfig = field(default_factory=VaeConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    relabel: RelabelConfig = field(default_factory=RelabelConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    @property
    def total_steps(self) -> int:
        return self.episodes * self.env.horizon


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Range checks that need the whole tree; returns ``cfg`` unchanged."""
    def positive(key, value, allow_zero=False):
        if value < 0 or (value == 0 and not allow_zero):
            raise ConfigError(key, f"must be {'nonnegative' if allow_zero else 'positive'}, got {value}")

    positive("episodes", cfg.episodes, allow_zero=True)
    positive("eval_interval", cfg.eval_interval)
    positive("eval_episodes", cfg.eval_episodes)
    if cfg.observation not in OBSERVATION_MODES:
        raise ConfigError("observation", f"must be one of {OBSERVATION_MODES}")
    if cfg.exploration_goals not in GOAL_SOURCES:
        raise ConfigError("exploration_goals", f"must be one of {GOAL_SOURCES}")
    v = cfg.vae
    positive("vae.latent_dim", v.latent_dim)
    positive("vae.beta", v.beta, allow_zero=True)
    positive("vae.lr", v.lr)
    positive("vae.batch_size", v.batch_size)
    positive("vae.pretrain_images", v.pretrain_images)
    positive("vae.pretrain_epochs", v.pretrain_epochs, allow_zero=True)
    positive("vae.warmup_epochs", v.warmup_epochs, allow_zero=True)
    positive("vae.explore_steps_per_reset", v.explore_steps_per_reset, allow_zero=True)
    positive("vae.finetune_period", v.finetune_period, allow_zero=True)
    positive("vae.finetune_epochs", v.finetune_epochs, allow_zero=True)
    positive("vae.finetune_images", v.finetune_images)
    positive("vae.online_interval", v.online_interval)
    positive("vae.online_epochs", v.online_epochs, allow_zero=True)
    positive("vae.online_max_images", v.online_max_images)
    if not 0.0 <= v.finetune_data_fraction <= 1.0:
        raise ConfigError("vae.finetune_data_fraction", "must be in [0, 1]")
    r = cfg.rl
    positive("rl.batch_size", r.batch_size)
    positive("rl.updates_per_step", r.updates_per_step, allow_zero=True)
    positive("rl.replay_capacity", r.replay_capacity)
    positive("rl.ou_theta", r.ou_theta, allow_zero=True)
    positive("rl.ou_sigma", r.ou_sigma, allow_zero=True)
    if r.replay_capacity < cfg.env.horizon:
        raise ConfigError("rl.replay_capacity", "must hold at least one trajectory")
    try:
        r.td3()
    except ValueError as exc:
        raise ConfigError("rl", str(exc)) from None
    if cfg.relabel.strategy not in STRATEGIES:
        raise ConfigError("relabel.strategy", f"must be one of {STRATEGIES}")
    if not 0.0 <= cfg.relabel.lam <= 1.0:
        raise ConfigError("relabel.lam", "must be in [0, 1]")
    positive("relabel.k", cfg.relabel.k)
    if cfg.reward.kind not in REWARD_KINDS:
        raise ConfigError("reward.kind", f"must be one of {REWARD_KINDS}")
    positive("reward.scale", cfg.reward.scale)
    positive("reward.epsilon", cfg.reward.epsilon)
    if cfg.reward.kind in ("oracle_state", "sparse") and cfg.observation != "state":
        raise ConfigError("reward.kind", f"{cfg.reward.kind} requires observation: state")
    if cfg.reward.kind == "mahalanobis" and cfg.observation != "latent":
        raise ConfigError("reward.kind", "mahalanobis requires observation: latent")
    if cfg.variable_object_eval and cfg.env.kind is not EnvKind.MULTI_OBJECT_PUSHER:
        raise ConfigError("variable_object_eval", "requires env.kind: multiobject")
    return cfg


# -- dict conversion ---------------------------------------------------------
def _convert(key: str, tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(key, "expected a mapping")
        return from_dict(tp, value, prefix=key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if tp is str:
        return str(value)
    if tp is EnvKind:
        try:
            return EnvKind(value)
        except ValueError:
            raise ConfigError(key, f"must be one of {[k.value for k in EnvKind]}") from None
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, "expected a list")
        return tuple(_convert(key, int, v) for v in value)
    return value


def from_dict(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in names:
            raise ConfigError(key, "unknown key")
        kwargs[k] = _convert(key, hints[k], v)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(prefix or cls.__name__, str(exc)) from None


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, EnvKind):
            v = v.value
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins."""
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    return validate(from_dict(ExperimentConfig, data))
