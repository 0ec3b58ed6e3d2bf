"""Sectioned experiment configuration.

One INI-style file holds every hyperparameter. Each section maps onto a
dataclass below; unknown sections or keys raise :class:`ConfigError` so that
typos never silently fall back to defaults. Overrides use dotted
``section.key=value`` syntax.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, unknown section, or unparsable value."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class DataConfig:
    train_tasks: tuple = ("stack", "color_push")
    test_tasks: tuple = ("color_stack",)
    demos_per_task: int = 24
    val_demos_per_task: int = 6
    test_demos_per_task: int = 20
    fraction_unsuccessful: float = 0.5
    image_size: int = 64
    target_steps: int = 36
    max_speed: float = 0.4
    fps: int = 10
    # batch structure
    view_pairs: int = 2
    batch_frames: int = 64
    negative_margin: int = 2
    num_domain_frames: int = 2
    stride: int = 15
    skill_batch: int = 16
    success_only: bool = True
    # augmentation
    augment: bool = True
    brightness: tuple = (0.7, 1.3)
    contrast: tuple = (0.7, 1.3)
    saturation: tuple = (0.7, 1.3)
    mirror_prob: float = 0.5
    random_crop: bool = False
    crop_area: tuple = (0.8, 1.0)


@dataclass
class EncoderConfig:
    backbone: str = "small"  # small | full
    embedding_dim: int = 32
    feature_channels: int = 32
    input_size: int = 64
    l2_normalize: bool = False
    pretrained: bool = False
    full_truncate_at: str = "Mixed_5d"


@dataclass
class DiscriminatorConfig:
    num_classes: int = 2
    latent: str = "kl"  # kl | fc
    latent_dim: int = 64
    hidden: int = 128
    dropout: float = 0.3
    zero_init: bool = False
    head_init_scale: float = 0.1


@dataclass
class LossConfig:
    alpha: float = 0.1
    beta: float = 1.0
    lambda_margin: float = 1.0
    xi_sim: float = 10.0
    metric: str = "lifted_asn"  # lifted_asn | lifted | triplet | npair
    similarity: str = "dot"  # dot | neg_sqdist
    triplet_margin: float = 1.0
    encoder_entropy: bool = True
    entropy: bool = True
    adversarial: bool = True


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 1000
    encoder_updates: int = 1
    discriminator_updates: int = 1
    checkpoint_every: int = 200
    log_every: int = 10
    strict_determinism: bool = True
    monitor_every: int = 100
    monitor_skills: int = 64


@dataclass
class EvalConfig:
    tsne_perplexity: float = 10.0
    tsne_seed: int = 0


@dataclass
class RLConfig:
    agent_view: int = 0
    demo_view: int = 1
    xi_reward: float = 0.0  # <= 0: calibrate from the demonstration
    xi_percentile: float = 90.0
    bonus: float = 10.0
    terminate_distance: float = 0.3
    goal_tolerance: float = 0.05
    horizon_slack: int = 8
    num_envs: int = 16
    rollout_steps: int = 64
    iterations: int = 100
    learning_rate: float = 1e-3
    minibatch: int = 32
    epochs: int = 8
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    reward_scale: float = 0.1
    init_log_std: float = -1.2
    hidden: int = 64
    phase_frequencies: int = 16
    max_grad_norm: float = 0.5


@dataclass
class GlobalConfig:
    seed: int = 0
    output_dir: str = "runs"


@dataclass
class ExperimentConfig:
    experiment: GlobalConfig = field(default_factory=GlobalConfig)
    dataio: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    rl: RLConfig = field(default_factory=RLConfig)

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = cls()
        for section, values in data.items():
            for key, value in values.items():
                cfg.set(f"{section}.{key}", value)
        return cfg

    def dumps(self) -> str:
        parser = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            parser[f.name] = {k.name: _format(getattr(section, k.name))
                              for k in dataclasses.fields(section)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        cfg = cls()
        for section in parser.sections():
            for key, value in parser[section].items():
                cfg.set(f"{section}.{key}", value)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())

    def set(self, dotted: str, value) -> None:
        """Assign ``section.key``; strings are parsed per the field's type."""
        if "." not in dotted:
            raise ConfigError(f"key {dotted!r} must be of the form section.key", dotted)
        section_name, key = dotted.split(".", 1)
        if section_name not in {f.name for f in dataclasses.fields(self)}:
            raise ConfigError(f"unknown config section {section_name!r}", dotted)
        section = getattr(self, section_name)
        types = typing.get_type_hints(type(section))
        if key not in types:
            raise ConfigError(f"unknown config key {dotted!r}", dotted)
        try:
            parsed = _parse(value, types[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {dotted}: {value!r} ({exc})", dotted) from exc
        setattr(section, key, parsed)

    def apply_overrides(self, overrides) -> "ExperimentConfig":
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value", item)
            k, v = item.split("=", 1)
            self.set(k.strip(), v.strip())
        return self

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(self.to_dict())


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(value, typ):
    if not isinstance(value, str):
        if typ is tuple:
            return tuple(value)
        if typ is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if typ is int and isinstance(value, bool):
            raise TypeError("expected int")
        if not isinstance(value, typ):
            raise TypeError(f"expected {typ.__name__}")
        return value
    text = value.strip()
    if typ is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError("expected a boolean")
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    if typ is tuple:
        items = [t.strip() for t in text.split(",") if t.strip()]
        out = []
        for t in items:
            try:
                out.append(float(t))
            except ValueError:
                out.append(t)
        return tuple(out)
    return text
