"""Run configuration: one JSON document, strictly validated.

Unknown keys are rejected so a typo cannot silently fall back to a
default; all defaults are materialized into output artifacts for
provenance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .backbone import ModelConfig, init_model_weights
from .data import gen_synthetic_dataset
from .scheduler import SamplerPlan, build_schedule, uniform_plan
from .training import LOSS_MODES, TrainConfig

__all__ = ["ConfigError", "RunConfig", "default_config", "load_config"]


class ConfigError(ValueError):
    """Configuration document failed validation."""


@dataclass(frozen=True)
class ModelSection:
    layers: int = 2
    patches: int = 8
    hidden: int = 8
    classes: int = 4
    spectral_clip: float | None = 0.35
    logit_cap: float = 60.0


@dataclass(frozen=True)
class ScheduleSection:
    # Gentle default betas keep the untrained toy backbone's DDIM descent
    # bounded (no LayerNorm to absorb amplification); build_schedule itself
    # defaults to the conventional [1e-4, 0.02].
    train_steps: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 7e-3


@dataclass(frozen=True)
class PlanSection:
    num_steps: int = 20
    guidance: float = 1.5
    steps: tuple | None = None  # explicit decreasing timesteps ending at 0


@dataclass(frozen=True)
class LazySection:
    rho_attn: float = 1e-3
    rho_feed: float = 1e-3
    threshold: float = 0.5


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-4
    steps: int = 500
    batch: int = 4
    loss_mode: str = "self-distill"
    fd_epsilon: float = 1e-5
    window: int = 4
    null_prob: float = 0.1


@dataclass(frozen=True)
class DataSection:
    size: int = 64
    mean_scale: float = 1.0
    noise_scale: float = 0.5


_SECTIONS = {
    "model": ModelSection,
    "schedule": ScheduleSection,
    "plan": PlanSection,
    "lazy": LazySection,
    "train": TrainSection,
    "data": DataSection,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    plan: PlanSection = field(default_factory=PlanSection)
    lazy: LazySection = field(default_factory=LazySection)
    train: TrainSection = field(default_factory=TrainSection)
    data: DataSection = field(default_factory=DataSection)

    def __post_init__(self):
        if not 0.0 <= self.lazy.rho_attn <= 1.0 or not 0.0 <= self.lazy.rho_feed <= 1.0:
            raise ConfigError("lazy.rho_attn and lazy.rho_feed must lie in [0, 1]")
        if not 0.0 < self.lazy.threshold < 1.0:
            raise ConfigError("lazy.threshold must lie in (0, 1)")
        if self.plan.guidance < 1.0:
            raise ConfigError("plan.guidance must be >= 1")
        if self.train.fd_epsilon <= 0.0:
            raise ConfigError("train.fd_epsilon must be positive")
        if self.train.loss_mode not in LOSS_MODES:
            raise ConfigError(f"train.loss_mode must be one of {LOSS_MODES}")
        if self.data.size < 1:
            raise ConfigError("data.size must be >= 1")

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError(f"config must be a JSON object, got {type(doc).__name__}")
        unknown = set(doc) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {"seed": _expect_int(doc.get("seed", 0), "seed")}
        for name, section_cls in _SECTIONS.items():
            body = doc.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be an object")
            fields = section_cls.__dataclass_fields__
            bad = set(body) - set(fields)
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            coerced = {}
            for key, value in body.items():
                if key == "steps" and name == "plan" and value is not None:
                    value = tuple(int(v) for v in value)
                coerced[key] = value
            try:
                kwargs[name] = section_cls(**coerced)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid section {name!r}: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        doc = {"seed": self.seed}
        for name in _SECTIONS:
            body = asdict(getattr(self, name))
            if name == "plan" and body["steps"] is not None:
                body["steps"] = list(body["steps"])
            doc[name] = body
        return doc

    # -- builders ----------------------------------------------------------

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(num_layers=m.layers, num_patches=m.patches, hidden_dim=m.hidden,
                           train_steps=self.schedule.train_steps, num_classes=m.classes,
                           spectral_clip=m.spectral_clip, logit_cap=m.logit_cap)

    def build_model(self):
        return init_model_weights(self.model_config(), seed=self.seed)

    def build_schedule(self):
        s = self.schedule
        return build_schedule(s.train_steps, s.beta_min, s.beta_max)

    def build_plan(self) -> SamplerPlan:
        p = self.plan
        if p.steps is not None:
            return SamplerPlan(steps=p.steps, guidance=p.guidance)
        return uniform_plan(self.schedule.train_steps, p.num_steps, p.guidance)

    def build_dataset(self):
        d = self.data
        return gen_synthetic_dataset(self.model.classes, self.model.patches,
                                     self.model.hidden, d.size, seed=self.seed,
                                     mean_scale=d.mean_scale, noise_scale=d.noise_scale)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(rho_attn=self.lazy.rho_attn, rho_feed=self.lazy.rho_feed,
                           learning_rate=t.learning_rate, steps=t.steps, batch=t.batch,
                           loss_mode=t.loss_mode, fd_epsilon=t.fd_epsilon,
                           window=t.window, null_prob=t.null_prob, seed=self.seed,
                           threshold=self.lazy.threshold)


def _expect_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return value


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc)
