"""Experiment configuration: one YAML document per experiment."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .baselines import TrainConfig
from .data import CLASS_REMOVAL, RANDOM_SUBSET, SplitSpec, generate_synthetic, load_csv_bundle
from .unlearn import UnlearnConfig, default_alpha, step_budget_for

ENV_OUTPUT_DIR = "UNLEARNLAB_OUTPUT_DIR"
ENV_JOBS = "UNLEARNLAB_JOBS"

METHODS = ("nabla_tau", "finetune", "label_swap", "retrain")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    n_classes: int = 5
    in_dim: int = 20
    n_per_class: int = 200
    n_val_per_class: int = 100
    n_test_per_class: int = 200
    cluster_spread: float = 0.3
    label_noise_fraction: float = 0.15
    noisy_eval: bool = True
    seed: int = 0
    # Optional CSV files replacing the generator: {train, validation, test}.
    csv: dict | None = None

    def build(self):
        if self.csv:
            return load_csv_bundle(self.csv["train"], self.csv["validation"],
                                   self.csv["test"], seed=self.seed)
        return generate_synthetic(
            self.n_classes, self.in_dim, self.n_per_class, self.cluster_spread,
            self.label_noise_fraction, self.seed,
            n_val_per_class=self.n_val_per_class, n_test_per_class=self.n_test_per_class,
            noisy_eval=self.noisy_eval,
        )


@dataclass
class SplitConfig:
    mode: str = RANDOM_SUBSET
    forget_fraction: float = 0.15
    forget_class: int = 0

    def spec(self, seed: int) -> SplitSpec:
        if self.mode == CLASS_REMOVAL:
            return SplitSpec(CLASS_REMOVAL, None, self.forget_class, seed)
        return SplitSpec(RANDOM_SUBSET, self.forget_fraction, None, seed)


@dataclass
class UnlearnSection:
    alpha0: float | None = None
    alpha_end_factor: float = 0.0
    alpha_unit: str = "epoch"
    refresh_period_c: int = 1
    batch_size: int = 32
    equivalent_epochs: int = 6
    lr: float = 0.02
    weight_decay: float = 0.01
    lr_end_factor: float = 0.1
    decay_during_ascent: bool = True

    def build(self, n_train: int, n_forget: int, n_retain: int, seed: int,
              alpha0: float | None = None) -> UnlearnConfig:
        if alpha0 is None:
            alpha0 = self.alpha0
        if alpha0 is None:
            alpha0 = default_alpha(n_forget / n_train)
        return UnlearnConfig(
            alpha0=alpha0,
            alpha_end_factor=self.alpha_end_factor,
            alpha_unit=self.alpha_unit,
            refresh_period_c=self.refresh_period_c,
            batch_size=self.batch_size,
            step_budget=step_budget_for(n_retain, self.batch_size, self.equivalent_epochs),
            lr=self.lr,
            weight_decay=self.weight_decay,
            lr_end_factor=self.lr_end_factor,
            decay_during_ascent=self.decay_during_ascent,
            seed=seed,
        )


@dataclass
class AttackConfig:
    folds: int = 5
    l2: float = 1e-4
    tol: float = 1e-8
    repeats: int = 10


@dataclass
class SweepConfig:
    fractions: list[float] = field(default_factory=lambda: [0.03, 0.15, 0.30])
    alphas: list[float] = field(default_factory=lambda: [0.05, 0.25, 0.5, 0.9])


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    pretrain: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    method: str = "nabla_tau"
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"
    jobs: int = 1
    record_wall_time: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        # Where outputs go and how many workers run them do not change results.
        d = self.to_dict()
        del d["output_dir"], d["jobs"]
        return canonical_hash(d)

    def pretrain_hash(self) -> str:
        """Key for cached original models: only what shapes pretraining."""
        return canonical_hash({"dataset": asdict(self.dataset), "pretrain": asdict(self.pretrain)})

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


_SECTIONS = {
    "dataset": DatasetConfig,
    "pretrain": TrainConfig,
    "split": SplitConfig,
    "unlearn": UnlearnSection,
    "attack": AttackConfig,
    "sweep": SweepConfig,
}


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        kwargs[name] = _section(_SECTIONS[name], value, name) if name in _SECTIONS else value
    cfg = ExperimentConfig(**kwargs)
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; valid: {', '.join(METHODS)}")
    return cfg


def load_config(path=None, env=None) -> ExperimentConfig:
    """Read a YAML config (defaults if ``path`` is None) and apply env overrides."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    cfg = from_dict(raw)
    env = os.environ if env is None else env
    if env.get(ENV_OUTPUT_DIR):
        cfg.output_dir = env[ENV_OUTPUT_DIR]
    if env.get(ENV_JOBS):
        cfg.jobs = int(env[ENV_JOBS])
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
