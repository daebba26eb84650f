"""Experiment configuration: one JSON document shared by every CLI command."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dp import DiscretizationSpec
from .errors import ConfigInvalid
from .model import ModelParams
from .net import NetworkTopology, NormalizationSpec
from .trainer import TrainConfig

SECTIONS = ("model", "discretization", "training", "network", "eval", "paths", "rng_seed")


@dataclass
class EvalConfig:
    n_cases: int = 1000
    compare_dp: bool = True
    hist_bins: int = 20
    profile_cases: tuple = (0, 1, 2)
    # None means reuse the training start distribution
    init_state_mean: Optional[tuple] = None
    init_state_std: Optional[tuple] = None

    def validate(self) -> None:
        if self.n_cases < 0:
            raise ConfigInvalid("eval.n_cases must be non-negative")
        if self.hist_bins < 1:
            raise ConfigInvalid("eval.hist_bins must be positive")
        for name in ("init_state_mean", "init_state_std"):
            v = getattr(self, name)
            if v is not None and len(v) != 4:
                raise ConfigInvalid(f"eval.{name} needs four entries")


@dataclass
class PathsConfig:
    tuples: str = "tuples.csv"
    plans: str = "plans.json"
    weights: str = "weights.json"
    results: str = "results"


@dataclass
class ExperimentConfig:
    model: ModelParams = field(default_factory=ModelParams)
    discretization: DiscretizationSpec = field(default_factory=DiscretizationSpec)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    theta1dot_range: tuple = (-2.0, 8.0)
    rng_seed: int = 0

    def validate(self) -> None:
        self.training.validate()
        self.eval.validate()
        if self.model.n_contacts < 2:
            raise ConfigInvalid("the network needs at least two contact labels")
        lo, hi = self.theta1dot_range
        if not lo < hi:
            raise ConfigInvalid("network.theta1dot_range must be increasing")

    @property
    def topology(self) -> NetworkTopology:
        return NetworkTopology(n_pairs=self.model.n_contacts)

    @property
    def normalization(self) -> NormalizationSpec:
        return NormalizationSpec.from_model(self.model, self.theta1dot_range)

    def seeds(self) -> dict:
        """Independent child seeds for each pipeline stage."""
        children = np.random.SeedSequence(self.rng_seed).spawn(3)
        names = ("dp", "train", "eval")
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}

    def train_config(self) -> TrainConfig:
        d = self.training.to_dict()
        d["rng_seed"] = self.seeds()["train"]
        return TrainConfig.from_dict(d)

    def eval_distribution(self) -> TrainConfig:
        """Training config whose start distribution is the evaluation one."""
        d = self.training.to_dict()
        if self.eval.init_state_mean is not None:
            d["init_state_mean"] = list(self.eval.init_state_mean)
        if self.eval.init_state_std is not None:
            d["init_state_std"] = list(self.eval.init_state_std)
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        training = self.training.to_dict()
        training.pop("rng_seed")
        return {
            "model": self.model.to_dict(),
            "discretization": self.discretization.to_dict(),
            "training": training,
            "network": {"theta1dot_range": list(self.theta1dot_range)},
            "eval": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.eval.__dict__.items()},
            "paths": dict(self.paths.__dict__),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigInvalid("config must be a JSON object")
        extra = set(d) - set(SECTIONS)
        if extra:
            raise ConfigInvalid(f"unknown config sections: {sorted(extra)}")
        try:
            training = dict(d.get("training", {}))
            if "rng_seed" in training:
                raise ConfigInvalid("training.rng_seed is derived from the top-level rng_seed")
            network = dict(d.get("network", {}))
            if set(network) - {"theta1dot_range"}:
                raise ConfigInvalid(f"unknown network fields: {sorted(set(network) - {'theta1dot_range'})}")
            ev = dict(d.get("eval", {}))
            for k in ("profile_cases", "init_state_mean", "init_state_std"):
                if ev.get(k) is not None:
                    ev[k] = tuple(ev[k])
            cfg = cls(
                model=ModelParams.from_dict(d.get("model", {})),
                discretization=DiscretizationSpec.from_dict(d.get("discretization", {})),
                training=TrainConfig.from_dict(training),
                eval=EvalConfig(**ev),
                paths=PathsConfig(**d.get("paths", {})),
                theta1dot_range=tuple(float(v) for v in network.get("theta1dot_range", (-2.0, 8.0))),
                rng_seed=int(d.get("rng_seed", 0)),
            )
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc
        cfg.validate()
        return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


def desk_config() -> ExperimentConfig:
    """Small two-contact experiment that trains in well under a minute."""
    return ExperimentConfig(
        model=ModelParams(n_contacts=2),
        discretization=DiscretizationSpec(max_depth=3),
        training=TrainConfig(iterations=200, alpha=1e-2, updates_per_iteration=10,
                             dp_seed_tuples=880, heldout_cases=50),
        eval=EvalConfig(n_cases=50),
    )
