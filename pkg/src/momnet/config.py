"""Experiment configuration: JSON schema, validation and named presets."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .errors import ConfigurationError
from .model import build_network
from .recovery import BACKENDS, RecoveryConfig
from .scores import ScoreModel, score_model_from_dict

MODES = ("sampled", "expected", "closed_form")
MIXINGS = ("gaussian", "network")


@dataclass
class NetworkSection:
    dims: list[int]
    activations: list[str]
    task: str = "multilabel"
    theta: float = 0.3
    alpha: float = 1.0
    upper_gain: float = 1.0
    upper_shift: float = 0.0
    seed: int = 0

    @property
    def n_x(self) -> int:
        return self.dims[0]

    @property
    def k(self) -> int:
        return self.dims[1]

    @property
    def n_y(self) -> int:
        return self.dims[-1]


@dataclass
class EstimationSection:
    n: int = 100_000
    mode: str = "expected"
    score_noise: float = 0.0
    # closed_form only: "gaussian" draws B ~ N(0,1), "network" uses the Monte Carlo B.
    mixing: str = "gaussian"
    chunk_size: int = 8192


@dataclass
class RecoverySection:
    k: int
    zero_threshold_rel: float = 1e-6
    rank_tol: float = 1e-8
    moment_rank_tol: float = 1e-8
    backend: str = "simplex"
    tolerance: float = 1e-9
    max_columns: int | None = None
    pair_sums: bool = False
    dedup_tol: float = 1e-9
    truncate_rank: bool = False
    max_iter: int | None = None

    def to_recovery_config(self, workers: int = 1) -> RecoveryConfig:
        d = asdict(self)
        d.pop("k")
        return RecoveryConfig(**d, workers=workers)


@dataclass
class EvaluationSection:
    success_bound: float = 1e-6
    zero_threshold_rel: float = 1e-6


@dataclass
class ExperimentConfig:
    network: NetworkSection
    score_model: dict
    estimation: EstimationSection
    recovery: RecoverySection
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    output_dir: str = "runs/default"
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            cfg = cls(
                network=_section(NetworkSection, data["network"]),
                score_model=dict(data["score_model"]),
                estimation=_section(EstimationSection, data.get("estimation", {})),
                recovery=_section(RecoverySection, data["recovery"]),
                evaluation=_section(EvaluationSection, data.get("evaluation", {})),
                output_dir=str(data.get("output_dir", "runs/default")),
                workers=int(data.get("workers", 1)),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config is missing section {exc}") from None
        _reject_unknown(data, {f.name for f in fields(cls)}, "config")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def copy(self) -> "ExperimentConfig":
        return copy.deepcopy(self)

    def build_score_model(self) -> ScoreModel:
        return score_model_from_dict(self.score_model)

    def validate(self) -> list[str]:
        """Check every section and their cross-consistency; return soft warnings."""
        net = self.network
        if len(net.dims) < 3:
            raise ConfigurationError("network.dims must be [n_x, k, ..., n_y] with at least one hidden layer")
        if any(int(d) < 1 for d in net.dims):
            raise ConfigurationError("network.dims must be positive")
        _, _, warnings = build_network(
            net.dims, net.activations, net.task, net.theta, net.alpha, net.upper_gain, net.upper_shift, net.seed
        )
        model = self.build_score_model()
        if model.dim != net.n_x:
            raise ConfigurationError(f"score model dim {model.dim} != network n_x {net.n_x}")
        if self.recovery.k != net.k:
            raise ConfigurationError(f"recovery.k={self.recovery.k} != network k={net.k}")
        if net.n_y < net.k:
            warnings.append(f"n_y={net.n_y} < k={net.k}: the moment cannot have rank k")
        est = self.estimation
        if est.mode not in MODES:
            raise ConfigurationError(f"estimation.mode must be one of {MODES}")
        if est.mixing not in MIXINGS:
            raise ConfigurationError(f"estimation.mixing must be one of {MIXINGS}")
        if est.n < 1 or est.chunk_size < 1:
            raise ConfigurationError("estimation.n and estimation.chunk_size must be >= 1")
        if est.score_noise < 0:
            raise ConfigurationError("estimation.score_noise must be nonnegative")
        if self.recovery.backend not in BACKENDS:
            raise ConfigurationError(f"recovery.backend must be one of {BACKENDS}")
        self.recovery.to_recovery_config().validate()
        if self.evaluation.success_bound <= 0 or self.evaluation.zero_threshold_rel <= 0:
            raise ConfigurationError("evaluation thresholds must be positive")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        return warnings


def _reject_unknown(data: dict, allowed: set[str], where: str) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(extra)}")


def _section(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{cls.__name__} must be a JSON object")
    _reject_unknown(data, {f.name for f in fields(cls)}, cls.__name__)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{cls.__name__}: {exc}") from None


def derive_seed(seed: int, tag: int) -> int:
    """Independent integer seed for a pipeline stage."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1, dtype=np.uint32)[0])


# Stage tags for derive_seed.
MOMENT_STREAM = 1
MIXING_STREAM = 2


def _f1(**overrides: Any) -> dict:
    cfg = {
        "network": {
            "dims": [40, 8, 12],
            "activations": ["sigmoid", "sigmoid"],
            "task": "multilabel",
            "theta": 0.3,
            "alpha": 1.0,
            "upper_gain": 2.0,
            "upper_shift": 1.5,
            "seed": 0,
        },
        "score_model": {"kind": "standard_normal", "dim": 40},
        "estimation": {"n": 100_000, "mode": "expected"},
        # Sampled moments are dense: count entries above 2% of the peak and
        # demand a clearly new direction before accepting a candidate.
        "recovery": {"k": 8, "zero_threshold_rel": 0.02, "rank_tol": 0.3, "truncate_rank": True},
        "evaluation": {"success_bound": 0.01, "zero_threshold_rel": 0.02},
        "output_dir": "runs/f1",
    }
    for key, value in overrides.items():
        cfg[key] = {**cfg.get(key, {}), **value} if isinstance(value, dict) else value
    return cfg


PRESETS: dict[str, dict] = {
    # Sigmoid hidden layer, rare-label sigmoid head, standard normal input.
    "f1": _f1(),
    # Same first layer with a softmax head over 12 classes.
    "f1_multiclass": _f1(
        network={"activations": ["sigmoid", "softmax"], "task": "multiclass", "upper_gain": 8.0, "upper_shift": 0.0},
        output_dir="runs/f1_multiclass",
    ),
    # Population-level recovery: M = B A_1 with Gaussian B.
    "recovery": {
        "network": {
            "dims": [100, 10, 15],
            "activations": ["sigmoid", "sigmoid"],
            "task": "multilabel",
            "theta": 0.25,
            "seed": 0,
        },
        "score_model": {"kind": "standard_normal", "dim": 100},
        "estimation": {"mode": "closed_form", "mixing": "gaussian"},
        "recovery": {"k": 10},
        "evaluation": {"success_bound": 1e-6},
        "output_dir": "runs/recovery",
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig.from_dict(copy.deepcopy(PRESETS[name]))
