"""Label-score cross moments and their Stein/chain-rule counterparts.

Every estimator streams the sample in fixed-size chunks. Chunk ``i`` draws
its inputs from ``SeedSequence(seed, spawn_key=(i,))`` and partial sums are
combined with a fixed pairwise tree, so the result does not depend on the
worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericError
from .io import content_hash, read_json, read_matrix, write_json, write_matrix
from .model import NetworkSpec, input_jacobian, propagate, sample_label, upper_factor
from .scores import ScoreModel

DEFAULT_CHUNK = 8192
LABEL_MODES = ("sampled", "expected")
SOURCES = ("empirical_score", "empirical_derivative", "closed_form_mc", "closed_form")


@dataclass(frozen=True)
class MomentMatrix:
    values: np.ndarray
    sample_count: int
    source: str
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ConfigurationError("moment values must be a matrix")
        if not np.all(np.isfinite(values)):
            raise NumericError("moment matrix has non-finite entries")
        if self.source not in SOURCES:
            raise ConfigurationError(f"unknown moment source {self.source!r}")
        if self.source.startswith("empirical") and self.sample_count < 1:
            raise ConfigurationError("empirical moments need sample_count >= 1")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def save(self, csv_path: str | Path) -> None:
        csv_path = Path(csv_path)
        write_matrix(csv_path, self.values)
        meta = {"source": self.source, "n": self.sample_count, "seed": self.seed, **self.metadata}
        write_json(csv_path.with_suffix(".json"), meta)

    @classmethod
    def load(cls, csv_path: str | Path) -> "MomentMatrix":
        csv_path = Path(csv_path)
        values = read_matrix(csv_path)
        sidecar = csv_path.with_suffix(".json")
        meta = read_json(sidecar) if sidecar.exists() else {"source": "empirical_score", "n": 1}
        source = meta.pop("source")
        n = meta.pop("n")
        seed = meta.pop("seed", None)
        return cls(values, n, source, seed, meta)


def network_hash(net: NetworkSpec) -> str:
    return content_hash(
        {"w": [w.tolist() for w in net.weights], "a": [a.value for a in net.activations], "t": net.task.value}
    )


def chunk_streams(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (inputs, labels, score-noise) generators for one chunk."""
    children = np.random.SeedSequence(seed, spawn_key=(index,)).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def tree_sum(parts: list[np.ndarray]) -> np.ndarray:
    """Pairwise reduction in a fixed order."""
    if not parts:
        raise ValueError("nothing to sum")
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _stream(
    n: int,
    seed: int,
    chunk_fn: Callable[[int, int], np.ndarray],
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> np.ndarray:
    if n < 1:
        raise ConfigurationError(f"sample count must be >= 1, got {n}")
    if chunk_size < 1:
        raise ConfigurationError(f"chunk size must be >= 1, got {chunk_size}")
    sizes = [min(chunk_size, n - start) for start in range(0, n, chunk_size)]
    tasks = list(enumerate(sizes))
    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda t: chunk_fn(*t), tasks))
    else:
        parts = [chunk_fn(i, m) for i, m in tasks]
    total = tree_sum(parts) / n
    if not np.all(np.isfinite(total)):
        raise NumericError("non-finite value in streamed moment estimate")
    return total


def _check_dims(net: NetworkSpec, model: ScoreModel) -> None:
    if net.n_x != model.dim:
        raise ConfigurationError(f"network input dim {net.n_x} != score model dim {model.dim}")


def estimate_moment(
    net: NetworkSpec,
    model: ScoreModel,
    n: int,
    label_mode: str = "expected",
    seed: int = 0,
    score_noise: float = 0.0,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> MomentMatrix:
    """``(1/n) sum_i y_i score(x_i)^T``.

    ``label_mode="sampled"`` draws labels from the network; ``"expected"``
    uses ``E[y|x]`` directly. Inputs come from the same stream in both modes.
    ``score_noise`` adds isotropic Gaussian noise of that standard deviation
    to each score, mimicking an estimated score function.
    """
    _check_dims(net, model)
    if label_mode not in LABEL_MODES:
        raise ConfigurationError(f"label_mode must be one of {LABEL_MODES}, got {label_mode!r}")
    if score_noise < 0:
        raise ConfigurationError("score_noise must be nonnegative")

    def chunk(index, size):
        x_rng, y_rng, noise_rng = chunk_streams(seed, index)
        x = model.sample(size, x_rng)
        s = model.score(x)
        if score_noise > 0:
            s = s + score_noise * noise_rng.standard_normal(s.shape)
        y = sample_label(net, x, y_rng) if label_mode == "sampled" else propagate(net, x).outputs[-1]
        return y.T @ s

    values = _stream(n, seed, chunk, chunk_size, workers)
    meta = {
        "label_mode": label_mode,
        "score_noise": score_noise,
        "network_hash": network_hash(net),
        "model_hash": content_hash(model.to_dict()),
    }
    return MomentMatrix(values, n, "empirical_score", seed, meta)


def derivative_moment(
    net: NetworkSpec,
    model: ScoreModel,
    n: int,
    seed: int = 0,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> MomentMatrix:
    """``-(1/n) sum_i d g(x_i)/dx``, the derivative side of Stein's identity."""
    _check_dims(net, model)

    def chunk(index, size):
        x_rng, _, _ = chunk_streams(seed, index)
        x = model.sample(size, x_rng)
        return -input_jacobian(net, x).sum(axis=0)

    values = _stream(n, seed, chunk, chunk_size, workers)
    meta = {"network_hash": network_hash(net), "model_hash": content_hash(model.to_dict())}
    return MomentMatrix(values, n, "empirical_derivative", seed, meta)


def population_moment_factors(
    net: NetworkSpec,
    model: ScoreModel,
    n: int,
    seed: int = 0,
    chunk_size: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo ``B`` (``n_y x k``) and the true ``A_1`` with ``M = B A_1``.

    ``B = -E[J_d A_d ... J_2 A_2 D(s_1'(A_1 x))]``. With the same ``seed`` the
    inputs coincide with :func:`derivative_moment`.
    """
    _check_dims(net, model)

    def chunk(index, size):
        x_rng, _, _ = chunk_streams(seed, index)
        x = model.sample(size, x_rng)
        return -upper_factor(net, x).sum(axis=0)

    b = _stream(n, seed, chunk, chunk_size, workers)
    return b, net.first_layer.copy()


@dataclass(frozen=True)
class NondegeneracyReport:
    full_column_rank: bool
    smallest_singular_value: float
    largest_singular_value: float
    singular_values: tuple[float, ...]


def check_nondegeneracy(b: np.ndarray, threshold: float = 1e-8) -> NondegeneracyReport:
    """Full-column-rank test ``sigma_min(B) > threshold * sigma_max(B)``."""
    if threshold <= 0:
        raise ConfigurationError("threshold must be positive")
    b = np.atleast_2d(np.asarray(b, dtype=float))
    sv = np.linalg.svd(b, compute_uv=False)
    rows, cols = b.shape
    smax = float(sv[0]) if sv.size else 0.0
    smin = float(sv[-1]) if rows >= cols else 0.0
    full = rows >= cols and smax > 0 and smin > threshold * smax
    return NondegeneracyReport(bool(full), smin, smax, tuple(float(s) for s in sv))
