"""Generative feedforward network: weights, forward map, labels, input Jacobian.

The label model is ``E[y|x] = s_d(A_d s_{d-1}(... s_1(A_1 x)))``. All batch
functions take inputs shaped ``(n, n_x)``; single-vector calls are accepted
and return unbatched results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, softmax

from .errors import ConfigurationError
from .io import read_json, read_matrix, write_json, write_matrix


class ActivationKind(str, Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTPLUS = "softplus"
    SOFTMAX = "softmax"

    @property
    def elementwise(self) -> bool:
        return self is not ActivationKind.SOFTMAX


class Task(str, Enum):
    MULTICLASS = "multiclass"
    MULTILABEL = "multilabel"
    # Labels equal the expected value; used for linear/GLM warm-up networks.
    REGRESSION = "regression"


def activate(kind: ActivationKind, z: np.ndarray) -> np.ndarray:
    kind = ActivationKind(kind)
    if kind is ActivationKind.IDENTITY:
        return z.copy()
    if kind is ActivationKind.SIGMOID:
        return expit(z)
    if kind is ActivationKind.TANH:
        return np.tanh(z)
    if kind is ActivationKind.SOFTPLUS:
        return np.logaddexp(0.0, z)
    return softmax(z, axis=-1)


def activation_derivative(kind: ActivationKind, z: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the activation at pre-activation ``z``.

    Elementwise kinds return the diagonal (same shape as ``z``). Softmax
    returns the full Jacobian ``diag(p) - p p^T`` with a trailing extra axis.
    ``out`` may pass the already computed activation to avoid recomputing it.
    """
    kind = ActivationKind(kind)
    if out is None:
        out = activate(kind, z)
    if kind is ActivationKind.IDENTITY:
        return np.ones_like(z)
    if kind is ActivationKind.SIGMOID:
        return out * (1.0 - out)
    if kind is ActivationKind.TANH:
        return 1.0 - out * out
    if kind is ActivationKind.SOFTPLUS:
        return expit(z)
    eye = np.eye(out.shape[-1])
    return out[..., :, None] * eye - out[..., :, None] * out[..., None, :]


@dataclass(frozen=True)
class NetworkSpec:
    weights: tuple[np.ndarray, ...]
    activations: tuple[ActivationKind, ...]
    task: Task = Task.MULTILABEL

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=float) for w in self.weights)
        activations = tuple(ActivationKind(a) for a in self.activations)
        task = Task(self.task)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "activations", activations)
        object.__setattr__(self, "task", task)

        if not weights:
            raise ConfigurationError("network needs at least one layer")
        if len(activations) != len(weights):
            raise ConfigurationError(
                f"{len(weights)} weight matrices but {len(activations)} activations"
            )
        for i, w in enumerate(weights):
            if w.ndim != 2 or 0 in w.shape:
                raise ConfigurationError(f"layer {i + 1} weight must be a non-empty matrix")
            if not np.all(np.isfinite(w)):
                raise ConfigurationError(f"layer {i + 1} weight has non-finite entries")
        for i in range(1, len(weights)):
            if weights[i].shape[1] != weights[i - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {i + 1} expects {weights[i].shape[1]} inputs, "
                    f"layer {i} produces {weights[i - 1].shape[0]}"
                )
        for i, w in enumerate(weights[1:-1], start=2):
            if w.shape[0] != w.shape[1]:
                raise ConfigurationError(f"intermediate layer {i} must be square, got {w.shape}")
        for i, a in enumerate(activations[:-1], start=1):
            if not a.elementwise:
                raise ConfigurationError(f"softmax only allowed at the final layer (layer {i})")
        last = activations[-1]
        if task is Task.MULTICLASS and last is not ActivationKind.SOFTMAX:
            raise ConfigurationError("multiclass task requires a softmax output layer")
        if task is Task.MULTILABEL and last is not ActivationKind.SIGMOID:
            raise ConfigurationError("multilabel task requires a sigmoid output layer")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def n_x(self) -> int:
        return self.weights[0].shape[1]

    @property
    def k(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_y(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def first_layer(self) -> np.ndarray:
        return self.weights[0]

    @property
    def dims(self) -> list[int]:
        return [self.n_x] + [w.shape[0] for w in self.weights]


@dataclass(frozen=True)
class FirstLayerPrior:
    k: int
    n_x: int
    theta: float
    seed: int = 0
    alpha: float = 1.0

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")
        if self.n_x < self.k:
            raise ConfigurationError(f"n_x ({self.n_x}) must be >= k ({self.k})")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in (0, 1], got {self.theta}")

    def warnings(self) -> list[str]:
        """Soft checks of the sparsity band and the desk-scale dimension regime."""
        out = []
        lo, hi = 2.0 / self.k, self.alpha / math.sqrt(self.k)
        if not lo <= self.theta <= hi:
            out.append(
                f"theta={self.theta:g} outside sparse-connectivity band "
                f"[{lo:.4g}, {hi:.4g}] (2/k <= theta <= alpha/sqrt(k), alpha={self.alpha:g})"
            )
        if self.n_x < 10 * self.k:
            out.append(f"n_x={self.n_x} < 10k={10 * self.k}: below desk-scale input-dimension regime")
        return out


def generate_first_layer(prior: FirstLayerPrior, normalize: bool = True) -> np.ndarray:
    """Bernoulli(theta)-Gaussian ``k x n_x`` matrix, rows scaled to unit norm.

    All-zero rows are redrawn. With ``normalize=False`` the raw draw is
    returned (same random stream, so the two agree up to row scaling).
    """
    prior.validate()
    rng = np.random.default_rng(prior.seed)

    def draw(shape):
        mask = rng.random(shape) < prior.theta
        return mask * rng.standard_normal(shape)

    a = draw((prior.k, prior.n_x))
    for i in range(prior.k):
        while not np.any(a[i]):
            a[i] = draw(prior.n_x)
    if normalize:
        a /= np.linalg.norm(a, axis=1, keepdims=True)
    return a


def _orthonormal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


def generate_upper_layers(
    dims: Sequence[int], gain: float = 1.0, shift: float = 0.0, seed: int = 0
) -> list[np.ndarray]:
    """Weights for layers 2..d given ``dims = [n_x, k, ..., n_y]``.

    Each layer is ``gain`` times a matrix with orthonormal columns (rows when
    wide); the output layer additionally gets a uniform ``-shift`` which pushes
    sigmoid heads towards sparse labels.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    layers = []
    for i in range(2, len(dims)):
        w = gain * _orthonormal(dims[i], dims[i - 1], rng)
        if i == len(dims) - 1:
            w = w - shift
        layers.append(w)
    return layers


@dataclass
class Propagation:
    """Per-layer pre-activations and outputs for a batch of inputs."""

    preacts: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)


def _as_batch(net: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != net.n_x:
        raise ConfigurationError(f"input has shape {x.shape}, network expects n_x={net.n_x}")
    return x, single


def propagate(net: NetworkSpec, x: np.ndarray) -> Propagation:
    x, _ = _as_batch(net, x)
    prop = Propagation()
    h = x
    for w, kind in zip(net.weights, net.activations):
        z = h @ w.T
        h = activate(kind, z)
        prop.preacts.append(z)
        prop.outputs.append(h)
    return prop


def forward_expected(net: NetworkSpec, x: np.ndarray) -> np.ndarray:
    """``E[y|x]`` for one input vector or a batch of rows."""
    _, single = _as_batch(net, x)
    out = propagate(net, x).outputs[-1]
    return out[0] if single else out


def upper_factor(net: NetworkSpec, x: np.ndarray, prop: Propagation | None = None) -> np.ndarray:
    """Per-sample ``J_d A_d ... J_2 A_2 J_1``, shape ``(n, n_y, k)``.

    Multiplying on the right by ``A_1`` gives the input Jacobian.
    """
    x, single = _as_batch(net, x)
    if prop is None:
        prop = propagate(net, x)
    n = x.shape[0]
    p = None
    for i in range(net.depth - 1, -1, -1):
        kind = net.activations[i]
        d = activation_derivative(kind, prop.preacts[i], prop.outputs[i])
        if p is None:
            p = d if not kind.elementwise else d[:, :, None] * np.eye(d.shape[1])
        elif kind.elementwise:
            p = p * d[:, None, :]
        else:  # pragma: no cover - softmax is final-layer only
            p = p @ d
        if i > 0:
            p = p @ net.weights[i]
    assert p is not None and p.shape == (n, net.n_y, net.k)
    return p[0] if single else p


def input_jacobian(net: NetworkSpec, x: np.ndarray, prop: Propagation | None = None) -> np.ndarray:
    """``d E[y|x] / dx``: ``(n_y, n_x)`` per input, batched as ``(n, n_y, n_x)``."""
    return upper_factor(net, x, prop) @ net.first_layer


def sample_label(net: NetworkSpec, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw labels given inputs.

    Multiclass: one-hot categorical draw. Multilabel: independent Bernoulli per
    coordinate. Regression: the expected value itself.
    """
    _, single = _as_batch(net, x)
    p = np.atleast_2d(forward_expected(net, x))
    if net.task is Task.MULTICLASS:
        u = rng.random(p.shape[0])
        cdf = np.cumsum(p, axis=1)
        idx = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(axis=1), p.shape[1] - 1)
        y = np.zeros_like(p)
        y[np.arange(p.shape[0]), idx] = 1.0
    elif net.task is Task.MULTILABEL:
        y = (rng.random(p.shape) < p).astype(float)
    else:
        y = p
    return y[0] if single else y


def build_network(
    dims: Sequence[int],
    activations: Sequence[str],
    task: str = "multilabel",
    theta: float = 0.3,
    alpha: float = 1.0,
    upper_gain: float = 1.0,
    upper_shift: float = 0.0,
    seed: int = 0,
) -> tuple[NetworkSpec, np.ndarray, list[str]]:
    """Random network from a dimension list.

    Returns the network (row-normalized first layer), the unnormalized
    first-layer draw, and validator warnings.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ConfigurationError("dims must list at least n_x and one layer width")
    if len(activations) != len(dims) - 1:
        raise ConfigurationError(f"need {len(dims) - 1} activations, got {len(activations)}")
    prior = FirstLayerPrior(k=dims[1], n_x=dims[0], theta=theta, seed=seed, alpha=alpha)
    raw = generate_first_layer(prior, normalize=False)
    a1 = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    weights = [a1, *generate_upper_layers(dims, upper_gain, upper_shift, seed)]
    net = NetworkSpec(tuple(weights), tuple(activations), task)
    return net, raw, prior.warnings()


def save_network(directory: str | Path, net: NetworkSpec, seed: int | None = None, extra: dict | None = None) -> None:
    """Write ``network.json`` plus one ``A<i>.csv`` per layer."""
    directory = Path(directory)
    files = []
    for i, w in enumerate(net.weights, start=1):
        name = f"A{i}.csv"
        write_matrix(directory / name, w)
        files.append(name)
    meta = {
        "depth": net.depth,
        "dims": net.dims,
        "activations": [a.value for a in net.activations],
        "task": net.task.value,
        "seed": seed,
        "weights": files,
    }
    if extra:
        meta.update(extra)
    write_json(directory / "network.json", meta)


def load_network(directory: str | Path) -> NetworkSpec:
    directory = Path(directory)
    meta = read_json(directory / "network.json")
    weights = [read_matrix(directory / f) for f in meta["weights"]]
    net = NetworkSpec(tuple(weights), tuple(meta["activations"]), meta["task"])
    if net.dims != meta["dims"]:
        raise ConfigurationError(f"weights give dims {net.dims}, metadata says {meta['dims']}")
    return net
