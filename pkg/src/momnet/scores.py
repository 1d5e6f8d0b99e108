"""Input distributions with closed-form score functions ``grad_x log p(x)``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from .errors import ConfigurationError

_LOG_2PI = np.log(2.0 * np.pi)


def _batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ConfigurationError(f"point has dimension {x.shape[1]}, model has {dim}")
    return x, single


class ScoreModel:
    """Base class; subclasses implement the batched ``_score``/``_log_density``."""

    dim: int

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ConfigurationError(f"sample count must be >= 1, got {n}")
        return self._sample(int(n), rng)

    def score(self, x: np.ndarray) -> np.ndarray:
        x, single = _batch(x, self.dim)
        s = self._score(x)
        return s[0] if single else s

    def log_density(self, x: np.ndarray):
        x, single = _batch(x, self.dim)
        v = self._log_density(x)
        return float(v[0]) if single else v

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class StandardNormal(ScoreModel):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dimension must be >= 1, got {self.dim}")

    def _sample(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def _score(self, x):
        return -x

    def _log_density(self, x):
        return -0.5 * (np.sum(x * x, axis=1) + self.dim * _LOG_2PI)

    def to_dict(self):
        return {"kind": "standard_normal", "dim": self.dim}


class Gaussian(ScoreModel):
    """``N(mean, covariance)``; the covariance is Cholesky-factored once."""

    def __init__(self, mean: Sequence[float], covariance):
        self.mean = np.asarray(mean, dtype=float).ravel()
        self.covariance = np.asarray(covariance, dtype=float)
        self.dim = self.mean.size
        if self.covariance.shape != (self.dim, self.dim):
            raise ConfigurationError(
                f"covariance shape {self.covariance.shape} does not match mean length {self.dim}"
            )
        if not np.allclose(self.covariance, self.covariance.T, rtol=0, atol=1e-12 * np.abs(self.covariance).max()):
            raise ConfigurationError("covariance is not symmetric")
        try:
            self._chol = cho_factor(self.covariance, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("covariance is not positive definite") from exc
        self._lower = np.tril(self._chol[0])
        self._log_det = 2.0 * np.sum(np.log(np.diag(self._lower)))

    def _sample(self, n, rng):
        return self.mean + rng.standard_normal((n, self.dim)) @ self._lower.T

    def _score(self, x):
        return -cho_solve(self._chol, (x - self.mean).T).T

    def _log_density(self, x):
        z = solve_triangular(self._lower, (x - self.mean).T, lower=True)
        return -0.5 * (np.sum(z * z, axis=0) + self._log_det + self.dim * _LOG_2PI)

    def to_dict(self):
        return {"kind": "gaussian", "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}


class GaussianMixture(ScoreModel):
    def __init__(self, weights: Sequence[float], components: Sequence[tuple]):
        self.weights = np.asarray(weights, dtype=float).ravel()
        if self.weights.size == 0 or self.weights.size != len(components):
            raise ConfigurationError("need one weight per mixture component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be nonnegative and sum to 1")
        self.components = [c if isinstance(c, Gaussian) else Gaussian(*c) for c in components]
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ConfigurationError(f"mixture components disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()
        with np.errstate(divide="ignore"):
            self._log_w = np.log(self.weights)

    def _component_logs(self, x):
        return np.stack([c._log_density(x) for c in self.components], axis=1) + self._log_w

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        x, single = _batch(x, self.dim)
        logs = self._component_logs(x)
        r = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return r[0] if single else r

    def _sample(self, n, rng):
        return self.sample_with_labels(n, rng)[0]

    def sample_with_labels(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Like :meth:`sample` but also returns component indices."""
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for c, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == c)
            if idx.size:
                out[idx] = comp._sample(idx.size, rng)
        return out, labels

    def _score(self, x):
        logs = self._component_logs(x)
        r = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
        return sum(r[:, [c]] * comp._score(x) for c, comp in enumerate(self.components))

    def _log_density(self, x):
        return logsumexp(self._component_logs(x), axis=1)

    def to_dict(self):
        return {
            "kind": "gaussian_mixture",
            "weights": self.weights.tolist(),
            "components": [
                {"mean": c.mean.tolist(), "covariance": c.covariance.tolist()} for c in self.components
            ],
        }


def score_model_from_dict(data: dict) -> ScoreModel:
    kind = data.get("kind")
    if kind == "standard_normal":
        return StandardNormal(int(data["dim"]))
    if kind == "gaussian":
        return Gaussian(data["mean"], data["covariance"])
    if kind == "gaussian_mixture":
        comps = [(c["mean"], c["covariance"]) for c in data["components"]]
        return GaussianMixture(data["weights"], comps)
    raise ConfigurationError(f"unknown score model kind {kind!r}")


def finite_difference_score(model: ScoreModel, points: np.ndarray, step: float) -> np.ndarray:
    """Central differences of ``log_density`` along every coordinate."""
    points, _ = _batch(points, model.dim)
    grad = np.empty_like(points)
    for j in range(model.dim):
        e = np.zeros(model.dim)
        e[j] = step
        grad[:, j] = (model._log_density(points + e) - model._log_density(points - e)) / (2 * step)
    return grad


def validate_score(model: ScoreModel, points: np.ndarray, step: float = 1e-5) -> float:
    """Max absolute deviation between ``score`` and finite-differenced ``log_density``."""
    if step <= 0:
        raise ConfigurationError(f"step must be positive, got {step}")
    points, _ = _batch(points, model.dim)
    return float(np.max(np.abs(model._score(points) - finite_difference_score(model, points, step))))
