"""Recovery quality, subspace diagnostics and the second-layer softmax fit."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_softmax, softmax

from .errors import ConfigurationError, NumericError, RankDeficientError
from .model import ActivationKind, activate
from .moments import MomentMatrix
from .recovery import sparsity


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, MomentMatrix) else np.atleast_2d(np.asarray(m, dtype=float))


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ConfigurationError("matrix has an all-zero row")
    return a / norms


@dataclass
class MatchReport:
    permutation: list[int]
    signs: list[int]
    per_row_cosine_error: list[float]
    support_precision: float
    support_recall: float
    max_principal_angle_deg: float

    @property
    def mean_cosine_error(self) -> float:
        return float(np.mean(self.per_row_cosine_error))

    @property
    def max_cosine_error(self) -> float:
        return float(np.max(self.per_row_cosine_error))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_cosine_error"] = self.mean_cosine_error
        d["max_cosine_error"] = self.max_cosine_error
        return d


def _orthonormal_row_basis(a: np.ndarray, rank: int) -> np.ndarray:
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    return vt[:rank].T


def subspace_angles_deg(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Principal angles (degrees, ascending) between column spans of orthonormal ``u``, ``v``.

    Cosines resolve large angles and sines resolve small ones, so both ends
    keep full precision.
    """
    big, small = (u, v) if u.shape[1] >= v.shape[1] else (v, u)
    cross = big.T @ small
    cos = np.clip(np.linalg.svd(cross, compute_uv=False), 0.0, 1.0)
    sin = np.clip(np.sort(np.linalg.svd(small - big @ cross, compute_uv=False)), 0.0, 1.0)
    angles = np.where(cos**2 >= 0.5, np.arcsin(sin), np.arccos(cos))
    return np.degrees(np.sort(angles))


def match_rows(A1_hat: np.ndarray, A1_true: np.ndarray, zero_threshold_rel: float = 1e-6) -> MatchReport:
    """Optimal row matching up to permutation and sign.

    ``permutation[i]`` is the true row matched to recovered row ``i``.
    """
    a_hat = np.atleast_2d(np.asarray(A1_hat, dtype=float))
    a_true = np.atleast_2d(np.asarray(A1_true, dtype=float))
    if a_hat.shape != a_true.shape:
        raise ConfigurationError(f"shape mismatch: {a_hat.shape} vs {a_true.shape}")
    u_hat, u_true = _unit_rows(a_hat), _unit_rows(a_true)
    cos = u_hat @ u_true.T
    rows, cols = linear_sum_assignment(1.0 - np.abs(cos))
    perm = cols[np.argsort(rows)]
    matched = cos[np.arange(len(perm)), perm]
    signs = np.where(matched < 0, -1, 1)
    errors = np.clip(1.0 - np.abs(matched), 0.0, 2.0)

    tp = fp = fn = 0
    for i, j in enumerate(perm):
        peak_hat = np.max(np.abs(u_hat[i]))
        peak_true = np.max(np.abs(u_true[j]))
        s_hat = np.abs(u_hat[i]) > zero_threshold_rel * peak_hat
        s_true = np.abs(u_true[j]) > zero_threshold_rel * peak_true
        tp += int(np.sum(s_hat & s_true))
        fp += int(np.sum(s_hat & ~s_true))
        fn += int(np.sum(~s_hat & s_true))
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0

    k = a_true.shape[0]
    angles = subspace_angles_deg(_orthonormal_row_basis(u_hat, k), _orthonormal_row_basis(u_true, k))
    return MatchReport(
        permutation=[int(p) for p in perm],
        signs=[int(s) for s in signs],
        per_row_cosine_error=[float(e) for e in errors],
        support_precision=float(precision),
        support_recall=float(recall),
        max_principal_angle_deg=float(angles.max()),
    )


def top_right_subspace(M, k: int, rank_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal ``n_x x k`` basis of the top-``k`` right singular vectors."""
    m = _values(M)
    _, s, vt = np.linalg.svd(m, full_matrices=False)
    if k < 1 or k > s.size or s[0] == 0 or s[k - 1] <= rank_tol * s[0]:
        raise RankDeficientError(f"moment matrix has numeric rank below k={k}")
    return vt[:k].T


def principal_angles(M, A1_true: np.ndarray, k: int) -> np.ndarray:
    """Angles (degrees, nondecreasing) between ``M``'s top-``k`` right subspace and ``rowspan(A1_true)``."""
    v = top_right_subspace(M, k)
    q = _orthonormal_row_basis(np.atleast_2d(np.asarray(A1_true, dtype=float)), k)
    return subspace_angles_deg(v, q)


def project_inputs(M, X: np.ndarray, k: int) -> np.ndarray:
    """Coordinates of each row of ``X`` in the top-``k`` right singular basis of ``M``."""
    v = top_right_subspace(M, k)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != v.shape[0]:
        raise ConfigurationError(f"inputs have dimension {X.shape[1]}, moment has {v.shape[0]} columns")
    return X @ v


# ------------------------------------------------------------ softmax regression


@dataclass
class SoftmaxFitConfig:
    tolerance: float = 1e-6
    max_iter: int = 500
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4


@dataclass
class SoftmaxFit:
    weights: np.ndarray
    loss: float
    converged: bool
    iterations: int
    loss_history: list[float] = field(default_factory=list)


def softmax_loss(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of ``softmax(features @ weights.T)`` against one-hot ``labels``."""
    logp = log_softmax(features @ weights.T, axis=1)
    return float(-np.sum(labels * logp) / features.shape[0])


def softmax_gradient(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = softmax(features @ weights.T, axis=1)
    return (p - labels).T @ features / features.shape[0]


def fit_softmax_regression(
    features: np.ndarray,
    labels: np.ndarray,
    config: SoftmaxFitConfig | None = None,
    init: np.ndarray | None = None,
) -> SoftmaxFit:
    """Full-batch gradient descent with Armijo backtracking.

    Every accepted step strictly lowers the loss, so the history is monotone.
    Stops when the gradient norm drops below ``config.tolerance``.
    """
    config = config or SoftmaxFitConfig()
    features = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if features.shape[0] != labels.shape[0]:
        raise ConfigurationError("features and labels differ in sample count")
    w = np.zeros((labels.shape[1], features.shape[1])) if init is None else np.array(init, dtype=float)
    loss = softmax_loss(w, features, labels)
    history = [loss]
    step = config.initial_step
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        grad = softmax_gradient(w, features, labels)
        gnorm2 = float(np.sum(grad * grad))
        if not np.isfinite(loss) or not np.isfinite(gnorm2):
            raise NumericError("non-finite loss or gradient in softmax regression")
        if np.sqrt(gnorm2) < config.tolerance:
            converged = True
            it -= 1
            break
        t = step
        while True:
            cand = w - t * grad
            cand_loss = softmax_loss(cand, features, labels)
            if np.isfinite(cand_loss) and cand_loss <= loss - config.armijo * t * gnorm2:
                break
            t *= config.shrink
            if t < 1e-16:
                converged = True
                break
        if t < 1e-16:
            break
        w, loss = cand, cand_loss
        history.append(loss)
        step = min(t * 2.0, 1e6)
    return SoftmaxFit(w, loss, converged, it, history)


def encode_first_layer(A1_hat: np.ndarray, X: np.ndarray, activation: str = "sigmoid") -> np.ndarray:
    kind = ActivationKind(activation)
    if not kind.elementwise:
        raise ConfigurationError("first-layer activation must be elementwise")
    return activate(kind, np.atleast_2d(X) @ np.asarray(A1_hat, dtype=float).T)


def learn_second_layer(
    A1_hat: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    config: SoftmaxFitConfig | None = None,
    activation: str = "sigmoid",
) -> SoftmaxFit:
    """Softmax regression of one-hot labels ``Y`` on ``h = activation(A1_hat x)``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if not np.all((Y == 0) | (Y == 1)) or not np.all(Y.sum(axis=1) == 1):
        raise ConfigurationError("labels must be one-hot rows")
    return fit_softmax_regression(encode_first_layer(A1_hat, X, activation), Y, config)


def accuracy(weights: np.ndarray, features: np.ndarray, labels: np.ndarray) -> float:
    pred = np.argmax(features @ weights.T, axis=1)
    return float(np.mean(pred == np.argmax(labels, axis=1)))
