import itertools

import numpy as np
import pytest

from momnet.config import preset
from momnet.model import build_network

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((criterion, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def central_difference(f, x, step=1e-5):
    """Jacobian of ``f`` at ``x`` by central differences, shape (len(f(x)), len(x))."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def f1_network(seed=0, multiclass=False):
    cfg = preset("f1_multiclass" if multiclass else "f1").network
    net, _, _ = build_network(
        cfg.dims, cfg.activations, cfg.task, cfg.theta, cfg.alpha, cfg.upper_gain, cfg.upper_shift, seed
    )
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def _identifiable(supports):
    # Columns hit by exactly one row of a subset cannot cancel, so a mix of
    # two or more rows has at least that many nonzeros.
    for size in range(2, len(supports) + 1):
        for subset in itertools.combinations(supports, size):
            if np.count_nonzero(np.bincount(np.concatenate(subset)) == 1) <= 3:
                return False
    return True


def planted_tiny(seed, magnitude=(0.8, 1.25)):
    """Small ``M = B A1`` whose rows of ``A1`` are the unique sparsest span vectors.

    Rows have three nonzeros with random signs and magnitudes drawn from
    ``magnitude``. Shape is ``k x n_x`` with ``k`` in {2, 3}, ``n_x`` in 7..10.
    """
    r = np.random.default_rng(1000 + seed)
    k = 2 + seed % 2
    n_x = 7 + seed % 4
    for _ in range(10_000):
        supports = [r.choice(n_x, 3, replace=False) for _ in range(k)]
        if _identifiable(supports):
            break
    else:  # pragma: no cover
        raise RuntimeError("no identifiable support pattern found")
    a1 = np.zeros((k, n_x))
    for i, s in enumerate(supports):
        a1[i, s] = r.choice([-1.0, 1.0], 3) * r.uniform(*magnitude, 3)
    a1 /= np.linalg.norm(a1, axis=1, keepdims=True)
    b = r.standard_normal((k, k))
    return b @ a1, a1
