"""Sparse first-layer recovery from a moment matrix.

For each column ``j`` of ``M`` an l1 program

    minimize ||w^T M||_1  subject to  (M e_j)^T w = 1

yields a candidate ``s_j = w^T M``. Candidates are then taken sparsest first,
keeping those that increase the rank, until ``k`` rows are collected.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.optimize import linprog

from .errors import (
    ConfigurationError,
    DegenerateMomentError,
    InfeasibleConstraintError,
    InsufficientCandidatesError,
    OracleScaleError,
    RankDeficientError,
    SolverError,
)
from .io import write_json, write_matrix
from .moments import MomentMatrix

BACKENDS = ("simplex", "admm")


def _values(m) -> np.ndarray:
    if isinstance(m, MomentMatrix):
        return m.values
    return np.atleast_2d(np.asarray(m, dtype=float))


def sparsity(v: np.ndarray, zero_threshold_rel: float = 1e-6) -> int:
    """Entries above ``zero_threshold_rel * ||v||_inf``."""
    v = np.asarray(v, dtype=float)
    peak = np.max(np.abs(v)) if v.size else 0.0
    if peak == 0:
        return 0
    return int(np.count_nonzero(np.abs(v) > zero_threshold_rel * peak))


def numeric_rank(rows: np.ndarray, rank_tol: float = 1e-8) -> int:
    """Rank of the row-normalized stack, threshold relative to sigma_max."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    norms = np.linalg.norm(rows, axis=1)
    rows = rows[norms > 0] / norms[norms > 0, None]
    if rows.shape[0] == 0:
        return 0
    sv = np.linalg.svd(rows, compute_uv=False)
    return int(np.count_nonzero(sv > rank_tol * sv[0]))


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude entry is positive."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


# --------------------------------------------------------------------------- LP


@dataclass(frozen=True)
class L1Problem:
    M: np.ndarray
    r: np.ndarray
    tolerance: float = 1e-9

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        r = np.asarray(self.r, dtype=float).ravel()
        if r.size != m.shape[0]:
            raise ConfigurationError(f"r has length {r.size}, M has {m.shape[0]} rows")
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be positive")
        if not np.any(r):
            raise InfeasibleConstraintError("constraint r^T w = 1 is infeasible for r = 0")
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "r", r)


@dataclass
class L1Solution:
    w: np.ndarray
    objective: float
    iterations: int = 0
    dual_bound: float = math.nan
    backend: str = "simplex"

    @property
    def gap(self) -> float:
        """Certified optimality gap (``nan`` when no dual bound is available)."""
        return self.objective - self.dual_bound

    def __iter__(self):
        # allows ``w, objective = solve_l1(problem)``
        yield self.w
        yield self.objective


def _finish(problem: L1Problem, w: np.ndarray) -> tuple[np.ndarray, float]:
    w = w / (problem.r @ w)
    return w, float(np.abs(w @ problem.M).sum())


def certified_dual_bound(M: np.ndarray, r: np.ndarray, mu: np.ndarray) -> float:
    """Lower bound on ``min ||M^T w||_1 s.t. r^T w = 1`` from a dual guess ``mu``.

    Any ``mu`` with ``||mu||_inf <= 1`` and ``M mu = lam r`` proves the bound
    ``lam``. The guess is repaired to satisfy the equality exactly (minimum-norm
    correction) and rescaled into the unit box; the result is always valid.
    """
    lam = float(r @ (M @ mu)) / float(r @ r)
    resid = M @ mu - lam * r
    if np.any(resid):
        delta, *_ = np.linalg.lstsq(M, -resid, rcond=None)
        if np.linalg.norm(M @ delta + resid) > 1e-9 * max(1.0, np.linalg.norm(resid)):
            return math.nan
        mu = mu + delta
    scale = max(1.0, float(np.max(np.abs(mu))))
    return lam / scale


def _solve_simplex(problem: L1Problem, max_iter: int | None) -> L1Solution:
    m, r = problem.M, problem.r
    ny, nx = m.shape
    eye = np.eye(nx)
    c = np.concatenate([np.zeros(ny), np.ones(nx)])
    a_ub = np.block([[m.T, -eye], [-m.T, -eye]])
    a_eq = np.concatenate([r, np.zeros(nx)])[None, :]
    options = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
    if max_iter is not None:
        options["maxiter"] = int(max_iter)
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(2 * nx),
        A_eq=a_eq,
        b_eq=[1.0],
        bounds=[(None, None)] * ny + [(0, None)] * nx,
        method="highs-ds",
        options=options,
    )
    iterations = int(getattr(res, "nit", 0) or 0)
    if res.status != 0 or res.x is None:
        best = None
        if res.x is not None:
            w, obj = _finish(problem, res.x[:ny])
            best = L1Solution(w, obj, iterations, backend="simplex")
        raise SolverError(f"simplex LP failed: {res.message}", best=best)
    w, obj = _finish(problem, res.x[:ny])
    upper, lower = res.ineqlin.marginals[:nx], res.ineqlin.marginals[nx:]
    bounds = [certified_dual_bound(m, r, sgn * (upper - lower)) for sgn in (1.0, -1.0)]
    bounds = [b for b in bounds if not math.isnan(b)]
    dual = max(bounds) if bounds else math.nan
    return L1Solution(w, obj, iterations, dual, "simplex")


def _solve_admm(problem: L1Problem, max_iter: int | None, rho: float = 1.0) -> L1Solution:
    """ADMM on ``min ||z||_1 s.t. z = M^T w, r^T w = 1`` with a support polish."""
    m, r = problem.M, problem.r
    ny, nx = m.shape
    scale = float(np.linalg.norm(m, 2))
    ms = m / scale
    kkt = np.zeros((ny + 1, ny + 1))
    kkt[:ny, :ny] = rho * ms @ ms.T + 1e-12 * np.eye(ny)
    kkt[:ny, ny] = r
    kkt[ny, :ny] = r
    lu = lu_factor(kkt)
    z = np.zeros(nx)
    u = np.zeros(nx)
    rhs = np.zeros(ny + 1)
    rhs[ny] = 1.0
    best_w, best_obj = None, math.inf
    max_iter = 20000 if max_iter is None else int(max_iter)
    tol = problem.tolerance
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs[:ny] = rho * ms @ (z - u)
        w = lu_solve(lu, rhs)[:ny]
        zt = ms.T @ w
        z_old = z
        v = zt + u
        z = np.sign(v) * np.maximum(np.abs(v) - 1.0 / rho, 0.0)
        u = u + zt - z
        obj = np.abs(w @ m).sum() / (r @ w)
        if obj < best_obj:
            best_w, best_obj = w.copy(), obj
        primal = np.linalg.norm(zt - z)
        dual = rho * np.linalg.norm(ms @ (z - z_old))
        if primal < tol * max(1.0, np.linalg.norm(z)) and dual < tol * max(1.0, np.linalg.norm(ms @ u)):
            converged = True
            break

    w_best, obj_best = _finish(problem, best_w)
    # Polish: force the near-zero entries of the best iterate to exact zeros.
    z_best = w_best @ m
    zero = np.abs(z_best) <= 1e-6 * np.max(np.abs(z_best))
    if zero.any():
        system = np.vstack([m[:, zero].T, r[None, :]])
        target = np.zeros(system.shape[0])
        target[-1] = 1.0
        w_pol, *_ = np.linalg.lstsq(system, target, rcond=None)
        if abs(r @ w_pol) > 0.5:
            w_pol, obj_pol = _finish(problem, w_pol)
            if obj_pol <= obj_best + tol * max(1.0, obj_best):
                converged = converged or obj_pol < obj_best
                w_best, obj_best = w_pol, obj_pol
    sol = L1Solution(w_best, obj_best, it, math.nan, "admm")
    if not converged:
        raise SolverError(f"ADMM did not converge in {max_iter} iterations", best=sol)
    return sol


def solve_l1(problem: L1Problem, backend: str = "simplex", max_iter: int | None = None) -> L1Solution:
    """Solve ``min ||w^T M||_1 s.t. r^T w = 1``.

    ``backend="simplex"`` is the exact LP (HiGHS dual simplex) and reports a
    certified dual bound. ``"admm"`` is a first-order method for larger
    inputs. Raises :class:`SolverError` (with ``best``) on failure.
    """
    if backend == "simplex":
        return _solve_simplex(problem, max_iter)
    if backend == "admm":
        return _solve_admm(problem, max_iter)
    raise ConfigurationError(f"unknown LP backend {backend!r}; choose from {BACKENDS}")


def l1_vertex_optimum(M: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact optimum of the l1 program by enumerating vertices (tiny ``n_y`` only).

    An optimal vertex has ``n_y - 1`` independent entries of ``w^T M`` at zero.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    ny, nx = M.shape
    if ny > 4:
        raise OracleScaleError(f"vertex enumeration limited to n_y <= 4, got {ny}")
    best_w, best_obj = None, math.inf
    for cols in itertools.combinations(range(nx), ny - 1):
        system = np.vstack([M[:, list(cols)].T, r[None, :]])
        if np.linalg.matrix_rank(system) < ny:
            continue
        target = np.zeros(ny)
        target[-1] = 1.0
        w = np.linalg.solve(system, target)
        obj = float(np.abs(w @ M).sum())
        if obj < best_obj - 1e-12:
            best_w, best_obj = w, obj
    if best_w is None:
        raise SolverError("no vertex found; M must have full row rank")
    return best_w, best_obj


# ------------------------------------------------------------------- candidates


@dataclass
class Candidate:
    column: int
    vector: np.ndarray
    objective: float
    iterations: int = 0
    gap: float = math.nan


@dataclass
class CandidateSet:
    candidates: list[Candidate]
    skipped: list[int] = field(default_factory=list)
    failed: list[int] = field(default_factory=list)


def select_columns(n_x: int, max_columns: int | None) -> list[int]:
    """All columns, or a deterministic stride subsample of at most ``max_columns``."""
    if max_columns is None or max_columns >= n_x:
        return list(range(n_x))
    if max_columns < 1:
        raise ConfigurationError("max_columns must be >= 1")
    stride = math.ceil(n_x / max_columns)
    return list(range(0, n_x, stride))


def spud_candidates(
    M,
    column_subset: Sequence[int] | None = None,
    *,
    backend: str = "simplex",
    pair_sums: bool = False,
    tolerance: float = 1e-9,
    zero_column_tol: float = 1e-12,
    max_iter: int | None = None,
    workers: int = 1,
) -> CandidateSet:
    """One l1 candidate per selected column, in column order.

    Columns that are numerically zero are skipped. With ``pair_sums`` the
    constraint vector is ``M e_j + M e_{j+1}`` (cyclically).
    """
    m = _values(M)
    n_x = m.shape[1]
    cols = list(range(n_x)) if column_subset is None else [int(j) for j in column_subset]
    if any(j < 0 or j >= n_x for j in cols):
        raise ConfigurationError("column index out of range")
    peak = float(np.max(np.abs(m))) if m.size else 0.0
    if peak == 0.0:
        raise DegenerateMomentError("moment matrix is identically zero")
    col_peak = np.max(np.abs(m), axis=0)
    live = [j for j in cols if col_peak[j] > zero_column_tol * peak]
    skipped = [j for j in cols if j not in set(live)]
    if not live:
        raise DegenerateMomentError("all selected columns of the moment matrix are zero")

    def one(j):
        r = m[:, j] + m[:, (j + 1) % n_x] if pair_sums else m[:, j]
        try:
            sol = solve_l1(L1Problem(m, r, tolerance), backend, max_iter)
        except SolverError as exc:
            if exc.best is None:
                return j, None
            sol = exc.best
        return j, Candidate(j, sol.w @ m, sol.objective, sol.iterations, sol.gap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, live))
    else:
        results = [one(j) for j in live]
    cands = [c for _, c in results if c is not None]
    failed = [j for j, c in results if c is None]
    return CandidateSet(cands, skipped, failed)


def deduplicate(
    vectors: Sequence[np.ndarray], order: Sequence[int], cos_tol: float = 1e-9
) -> tuple[list[int], dict[int, int]]:
    """Drop near-parallel repeats.

    ``order`` gives the visiting order (positions into ``vectors``). Returns the
    kept positions (in visiting order) and a map ``dropped -> kept``.
    """
    kept: list[int] = []
    units: list[np.ndarray] = []
    merged: dict[int, int] = {}
    for i in order:
        v = np.asarray(vectors[i], dtype=float)
        u = v / np.linalg.norm(v)
        hit = next((kp for kp, ku in zip(kept, units) if abs(float(u @ ku)) >= 1 - cos_tol), None)
        if hit is None:
            kept.append(i)
            units.append(u)
        else:
            merged[i] = hit
    return kept, merged


@dataclass
class Selection:
    vectors: list[np.ndarray]
    indices: list[int]
    sparsity: list[int]


def greedy_select(
    candidates: Sequence[np.ndarray],
    k: int,
    zero_threshold_rel: float = 1e-6,
    rank_tol: float = 1e-8,
) -> Selection:
    """Pop the sparsest remaining candidate; keep it if it raises the rank.

    Ties go to the lowest index. Raises :class:`InsufficientCandidatesError`
    (carrying the partial selection) if fewer than ``k`` survive.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    vecs = [np.asarray(c, dtype=float) for c in candidates]
    counts = [sparsity(v, zero_threshold_rel) for v in vecs]
    order = sorted((i for i in range(len(vecs)) if counts[i] > 0), key=lambda i: (counts[i], i))
    chosen: list[int] = []
    for i in order:
        trial = np.vstack([vecs[j] for j in chosen] + [vecs[i]])
        if numeric_rank(trial, rank_tol) == len(chosen) + 1:
            chosen.append(i)
            if len(chosen) == k:
                break
    sel = Selection([vecs[i] for i in chosen], chosen, [counts[i] for i in chosen])
    if len(chosen) < k:
        raise InsufficientCandidatesError(
            f"candidates reach rank {len(chosen)} < k={k}", partial=sel.vectors
        )
    return sel


# --------------------------------------------------------------------- recovery


@dataclass
class RecoveryConfig:
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
    workers: int = 1

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}")
        for name in ("zero_threshold_rel", "rank_tol", "moment_rank_tol", "tolerance", "dedup_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")


@dataclass
class RecoveryResult:
    A1_hat: np.ndarray
    candidate_trace: list[dict]
    residuals: list[float]
    singular_values: list[float]

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        write_matrix(directory / "A1_hat.csv", self.A1_hat)
        write_json(
            directory / "recovery_trace.json",
            {
                "columns": self.candidate_trace,
                "residuals": self.residuals,
                "singular_values": self.singular_values,
            },
        )


def recover_first_layer(M, k: int, config: RecoveryConfig | None = None) -> RecoveryResult:
    """Recover a row-normalized sparse ``k x n_x`` matrix from the row span of ``M``."""
    config = config or RecoveryConfig()
    config.validate()
    m = _values(M)
    sv = np.linalg.svd(m, compute_uv=False)
    tol = config.moment_rank_tol
    if k > sv.size or sv[0] == 0 or sv[k - 1] <= tol * sv[0]:
        rank = int(np.count_nonzero(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
        raise RankDeficientError(f"moment matrix has numeric rank {rank} < k={k}")
    if config.truncate_rank:
        _, s, vt = np.linalg.svd(m, full_matrices=False)
        m = s[:k, None] * vt[:k]

    cols = select_columns(m.shape[1], config.max_columns)
    cset = spud_candidates(
        m,
        cols,
        backend=config.backend,
        pair_sums=config.pair_sums,
        tolerance=config.tolerance,
        max_iter=config.max_iter,
        workers=config.workers,
    )
    cands = cset.candidates
    counts = [sparsity(c.vector, config.zero_threshold_rel) for c in cands]
    order = sorted(range(len(cands)), key=lambda i: (counts[i], cands[i].column))
    kept, merged = deduplicate([c.vector for c in cands], order, config.dedup_tol)
    kept_in_column_order = sorted(kept, key=lambda i: cands[i].column)
    sel = greedy_select(
        [cands[i].vector for i in kept_in_column_order], k, config.zero_threshold_rel, config.rank_tol
    )
    chosen = [kept_in_column_order[i] for i in sel.indices]

    rows = np.vstack([canonical_sign(cands[i].vector / np.linalg.norm(cands[i].vector)) for i in chosen])
    trace = []
    for i, c in enumerate(cands):
        entry = {
            "column": c.column,
            "objective": c.objective,
            "sparsity": counts[i],
            "selected": i in chosen,
            "iterations": c.iterations,
            "gap": c.gap,
            "status": "solved",
        }
        if i in merged:
            entry["status"] = "merged"
            entry["merged_into"] = cands[merged[i]].column
        trace.append(entry)
    trace.extend({"column": j, "status": "skipped", "selected": False} for j in cset.skipped)
    trace.extend({"column": j, "status": "failed", "selected": False} for j in cset.failed)
    trace.sort(key=lambda e: e["column"])
    residuals = [cands[i].gap for i in chosen]
    return RecoveryResult(rows, trace, residuals, [float(s) for s in sv])


# ---------------------------------------------------------------------- oracles


def _sphere_grid(dim: int, grid: int) -> np.ndarray:
    if dim == 1:
        return np.ones((1, 1))
    if dim == 2:
        phi = np.pi * np.arange(grid) / grid
        return np.column_stack([np.cos(phi), np.sin(phi)])
    # Fibonacci points on the sphere; antipodes are redundant but harmless.
    i = np.arange(grid * grid) + 0.5
    z = 1 - 2 * i / (grid * grid)
    rho = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * i
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def brute_force_sparsest(
    M: np.ndarray,
    k: int,
    grid: int = 64,
    zero_threshold_rel: float = 1e-6,
    rank_tol: float = 1e-8,
) -> list[np.ndarray]:
    """Exhaustive l0 search for the ``k`` sparsest rank-increasing vectors in ``rowspan(M)``.

    Candidates are ``w^T M`` for: every ``w`` annihilating ``n_y - 1`` columns
    (these include every locally sparsest direction), every ``w`` supported on
    one or two rows and zeroing one column, and a grid over the unit sphere.
    Only meant for ``n_y <= 3``, ``n_x <= 10``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    ny, nx = M.shape
    if ny > 3 or nx > 10:
        raise OracleScaleError(f"brute force limited to n_y <= 3 and n_x <= 10, got {M.shape}")
    ws: list[np.ndarray] = []
    for cols in itertools.combinations(range(nx), ny - 1):
        sub = M[:, list(cols)].T
        _, s, vt = np.linalg.svd(sub if sub.size else np.zeros((1, ny)))
        null_dim = ny - int(np.count_nonzero(s > 1e-12 * max(1.0, s.max(initial=0.0))))
        ws.extend(vt[ny - null_dim:])
    eye = np.eye(ny)
    ws.extend(eye)
    for a, b in itertools.combinations(range(ny), 2):
        for c in range(nx):
            if M[a, c] or M[b, c]:
                ws.append(M[b, c] * eye[a] - M[a, c] * eye[b])
    ws.extend(_sphere_grid(ny, grid))

    vectors = []
    for w in ws:
        s = w @ M
        norm = np.linalg.norm(s)
        if norm > 1e-12 * np.linalg.norm(M):
            vectors.append(canonical_sign(s / norm))
    sel = greedy_select(vectors, k, zero_threshold_rel, rank_tol)
    return sel.vectors


@dataclass(frozen=True)
class ExpansionReport:
    holds: bool
    violating_subset: tuple[int, ...] | None
    d_max: int


def expansion_check(B: np.ndarray, zero_threshold: float = 0.0) -> ExpansionReport:
    """Test ``|N_B(S)| >= |S| + d_max(B)`` for every column subset with ``|S| >= 2``.

    ``N_B(S)`` is the set of rows with a nonzero in some column of ``S`` and
    ``d_max`` the largest row degree of the support pattern. The first
    violation in (size, lexicographic) order is reported.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rows, cols = B.shape
    if cols > 20:
        raise OracleScaleError(f"expansion check limited to 20 columns, got {cols}")
    support = np.abs(B) > zero_threshold
    d_max = int(support.sum(axis=1).max()) if rows else 0
    if cols < 2:
        return ExpansionReport(True, None, d_max)

    if rows <= 62:
        col_masks = [int(sum(1 << i for i in np.flatnonzero(support[:, j]))) for j in range(cols)]
        neigh = np.zeros(1 << cols, dtype=np.int64)
        for j in range(cols):
            neigh[1 << j: 1 << (j + 1)] = neigh[: 1 << j] | col_masks[j]
        masks = np.arange(1 << cols, dtype=np.int64)
        size = np.bitwise_count(masks).astype(np.int64)
        n_size = np.bitwise_count(neigh).astype(np.int64)
        bad = np.flatnonzero((size >= 2) & (n_size < size + d_max))
        if bad.size == 0:
            return ExpansionReport(True, None, d_max)
        subsets = [tuple(j for j in range(cols) if (int(b) >> j) & 1) for b in bad]
        return ExpansionReport(False, min(subsets, key=lambda s: (len(s), s)), d_max)

    # Wide supports: plain set arithmetic.
    neighbours = [set(np.flatnonzero(support[:, j])) for j in range(cols)]
    for size in range(2, cols + 1):
        for subset in itertools.combinations(range(cols), size):
            if len(set().union(*(neighbours[j] for j in subset))) < size + d_max:
                return ExpansionReport(False, subset, d_max)
    return ExpansionReport(True, None, d_max)
