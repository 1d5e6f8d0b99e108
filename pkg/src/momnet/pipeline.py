"""File-based pipeline stages: generate, moment, recover, evaluate, sweep.

Every stage reads its inputs from and writes its outputs to a run directory,
so stages can be rerun independently. Recovery only ever opens the moment
file; ground truth is consumed by evaluation alone.
"""

from __future__ import annotations

import csv
import io as _io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .config import MIXING_STREAM, MOMENT_STREAM, ExperimentConfig, derive_seed
from .errors import ArtifactIOError, ConfigurationError, MomnetError, RankDeficientError
from .evaluation import match_rows, principal_angles
from .model import build_network, load_network, save_network
from .moments import MomentMatrix, estimate_moment, network_hash, population_moment_factors
from .recovery import RecoveryResult, recover_first_layer

log = logging.getLogger(__name__)

NETWORK_FILE = "network.json"
TRUTH_FILE = "A1.csv"
MOMENT_FILE = "moment.csv"
ESTIMATE_FILE = "A1_hat.csv"
REPORT_FILE = "match_report.json"
SUMMARY_FILE = "summary.json"
FAILURE_FILE = "FAILED.json"
SWEEP_AXES = ("n", "theta", "n_x")
SWEEP_COLUMNS = ("seed", "n", "theta", "k", "n_x", "success", "max_angle", "mean_cosine_error", "error")


def _outdir(out: str | Path) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create {out}: {exc}") from exc
    return out


def run_generate(cfg: ExperimentConfig, out: str | Path) -> list[str]:
    """Write the network spec, its weights and the unnormalized first layer."""
    warnings = cfg.validate()
    out = _outdir(out)
    net_cfg = cfg.network
    net, raw, _ = build_network(
        net_cfg.dims,
        net_cfg.activations,
        net_cfg.task,
        net_cfg.theta,
        net_cfg.alpha,
        net_cfg.upper_gain,
        net_cfg.upper_shift,
        net_cfg.seed,
    )
    save_network(out, net, net_cfg.seed, {"theta": net_cfg.theta, "warnings": warnings})
    io.write_matrix(out / "A1_raw.csv", raw)
    for w in warnings:
        log.warning("%s", w)
    return warnings


def run_moment(cfg: ExperimentConfig, out: str | Path) -> MomentMatrix:
    """Estimate (or, in closed_form mode, construct) the moment matrix."""
    cfg.validate()
    out = Path(out)
    net = load_network(out)
    model = cfg.build_score_model()
    est = cfg.estimation
    seed = derive_seed(cfg.network.seed, MOMENT_STREAM)
    if est.mode == "closed_form":
        if est.mixing == "gaussian":
            rng = np.random.default_rng(derive_seed(cfg.network.seed, MIXING_STREAM))
            b = rng.standard_normal((net.n_y, net.k))
            moment = MomentMatrix(
                b @ net.first_layer, 0, "closed_form", seed, {"mixing": "gaussian", "network_hash": network_hash(net)}
            )
        else:
            b, a1 = population_moment_factors(net, model, est.n, seed, est.chunk_size, cfg.workers)
            moment = MomentMatrix(
                b @ a1, est.n, "closed_form_mc", seed, {"mixing": "network", "network_hash": network_hash(net)}
            )
    else:
        moment = estimate_moment(
            net, model, est.n, est.mode, seed, est.score_noise, est.chunk_size, cfg.workers
        )
    moment.save(out / MOMENT_FILE)
    return moment


def run_recover(cfg: ExperimentConfig, out: str | Path) -> RecoveryResult:
    """Recover the first layer from ``moment.csv`` alone."""
    out = Path(out)
    moment = MomentMatrix.load(out / MOMENT_FILE)
    result = recover_first_layer(moment, cfg.recovery.k, cfg.recovery.to_recovery_config(cfg.workers))
    result.save(out)
    return result


def run_evaluate(cfg: ExperimentConfig, out: str | Path) -> dict:
    """Compare ``A1_hat.csv`` to ground truth and write report and summary."""
    out = Path(out)
    a_hat = io.read_matrix(out / ESTIMATE_FILE)
    a_true = io.read_matrix(out / TRUTH_FILE)
    report = match_rows(a_hat, a_true, cfg.evaluation.zero_threshold_rel)
    io.write_json(out / REPORT_FILE, report.to_dict())
    moment = MomentMatrix.load(out / MOMENT_FILE)
    try:
        span_angle = float(principal_angles(moment, a_true, cfg.recovery.k).max())
    except RankDeficientError:
        span_angle = math.nan
    summary = _summary(cfg)
    summary.update(
        success=report.mean_cosine_error < cfg.evaluation.success_bound,
        exact_recovery=report.max_cosine_error < cfg.evaluation.success_bound,
        mean_cosine_error=report.mean_cosine_error,
        max_cosine_error=report.max_cosine_error,
        max_angle=span_angle,
        recovered_span_angle=report.max_principal_angle_deg,
        support_precision=report.support_precision,
        support_recall=report.support_recall,
    )
    io.write_json(out / SUMMARY_FILE, summary)
    return summary


def _summary(cfg: ExperimentConfig) -> dict:
    net = cfg.network
    return {
        "seed": net.seed,
        "n": cfg.estimation.n,
        "mode": cfg.estimation.mode,
        "theta": net.theta,
        "k": net.k,
        "n_x": net.n_x,
        "n_y": net.n_y,
        "success": False,
        "error": None,
    }


def run_pipeline(cfg: ExperimentConfig, out: str | Path) -> dict:
    """Generate, estimate, recover and evaluate in one directory.

    A stage failure leaves earlier artifacts in place, writes ``FAILED.json``
    and a summary with ``success: false``, then re-raises.
    """
    out = _outdir(out)
    (out / FAILURE_FILE).unlink(missing_ok=True)
    warnings = run_generate(cfg, out)
    try:
        run_moment(cfg, out)
        run_recover(cfg, out)
        summary = run_evaluate(cfg, out)
    except MomnetError as exc:
        failure = {"error": type(exc).__name__, "message": str(exc)}
        io.write_json(out / FAILURE_FILE, failure)
        summary = _summary(cfg)
        summary.update(error=f"{type(exc).__name__}: {exc}", warnings=warnings)
        io.write_json(out / SUMMARY_FILE, summary)
        raise
    summary["warnings"] = warnings
    io.write_json(out / SUMMARY_FILE, summary)
    return summary


def _with_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = cfg.copy()
    if axis == "n":
        cfg.estimation.n = int(value)
    elif axis == "theta":
        cfg.network.theta = float(value)
    elif axis == "n_x":
        n_x = int(value)
        if cfg.score_model.get("kind") != "standard_normal":
            raise ConfigurationError("n_x sweeps require a standard_normal score model")
        cfg.network.dims = [n_x, *cfg.network.dims[1:]]
        cfg.score_model = {"kind": "standard_normal", "dim": n_x}
    else:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    return cfg


def _run_cell(args) -> dict:
    cfg, out = args
    row = _summary(cfg)
    try:
        row.update(run_pipeline(cfg, out))
    except MomnetError as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(
    cfg: ExperimentConfig,
    axis: str,
    values: Sequence,
    seeds: int,
    out: str | Path,
    workers: int | None = None,
) -> list[dict]:
    """Run the pipeline for each (value, seed) cell and write ``sweep.csv``.

    Seeds are ``cfg.network.seed + i`` for ``i < seeds``. Failed cells are
    recorded with their error and the sweep continues.
    """
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    if seeds < 1:
        raise ConfigurationError("sweep needs at least one seed")
    out = _outdir(out)
    base = cfg.network.seed
    cells = []
    for value in values:
        for i in range(seeds):
            cell = _with_axis(cfg, axis, value)
            cell.network.seed = base + i
            cell.workers = 1
            cell.validate()
            cells.append((cell, out / f"{axis}={value}" / f"seed={base + i}"))
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(c) for c in cells]
    write_sweep_csv(out / "sweep.csv", rows)
    return rows


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow(
            [repr(row[c]) if isinstance(row.get(c), float) else ("" if row.get(c) is None else row[c]) for c in SWEEP_COLUMNS]
        )
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def read_sweep_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
