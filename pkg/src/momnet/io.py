"""Matrix CSV and JSON helpers.

Matrices are written row-major with a leading ``rows,cols`` line so that a
reader can validate shape before parsing the body. Floats use ``repr`` so a
write/read round trip is exact and repeated runs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ArtifactIOError


def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows, cols = matrix.shape
    lines = [f"{rows},{cols}"]
    lines.extend(",".join(repr(float(v)) for v in row) for row in matrix)
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def read_matrix(path: str | Path) -> np.ndarray:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ArtifactIOError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(v) for v in lines[0].split(","))
        body = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
    except ValueError as exc:
        raise ArtifactIOError(f"{path}: malformed matrix file ({exc})") from exc
    body = body.reshape(rows, cols) if body.size == rows * cols else None
    if body is None:
        raise ArtifactIOError(f"{path}: body does not match header {rows}x{cols}")
    return body


def _default(obj: Any):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_default, allow_nan=True) + "\n"


def write_json(path: str | Path, data: Any) -> None:
    try:
        Path(path).write_text(dumps(data))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


def read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactIOError(f"{path}: invalid JSON ({exc})") from exc


def content_hash(data: Any) -> str:
    """Short stable digest of a JSON-serializable object."""
    return hashlib.sha256(json.dumps(data, sort_keys=True, default=_default).encode()).hexdigest()[:16]
