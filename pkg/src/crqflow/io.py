"""CSV and JSON serialization with atomic writes.

Spectral-coefficient CSV: one comment header carrying the truncation degree
and the convention version, then p,q,m,value rows in canonical label order.
Trajectory CSV: the eight record columns in the documented order, full
float precision ('.' decimal separator, repr round-trip formatting).
Operator CSV: row,col,value triplets of the nonzero entries, row-major.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .basis import SpectralField, list_modes, mode_count
from .flow import CSV_COLUMNS, Trajectory

CONVENTION = "s3-std-1"


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return repr(float(x))


def write_spectral_csv(path: str | Path, field: SpectralField) -> None:
    lines = [f"# crqflow spectral-field convention={CONVENTION} n={field.n}"]
    lines.append("p,q,m,value")
    for md, coeff in zip(list_modes(field.n), field.coeffs):
        lines.append(f"{md.p},{md.q},{md.m},{fmt(coeff)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_spectral_csv(path: str | Path) -> SpectralField:
    raw = Path(path).read_text().strip().splitlines()
    if not raw or not raw[0].startswith("# crqflow spectral-field"):
        raise ValueError(f"{path}: not a crqflow spectral-field CSV")
    header = dict(
        chunk.split("=", 1) for chunk in raw[0].split() if "=" in chunk
    )
    if header.get("convention") != CONVENTION:
        raise ValueError(f"{path}: unsupported convention {header.get('convention')}")
    n = int(header["n"])
    index = {md: i for i, md in enumerate(list_modes(n))}
    coeffs = np.zeros(mode_count(n))
    for line in raw[2:]:
        if not line.strip():
            continue
        p, q, m, value = line.split(",")
        from .basis import HarmonicMode

        md = HarmonicMode(int(p), int(q), int(m))
        if md not in index:
            raise ValueError(f"{path}: mode {md} outside degree {n}")
        coeffs[index[md]] = float(value)
    return SpectralField(n, coeffs)


def trajectory_csv_text(trajectory: Trajectory) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for rec in trajectory.records:
        lines.append(
            ",".join(
                fmt(v)
                for v in (
                    rec.t, rec.energy, rec.grad_norm_sq, rec.volume,
                    rec.r, rec.q_l2, rec.fs42, rec.monotone_qty,
                )
            )
        )
    return "\n".join(lines) + "\n"


def write_trajectory_csv(path: str | Path, trajectory: Trajectory) -> None:
    atomic_write_text(path, trajectory_csv_text(trajectory))


def read_trajectory_csv(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_text().strip().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty trajectory file")
    header = raw[0].split(",")
    if header != list(CSV_COLUMNS):
        raise ValueError(f"{path}: unexpected trajectory columns {header}")
    rows = [line.split(",") for line in raw[1:] if line.strip()]
    if not rows:
        raise ValueError(f"{path}: trajectory has no records")
    data = np.array([[float(v) for v in row] for row in rows])
    if data.shape[1] != len(CSV_COLUMNS):
        raise ValueError(f"{path}: malformed trajectory row")
    return {name: data[:, j] for j, name in enumerate(CSV_COLUMNS)}


def write_operator_csv(path: str | Path, matrix: np.ndarray) -> None:
    lines = ["row,col,value"]
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            v = matrix[i, j]
            if v != 0.0:
                lines.append(f"{i},{j},{fmt(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path: str | Path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default)
    atomic_write_text(path, text + "\n")
