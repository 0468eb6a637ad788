"""
Plain-text matrix and measurement files.

Matrix files start with a header line ``M N FIELD`` (FIELD is ``R`` or ``C``)
followed by M lines of N whitespace-separated entries.  Complex entries are
written ``re:im``.  Floats are printed with ``repr`` so a write/read cycle is
exact at double precision.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InputError
from .kernel import Field, field_of


def _fmt(v: float) -> str:
    return repr(float(v))


def format_matrix(a) -> str:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InputError(f"can only write 1-D or 2-D arrays, got shape {a.shape}")
    field = field_of(a)
    lines = [f"{a.shape[0]} {a.shape[1]} {field.value}"]
    for row in a:
        if field is Field.COMPLEX:
            lines.append(" ".join(f"{_fmt(v.real)}:{_fmt(v.imag)}" for v in row))
        else:
            lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_matrix(path, a) -> None:
    Path(path).write_text(format_matrix(a), encoding="utf-8")


def _parse_entry(token: str, field: Field, where: str):
    try:
        if field is Field.COMPLEX:
            if ":" not in token:
                return complex(float(token), 0.0)
            re, im = token.split(":", 1)
            return complex(float(re), float(im))
        if ":" in token:
            raise ValueError
        return float(token)
    except ValueError:
        raise InputError(f"{where}: cannot parse entry {token!r}") from None


def parse_matrix(text: str, source: str = "<matrix>") -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"{source}: empty matrix file")
    header = lines[0].split()
    if len(header) != 3:
        raise InputError(f"{source}:1: header must be 'M N FIELD', got {lines[0]!r}")
    try:
        m, n = int(header[0]), int(header[1])
    except ValueError:
        raise InputError(f"{source}:1: bad dimensions in header {lines[0]!r}") from None
    if header[2] not in ("R", "C"):
        raise InputError(f"{source}:1: FIELD must be R or C, got {header[2]!r}")
    if m < 1 or n < 1:
        raise InputError(f"{source}:1: dimensions must be positive")
    field = Field(header[2])
    if len(lines) - 1 != m:
        raise InputError(f"{source}: expected {m} data rows, found {len(lines) - 1}")
    out = np.empty((m, n), dtype=field.dtype)
    for i, line in enumerate(lines[1:]):
        tokens = line.split()
        where = f"{source}: row {i + 1}"
        if len(tokens) != n:
            raise InputError(f"{where}: expected {n} entries, found {len(tokens)}")
        out[i] = [_parse_entry(t, field, where) for t in tokens]
    return out


def read_matrix(path) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read matrix file {path}: {exc.strerror}") from None
    return parse_matrix(text, str(path))


def read_measurements(path) -> np.ndarray:
    """One real decimal per non-empty line."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read measurement file {path}: {exc.strerror}") from None
    values = []
    for k, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise InputError(f"{path}:{k}: cannot parse measurement {line.strip()!r}") from None
    if not values:
        raise InputError(f"{path}: no measurements found")
    return np.array(values)


def write_measurements(path, y) -> None:
    Path(path).write_text("".join(_fmt(v) + "\n" for v in np.ravel(y)), encoding="utf-8")
