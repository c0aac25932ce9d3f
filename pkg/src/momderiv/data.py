"""Sample container and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """An i.i.d. sample of responses ``y`` (n,) and regressors ``x`` (n, p)."""

    y: np.ndarray
    x: np.ndarray
    column_names: tuple = field(default=())

    def __post_init__(self):
        y = _frozen(self.y).reshape(-1)
        x = _frozen(self.x)
        if x.ndim == 1:
            x = _frozen(x.reshape(-1, 1))
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DataError(f"x has shape {x.shape}, expected ({y.shape[0]}, p)")
        n, p = x.shape
        if not n >= p >= 1:
            raise DataError(f"need n >= p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataError("data contain non-finite entries")
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")
        bad = rank_deficient_columns(x, names)
        if bad:
            raise DataError(f"design matrix is rank deficient; collinear columns: {', '.join(bad)}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def unchecked(cls, y, x, column_names=()) -> "Dataset":
        """Construct without the rank/finite checks (for simulated samples)."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "y", _frozen(y).reshape(-1))
        object.__setattr__(obj, "x", _frozen(x))
        names = tuple(column_names) or tuple(f"x{j}" for j in range(obj.x.shape[1]))
        object.__setattr__(obj, "column_names", names)
        return obj

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class IndexInterval:
    """The index set [u_lower, u_upper] over which u ranges."""

    u_lower: float
    u_upper: float

    def __post_init__(self):
        if not self.u_lower < self.u_upper:
            raise ValueError(f"need u_lower < u_upper, got [{self.u_lower}, {self.u_upper}]")

    def contains(self, u: float) -> bool:
        return self.u_lower <= u <= self.u_upper


def rank_deficient_columns(x: np.ndarray, names: Sequence[str]) -> list:
    """Names of the columns involved in an exact linear dependence (empty if full rank)."""
    s = np.linalg.svd(x, compute_uv=False)
    tol = 1e-10 * s[0] if s.size else 0.0
    if s.size and s[-1] > tol:
        return []
    _, s, vt = np.linalg.svd(x, full_matrices=False)
    null = vt[s <= tol]
    involved = np.any(np.abs(null) > 1e-8, axis=0)
    return [names[j] for j in np.flatnonzero(involved)] or list(names)


def load_csv(path, response_column: str, intercept: bool = False) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row.

    ``y`` is the named column and ``x`` the remaining columns in file order,
    with a leading column of ones named ``(Intercept)`` when ``intercept``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if response_column not in header:
            raise DataError(f"{path}: response column {response_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {name!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value at row {lineno}, column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    iy = header.index(response_column)
    xcols = [j for j in range(len(header)) if j != iy]
    x = arr[:, xcols]
    names = [header[j] for j in xcols]
    if intercept:
        x = np.column_stack([np.ones(len(arr)), x])
        names = ["(Intercept)"] + names
    return Dataset(arr[:, iy], x, tuple(names))


def write_csv(data: Dataset, path, response_column: str = "y", intercept: bool = False) -> None:
    """Inverse of :func:`load_csv` (drops the ones column when ``intercept``)."""
    x, names = data.x, list(data.column_names)
    if intercept:
        x, names = x[:, 1:], names[1:]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([response_column] + names)
        for yi, xi in zip(data.y, x):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])
