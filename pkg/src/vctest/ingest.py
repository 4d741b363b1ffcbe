"""CSV ingestion and factor encoding shared by the CLI and dataset loaders.

Factor levels are re-encoded to dense integer ids in order of first
appearance, which fixes the component ordering of the fitted model; reports
should always label components by factor name.  Numbers are parsed with the
dot as the decimal separator regardless of locale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import make_design

__all__ = ["InputTable", "RandomSpec", "build_model_inputs"]


@dataclass(frozen=True)
class InputTable:
    """Raw columns from a delimited text file, all values as strings."""

    columns: dict[str, list[str]]
    n_rows: int

    @classmethod
    def from_csv(cls, path) -> "InputTable":
        with open(path, "r", newline="", encoding="utf-8-sig") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if len(set(header)) != len(header):
                raise ValueError(f"{path}: duplicate column names")
            rows = list(reader)
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}
        return cls(columns=columns, n_rows=len(rows))

    def column(self, name: str) -> list[str]:
        if name not in self.columns:
            raise ValueError(f"no column named {name!r} (have {sorted(self.columns)})")
        values = self.columns[name]
        for i, v in enumerate(values):
            if v.strip() == "":
                raise ValueError(f"column {name!r} has a missing value in row {i + 2}")
        return values


@dataclass(frozen=True)
class RandomSpec:
    """How the random-effect blocks are built from factor columns.

    kind "random": one indicator block per listed factor (levels may
    co-occur freely).  kind "nested": two columns outer/inner, the second
    block indexing distinct (outer, inner) pairs.  kind "crossed": two
    columns, one block per factor.
    """

    kind: str
    factors: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in ("random", "nested", "crossed"):
            raise ValueError(f"unknown random-effect specification {self.kind!r}")
        if self.kind in ("nested", "crossed") and len(self.factors) != 2:
            raise ValueError(f"{self.kind} specification needs exactly two factors")
        if self.kind == "random" and not self.factors:
            raise ValueError("need at least one random factor")


def _encode(values: list[str]) -> tuple[np.ndarray, list[str]]:
    """Dense integer codes in first-appearance order."""
    seen: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.intp)
    for i, v in enumerate(values):
        codes[i] = seen.setdefault(v, len(seen))
    levels = [None] * len(seen)
    for v, c in seen.items():
        levels[c] = v
    return codes, levels


def _indicators(codes: np.ndarray, levels: int) -> np.ndarray:
    z = np.zeros((codes.shape[0], levels))
    z[np.arange(codes.shape[0]), codes] = 1.0
    return z


def _parse_numeric(values: list[str]):
    out = np.empty(len(values))
    for i, v in enumerate(values):
        try:
            out[i] = float(v)
        except ValueError:
            return None
    return out


def _fixed_matrix(table: InputTable, fixed: tuple[str, ...]):
    """Intercept plus fixed-effect columns.

    Columns that parse as numbers enter as-is; anything else is treated as
    a categorical factor and one-hot encoded with its first level dropped.
    """
    n = table.n_rows
    blocks = [np.ones((n, 1))]
    labels = ["(intercept)"]
    for name in fixed:
        values = table.column(name)
        numeric = _parse_numeric(values)
        if numeric is not None:
            blocks.append(numeric[:, None])
            labels.append(name)
        else:
            codes, levels = _encode(values)
            z = _indicators(codes, len(levels))[:, 1:]
            blocks.append(z)
            labels.extend(f"{name}={lev}" for lev in levels[1:])
    return np.hstack(blocks), labels


def build_model_inputs(
    table: InputTable,
    response: str,
    random_spec: RandomSpec,
    fixed: tuple[str, ...] = (),
):
    """Design matrices, response vector, and component labels from a table."""
    y = _parse_numeric(table.column(response))
    if y is None:
        raise ValueError(f"response column {response!r} is not numeric")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"response column {response!r} contains non-finite values")

    if random_spec.kind == "nested":
        outer, inner = random_spec.factors
        oc, _ = _encode(table.column(outer))
        pairs = [f"{a}\x1f{b}" for a, b in zip(table.column(outer), table.column(inner))]
        pc, _ = _encode(pairs)
        z_blocks = [_indicators(oc, oc.max() + 1), _indicators(pc, pc.max() + 1)]
        names = (outer, f"{inner}-in-{outer}")
    else:
        z_blocks = []
        names = []
        for name in random_spec.factors:
            codes, _ = _encode(table.column(name))
            z_blocks.append(_indicators(codes, codes.max() + 1))
            names.append(name)
        names = tuple(names)

    x, x_labels = _fixed_matrix(table, tuple(fixed))
    n, p, d = table.n_rows, x.shape[1], len(z_blocks)
    if n < p + d + 1:
        raise ValueError(
            f"too few rows: N={n} must be at least p + d + 1 = {p + d + 1}"
        )
    design = make_design(x, z_blocks, factor_names=names)
    return design, y, {"x_labels": x_labels, "factor_names": list(names)}
