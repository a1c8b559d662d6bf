"""
Cotton-experiment data layout and the five nested linear predictors.

Input CSV header is ``count,def,stage,rep``. Defoliation may be given as a
proportion (0-1) or a percentage (0-100); when any value exceeds 1 the whole
column is read as percent.

Predictors (intercept is shared by all stages):

1. ``1``
2. ``1, def``
3. ``1, def, def^2``
4. ``1, def x stage (5 columns), def^2``
5. ``1, def x stage (5 columns), def^2 x stage (5 columns)``
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "STAGES",
    "N_COEF",
    "ParseError",
    "DesignError",
    "CountDataset",
    "DesignMatrix",
    "parse_csv",
    "build_design",
    "design_rows",
    "column_span_contains",
]

STAGES = ("vegetative", "bud", "blossom", "fig", "boll")
N_COEF = {1: 1, 2: 2, 3: 3, 4: 7, 5: 11}

_STAGE_ALIASES = {
    "vegetative": "vegetative",
    "vegetativo": "vegetative",
    "bud": "bud",
    "flower-bud": "bud",
    "flower bud": "bud",
    "floral-bud": "bud",
    "botao floral": "bud",
    "botão floral": "bud",
    "blossom": "blossom",
    "florescimento": "blossom",
    "fig": "fig",
    "maca": "fig",
    "maçã": "fig",
    "boll": "boll",
    "cotton boll": "boll",
    "capulho": "boll",
}

_HEADER = ("count", "def", "stage", "rep")


class ParseError(ValueError):
    """Malformed input data; ``line`` is the 1-based line number (header is line 1)."""

    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class CountDataset:
    counts: np.ndarray
    defoliation: np.ndarray
    stage: tuple
    replicate: np.ndarray
    def_was_percent: bool = False
    checksum: str = ""

    def __post_init__(self):
        n = len(self.counts)
        if not (len(self.defoliation) == len(self.stage) == len(self.replicate) == n):
            raise ValueError("CountDataset columns differ in length")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")
        if np.any((self.defoliation < 0) | (self.defoliation > 1)):
            raise ValueError("defoliation must lie in [0, 1]")
        bad = set(self.stage) - set(STAGES)
        if bad:
            raise ValueError(f"unknown stage(s): {sorted(bad)}")

    def __len__(self):
        return len(self.counts)

    @classmethod
    def from_columns(cls, counts, defoliation, stage, replicate=None):
        counts = np.asarray(counts, dtype=np.int64)
        defoliation = np.asarray(defoliation, dtype=float)
        if replicate is None:
            replicate = np.ones(len(counts), dtype=np.int64)
        return cls(counts, defoliation, tuple(stage), np.asarray(replicate, dtype=np.int64))


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    names: tuple
    predictor_id: int

    @property
    def shape(self):
        return self.matrix.shape

    def rank(self):
        return int(np.linalg.matrix_rank(self.matrix))

    def is_full_rank(self):
        return self.rank() == self.matrix.shape[1]


def _normalize_stage(raw, line):
    key = raw.strip().lower()
    try:
        return _STAGE_ALIASES[key]
    except KeyError:
        raise ParseError(f"unknown stage label {raw!r}", line) from None


def _parse_count(raw, line):
    text = raw.strip()
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"count {raw!r} is not a number", line) from None
    if value < 0 or value != int(value):
        raise ParseError(f"count {raw!r} is not a non-negative integer", line)
    return int(value)


def parse_csv(source):
    """Read a ``count,def,stage,rep`` CSV from a path, bytes, or a text/binary stream."""
    if isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
        if isinstance(raw, str):
            raw = raw.encode("utf-8")
    checksum = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8-sig")

    reader = csv.reader(io.StringIO(text))
    rows = iter(reader)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError("empty input", 1) from None
    header = tuple(h.strip().lower() for h in header)
    if header != _HEADER:
        missing = [h for h in _HEADER if h not in header]
        detail = f"missing column(s) {missing}" if missing else f"got {list(header)}"
        raise ParseError(f"header must be {','.join(_HEADER)}; {detail}", 1)

    counts, defs, stages, reps = [], [], [], []
    for line, row in enumerate(rows, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, found {len(row)}", line)
        counts.append(_parse_count(row[0], line))
        try:
            d = float(row[1])
        except ValueError:
            raise ParseError(f"defoliation {row[1]!r} is not a number", line) from None
        if not (0.0 <= d <= 100.0):
            raise ParseError(f"defoliation {row[1]!r} outside [0, 100]", line)
        defs.append((d, line))
        stages.append(_normalize_stage(row[2], line))
        try:
            reps.append(int(row[3]))
        except ValueError:
            raise ParseError(f"replicate {row[3]!r} is not an integer", line) from None
    if not counts:
        raise ParseError("no data rows", 2)

    values = np.array([d for d, _ in defs])
    percent = bool(np.any(values > 1.0))
    if percent:
        values = values / 100.0
    return CountDataset(
        counts=np.array(counts, dtype=np.int64),
        defoliation=values,
        stage=tuple(stages),
        replicate=np.array(reps, dtype=np.int64),
        def_was_percent=percent,
        checksum=checksum,
    )


def _names(predictor_id):
    if predictor_id == 1:
        return ("(Intercept)",)
    if predictor_id == 2:
        return ("(Intercept)", "def")
    if predictor_id == 3:
        return ("(Intercept)", "def", "def2")
    lin = tuple(f"def:{s}" for s in STAGES)
    if predictor_id == 4:
        return ("(Intercept)",) + lin + ("def2",)
    return ("(Intercept)",) + lin + tuple(f"def2:{s}" for s in STAGES)


def design_rows(defoliation, stage, predictor_id):
    """Model-matrix rows for arbitrary ``(def, stage)`` pairs."""
    if predictor_id not in N_COEF:
        raise DesignError(f"predictor_id must be one of 1..5, got {predictor_id!r}")
    d = np.asarray(defoliation, dtype=float)
    n = d.size
    one = np.ones(n)
    if predictor_id == 1:
        cols = [one]
    elif predictor_id == 2:
        cols = [one, d]
    elif predictor_id == 3:
        cols = [one, d, d * d]
    else:
        stage = list(stage)
        unknown = set(stage) - set(STAGES)
        if unknown:
            raise DesignError(f"unknown stage(s): {sorted(unknown)}")
        ind = np.array([[s == level for level in STAGES] for s in stage], dtype=float).reshape(n, 5)
        lin = [d * ind[:, j] for j in range(5)]
        if predictor_id == 4:
            cols = [one, *lin, d * d]
        else:
            cols = [one, *lin, *[d * d * ind[:, j] for j in range(5)]]
    return np.column_stack(cols)


def build_design(data, predictor_id):
    """Design matrix of one of the five nested predictors."""
    if len(data) == 0:
        raise DesignError("dataset is empty")
    matrix = design_rows(data.defoliation, data.stage, predictor_id)
    return DesignMatrix(matrix=matrix, names=_names(predictor_id), predictor_id=int(predictor_id))


def column_span_contains(outer, inner, tol=1e-8):
    """True when every column of ``inner`` lies in the column span of ``outer``."""
    outer = np.asarray(outer, dtype=float)
    inner = np.asarray(inner, dtype=float)
    if outer.shape[0] != inner.shape[0]:
        return False
    coef, *_ = np.linalg.lstsq(outer, inner, rcond=None)
    resid = inner - outer @ coef
    scale = 1.0 + np.abs(inner).max()
    return bool(np.abs(resid).max() <= tol * scale)
