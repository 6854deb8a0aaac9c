"""Labeled embedding tables and their on-disk formats.

Two formats are supported:

``binary`` (``.emb``)
    One JSON header line ``{"version":1,"count":N,"dim":D,"labels":[...]}``
    followed by ``N*D`` little-endian float32 values in row-major order.

``csv``
    ``label,v0,...,v{D-1}`` per row, no header, UTF-8.

Rows are held as float64 in memory regardless of the storage format.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1
_FLOAT_LE = np.dtype("<f4")


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files or invalid table contents."""


@dataclass(frozen=True)
class EmbeddingTable:
    labels: tuple[str, ...]
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        rows = np.array(self.rows, dtype=np.float64, copy=True)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, 0)
        if rows.ndim != 2:
            raise EmbeddingFormatError(f"rows must be 2-D, got shape {rows.shape}")
        if rows.shape[0] != len(labels):
            raise EmbeddingFormatError(
                f"{len(labels)} labels but {rows.shape[0]} rows"
            )
        seen = set()
        for i, label in enumerate(labels):
            if label in seen:
                raise EmbeddingFormatError(f"duplicate label {label!r} at row {i}")
            seen.add(label)
        bad = ~np.isfinite(rows)
        if bad.any():
            i = int(np.argwhere(bad)[0][0])
            raise EmbeddingFormatError(f"non-finite value in row {i} ({labels[i]!r})")
        rows.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def empty(cls, dim: int) -> "EmbeddingTable":
        return cls((), np.zeros((0, dim)))

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index_map[label]
        except KeyError:
            raise KeyError(f"label {label!r} not in table") from None

    @property
    def _index_map(self) -> dict[str, int]:
        cached = self.__dict__.get("_index_cache")
        if cached is None:
            cached = {label: i for i, label in enumerate(self.labels)}
            object.__setattr__(self, "_index_cache", cached)
        return cached

    def row(self, label: str) -> np.ndarray:
        return self.rows[self.index(label)]

    def with_rows(self, rows: np.ndarray) -> "EmbeddingTable":
        """Same labels, new row matrix."""
        return EmbeddingTable(self.labels, rows)

    def select(self, labels: Sequence[str]) -> "EmbeddingTable":
        idx = [self.index(label) for label in labels]
        return EmbeddingTable(tuple(labels), self.rows[idx])

    def equals(self, other: "EmbeddingTable") -> bool:
        return (
            self.labels == other.labels
            and self.rows.shape == other.rows.shape
            and np.array_equal(self.rows, other.rows)
        )


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown embedding format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def load_table(path, fmt: str | None = None) -> EmbeddingTable:
    """Read a table; the format defaults to ``csv`` for ``.csv`` files, else binary."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        return _load_csv(path)
    return _load_binary(path)


def save_table(table: EmbeddingTable, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "csv":
        _save_csv(table, path)
    else:
        _save_binary(table, path)


def _load_binary(path: Path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        version = header["version"]
        count = int(header["count"])
        dim = int(header["dim"])
        labels = header["labels"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise EmbeddingFormatError(f"{path}: malformed header ({exc})") from None
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    if count < 0 or dim < 0 or len(labels) != count:
        raise EmbeddingFormatError(
            f"{path}: malformed header (count={count}, dim={dim}, {len(labels)} labels)"
        )
    expected = count * dim * _FLOAT_LE.itemsize
    if len(payload) != expected:
        # locate the first row that runs short
        row = len(payload) // max(dim * _FLOAT_LE.itemsize, 1)
        raise EmbeddingFormatError(
            f"{path}: row length mismatch at row {min(row, max(count - 1, 0))}: "
            f"expected {expected} payload bytes, found {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=_FLOAT_LE).reshape(count, dim)
    return _build(path, labels, values.astype(np.float64))


def _save_binary(table: EmbeddingTable, path: Path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "count": len(table),
        "dim": table.dim,
        "labels": list(table.labels),
    }
    data = table.rows.astype(_FLOAT_LE).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        fh.write(data)


def _load_csv(path: Path) -> EmbeddingTable:
    labels: list[str] = []
    rows: list[list[float]] = []
    dim = None
    with open(path, newline="", encoding="utf-8") as fh:
        for i, record in enumerate(csv.reader(fh)):
            if not record:
                continue
            label, *values = record
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}: row length mismatch at row {i}: expected {dim} values, got {len(values)}"
                )
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise EmbeddingFormatError(f"{path}: unparsable value in row {i}") from None
            labels.append(label)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    return _build(path, labels, values)


def _save_csv(table: EmbeddingTable, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for label, row in zip(table.labels, table.rows):
            writer.writerow([label, *(repr(float(v)) for v in row)])


def _build(path, labels, values) -> EmbeddingTable:
    seen = {}
    for i, label in enumerate(labels):
        if label in seen:
            raise EmbeddingFormatError(
                f"{path}: duplicate label {label!r} at row {i} (first seen at row {seen[label]})"
            )
        seen[label] = i
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argwhere(bad)[0][0])
        raise EmbeddingFormatError(f"{path}: non-finite value in row {i}")
    return EmbeddingTable(tuple(labels), values)


def normalize(table: EmbeddingTable) -> EmbeddingTable:
    """Scale every row to unit L2 norm."""
    norms = np.linalg.norm(table.rows, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"zero-vector row for label {table.labels[zero[0]]!r}")
    return table.with_rows(table.rows / norms[:, None])


def is_normalized(table: EmbeddingTable, tol: float = 1e-6) -> bool:
    if len(table) == 0:
        return True
    norms = np.linalg.norm(table.rows, axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))


def similarity_matrix(table: EmbeddingTable) -> np.ndarray:
    """Cosine similarity matrix of a normalized table."""
    if not is_normalized(table):
        raise ValueError("similarity_matrix needs a normalized table; call normalize() first")
    sim = table.rows @ table.rows.T
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)

