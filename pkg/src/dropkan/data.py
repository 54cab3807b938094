"""CSV ingestion and the shared preprocessing used for every dataset.

Columns whose non-missing cells all parse as numbers are numeric; everything
else is categorical and becomes an ordinal code. Imputation statistics, ranges
and vocabularies are fit on the training rows only, then every feature is
min-max scaled to the spline grid ``[-1, 1]`` and clamped to ``[-1.5, 1.5]``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLAMP = 1.5
BUILTIN = ("car", "blobs")


@dataclass
class RawTable:
    columns: list
    rows: list                      # list of row lists; None marks a missing cell
    label_column: int = -1

    def __post_init__(self):
        if len(self.columns) < 2:
            raise ValueError("a table needs at least one feature column and a label column")
        width = len(self.columns)
        for n, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {n} has {len(row)} cells, expected {width}")
        if not -width <= self.label_column < width:
            raise ValueError(f"label column {self.label_column} out of range")
        self.label_column %= width

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def feature_columns(self) -> list:
        return [c for c in range(len(self.columns)) if c != self.label_column]

    def column(self, c: int) -> list:
        return [row[c] for row in self.rows]

    def missing(self, r: int, c: int) -> bool:
        return self.rows[r][c] is None


def parse_csv(text: str, label_column=-1, source: str = "<string>") -> RawTable:
    reader = csv.reader(io.StringIO(text), strict=True)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{source}: empty file") from None
    except csv.Error as exc:
        raise ValueError(f"{source}, line {reader.line_num}: {exc}") from None
    header = [h.strip() for h in header]
    rows = []
    while True:
        try:
            raw = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise ValueError(f"{source}, line {reader.line_num}: malformed row ({exc})") from None
        if not raw or (len(raw) == 1 and not raw[0].strip()):
            continue
        if len(raw) != len(header):
            raise ValueError(
                f"{source}, line {reader.line_num}: {len(raw)} cells, header has {len(header)}"
            )
        rows.append([cell.strip() if cell.strip() else None for cell in raw])
    if isinstance(label_column, str):
        if label_column not in header:
            raise ValueError(f"{source}: no column named {label_column!r}")
        label_column = header.index(label_column)
    return RawTable(header, rows, int(label_column))


def load_csv(path, label_column=-1) -> RawTable:
    """Read a comma-separated file with a header row; empty cells become missing."""
    path = Path(path)
    return parse_csv(path.read_text(), label_column, str(path))


def load_builtin(name: str, seed: int = 0) -> RawTable:
    if name == "car":
        text = resources.files("dropkan").joinpath("data/car.csv").read_text()
        return parse_csv(text, -1, "car.csv")
    if name == "blobs":
        return toy_blobs(seed=seed)
    raise ValueError(f"unknown builtin dataset {name!r}; choose from {BUILTIN}")


def load_dataset(spec: str, label_column=-1, seed: int = 0) -> RawTable:
    """A builtin name (``car``, ``blobs``) or a CSV path."""
    if spec in BUILTIN and not Path(spec).exists():
        return load_builtin(spec, seed)
    return load_csv(spec, label_column)


def toy_blobs(n: int = 200, seed: int = 0, separation: float = 3.0) -> RawTable:
    """Two well separated Gaussian blobs in the plane, labels ``a``/``b``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centers = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])
    points = centers[labels] + rng.normal(0.0, 0.5, size=(n, 2))
    rows = [[repr(float(p[0])), repr(float(p[1])), "ab"[c]] for p, c in zip(points, labels)]
    return RawTable(["x1", "x2", "label"], rows, 2)


def _as_float(cell):
    try:
        v = float(cell)
    except (TypeError, ValueError):
        return None
    return v if np.isfinite(v) else None


@dataclass
class ColumnSpec:
    name: str
    kind: str                       # "numeric" or "categorical"
    fill: object                    # median (numeric) or mode (categorical)
    lo: float = 0.0
    hi: float = 0.0
    vocabulary: list = field(default_factory=list)

    @property
    def unknown_code(self) -> int:
        return len(self.vocabulary)

    def scale(self, values: np.ndarray) -> np.ndarray:
        if self.hi == self.lo:
            return np.zeros_like(values)
        return 2.0 * (values - self.lo) / (self.hi - self.lo) - 1.0

    def unscale(self, scaled: np.ndarray) -> np.ndarray:
        if self.hi == self.lo:
            return np.full_like(scaled, self.lo)
        return (scaled + 1.0) / 2.0 * (self.hi - self.lo) + self.lo


@dataclass
class ColumnSchema:
    columns: list                   # ColumnSpec per feature column, in table order
    feature_index: list             # table column index for each spec
    label_index: int
    classes: list                   # label vocabulary, code = position

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "columns": [spec.__dict__ for spec in self.columns],
            "feature_index": self.feature_index,
            "label_index": self.label_index,
            "classes": self.classes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ColumnSchema":
        return cls([ColumnSpec(**c) for c in doc["columns"]], list(doc["feature_index"]),
                   int(doc["label_index"]), list(doc["classes"]))


def _column_kind(cells) -> str:
    present = [c for c in cells if c is not None]
    if present and all(_as_float(c) is not None for c in present):
        return "numeric"
    return "categorical"


def fit_schema(table: RawTable, train_rows: Sequence[int],
               classes: Optional[Sequence[str]] = None) -> ColumnSchema:
    """Fit imputation, ranges and vocabularies on ``train_rows`` only.

    Column kinds come from the whole table (a type, not a statistic). The label
    vocabulary defaults to the sorted labels of the whole table so the class
    count does not depend on which rows land in training.
    """
    train_rows = [int(r) for r in train_rows]
    if not train_rows:
        raise ValueError("cannot fit a schema on zero training rows")
    if min(train_rows) < 0 or max(train_rows) >= table.n_rows:
        raise ValueError("training row index out of range")
    specs = []
    for c in table.feature_columns:
        name = table.columns[c]
        kind = _column_kind(table.column(c))
        cells = [table.rows[r][c] for r in train_rows if table.rows[r][c] is not None]
        if kind == "numeric":
            values = np.array([float(v) for v in cells]) if cells else np.zeros(1)
            specs.append(ColumnSpec(name, kind, float(np.median(values)),
                                    float(values.min()), float(values.max())))
        else:
            vocab = sorted(set(cells))
            counts = {v: 0 for v in vocab}
            for v in cells:
                counts[v] += 1
            # most frequent, ties to the first in sorted order
            mode = max(vocab, key=lambda v: (counts[v], -vocab.index(v))) if vocab else None
            hi = float(max(len(vocab) - 1, 0))
            specs.append(ColumnSpec(name, kind, mode, 0.0, hi, vocab))
    if classes is None:
        classes = sorted({row[table.label_column] for row in table.rows
                          if row[table.label_column] is not None}, key=_label_key)
    return ColumnSchema(specs, table.feature_columns, table.label_column, list(classes))


def _label_key(label: str):
    v = _as_float(label)
    return (0, v, label) if v is not None else (1, 0.0, label)


@dataclass
class Transformed:
    features: np.ndarray
    labels: np.ndarray
    rows: np.ndarray                # table row indices kept, aligned with features
    rejected: list                  # table row indices dropped for a missing label


def encode_column(spec: ColumnSpec, cells) -> np.ndarray:
    """Raw cells -> unscaled numeric values (imputed, categories as ordinal codes)."""
    if spec.kind == "numeric":
        out = []
        for cell in cells:
            v = _as_float(cell) if cell is not None else None
            out.append(spec.fill if v is None else v)
        return np.array(out, dtype=np.float64)
    lookup = {v: k for k, v in enumerate(spec.vocabulary)}
    codes = []
    for cell in cells:
        cell = spec.fill if cell is None else cell
        codes.append(lookup.get(cell, spec.unknown_code))
    return np.array(codes, dtype=np.float64)


def transform(table: RawTable, schema: ColumnSchema, rows: Optional[Sequence[int]] = None) -> Transformed:
    """Encode, impute and scale ``rows`` (default: all) of ``table``."""
    rows = list(range(table.n_rows)) if rows is None else [int(r) for r in rows]
    class_code = {c: k for k, c in enumerate(schema.classes)}
    kept, rejected, labels = [], [], []
    for r in rows:
        label = table.rows[r][schema.label_index]
        if label is None:
            rejected.append(r)
            continue
        if label not in class_code:
            raise ValueError(f"row {r}: label {label!r} is not among the known classes")
        kept.append(r)
        labels.append(class_code[label])
    if rejected:
        log.warning("rejected %d row(s) with a missing label: %s", len(rejected), rejected[:10])
    features = np.empty((len(kept), schema.n_features), dtype=np.float64)
    for f, (spec, c) in enumerate(zip(schema.columns, schema.feature_index)):
        raw = encode_column(spec, [table.rows[r][c] for r in kept])
        features[:, f] = spec.scale(raw)
    np.clip(features, -CLAMP, CLAMP, out=features)
    return Transformed(features, np.array(labels, dtype=np.int64), np.array(kept, dtype=np.int64), rejected)


def inverse_transform(features: np.ndarray, schema: ColumnSchema) -> list:
    """Scaled features back to cell strings (numbers for numeric columns, names for categories)."""
    out = []
    for row in np.atleast_2d(features):
        cells = []
        for spec, z in zip(schema.columns, row):
            value = float(spec.unscale(np.array([z]))[0])
            if spec.kind == "numeric":
                cells.append(value)
            else:
                code = int(round(value))
                cells.append(spec.vocabulary[code] if 0 <= code < len(spec.vocabulary) else None)
        out.append(cells)
    return out


@dataclass
class DatasetSplits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    y_valid: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    fractions: tuple = (0.6, 0.2, 0.2)
    schema: Optional[ColumnSchema] = None
    indices: Optional[dict] = None  # split name -> table row indices

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]

    def split(self, name: str):
        return {"train": (self.x_train, self.y_train),
                "valid": (self.x_valid, self.y_valid),
                "test": (self.x_test, self.y_test)}[name]

    def save(self, path) -> None:
        """Replayable bundle: matrices, labels, row indices and the fitted schema."""
        meta = {"n_classes": self.n_classes, "fractions": list(self.fractions),
                "schema": self.schema.to_dict() if self.schema else None}
        arrays = {
            "x_train": self.x_train, "y_train": self.y_train,
            "x_valid": self.x_valid, "y_valid": self.y_valid,
            "x_test": self.x_test, "y_test": self.y_test,
            "meta": np.array(json.dumps(meta, sort_keys=True)),
        }
        for name, idx in (self.indices or {}).items():
            arrays[f"idx_{name}"] = np.asarray(idx, dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "DatasetSplits":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            indices = {k[4:]: z[k] for k in z.files if k.startswith("idx_")} or None
            schema = ColumnSchema.from_dict(meta["schema"]) if meta["schema"] else None
            return cls(z["x_train"], z["y_train"], z["x_valid"], z["y_valid"], z["x_test"], z["y_test"],
                       int(meta["n_classes"]), tuple(meta["fractions"]), schema, indices)


def split(table: RawTable, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplits:
    """Shuffle by ``seed``, cut contiguous train/valid/test blocks, fit on train, transform all."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if table.n_rows < 10:
        raise ValueError(f"need at least 10 rows to split, got {table.n_rows}")
    labelled = [r for r in range(table.n_rows) if table.rows[r][table.label_column] is not None]
    if len(labelled) < table.n_rows:
        log.warning("dropping %d row(s) with a missing label", table.n_rows - len(labelled))
    order = np.array(labelled)[np.random.default_rng(seed).permutation(len(labelled))]
    n = len(order)
    n_train = int(n * fractions[0])
    n_valid = int(n * fractions[1])
    parts = {"train": order[:n_train], "valid": order[n_train : n_train + n_valid],
             "test": order[n_train + n_valid :]}
    if n_train == 0:
        raise ValueError("training split is empty")
    schema = fit_schema(table, parts["train"])
    out = {name: transform(table, schema, idx) for name, idx in parts.items()}
    return DatasetSplits(
        out["train"].features, out["train"].labels,
        out["valid"].features, out["valid"].labels,
        out["test"].features, out["test"].labels,
        n_classes=len(schema.classes), fractions=fractions, schema=schema,
        indices={name: t.rows for name, t in out.items()},
    )
