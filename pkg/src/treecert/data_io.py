"""LIBSVM datasets, crash-record unification maps and dataset encoding."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Iterable, Mapping, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

NULL_KEY = "NULL"
DEFAULT_TRAIN_FRACTION = 0.20


class DataError(ValueError):
    """Malformed data file, mapping spec or record."""


class LibsvmParseError(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True, eq=False)
class Example:
    """Sparse sample; an absent index means 0."""

    features: Mapping[int, float]
    label: int

    def nonzero(self) -> dict[int, float]:
        return {i: v for i, v in sorted(self.features.items()) if v != 0}

    def dense(self, n_features: int) -> tuple[float, ...]:
        x = [0.0] * n_features
        for i, v in self.features.items():
            x[i] = float(v)
        return tuple(x)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Example):
            return NotImplemented
        return self.label == other.label and self.nonzero() == other.nonzero()

    def __hash__(self) -> int:
        return hash((self.label, tuple(self.nonzero().items())))


@dataclass(eq=False)
class Dataset:
    examples: list[Example]
    n_features: int
    feature_names: list[str] | None = None

    def __post_init__(self):
        for i, ex in enumerate(self.examples):
            bad = [k for k in ex.features if k < 0 or k >= self.n_features]
            if bad:
                raise DataError(f"example {i}: feature index {bad[0]} outside [0, {self.n_features})")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.n_features == other.n_features and self.examples == other.examples

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.zeros((len(self.examples), self.n_features), dtype=float)
        y = np.zeros(len(self.examples), dtype=int)
        for r, ex in enumerate(self.examples):
            for c, v in ex.features.items():
                X[r, c] = v
            y[r] = ex.label
        return X, y

    def subset(self, indices: Iterable[int]) -> Dataset:
        return Dataset([self.examples[i] for i in indices], self.n_features, self.feature_names)

    @classmethod
    def from_arrays(cls, X: np.ndarray, y: Sequence[int], feature_names=None) -> Dataset:
        X = np.asarray(X, dtype=float)
        examples = [
            Example({int(c): float(row[c]) for c in np.flatnonzero(row)}, int(label))
            for row, label in zip(X, y)
        ]
        return cls(examples, X.shape[1], feature_names)


# ---------------------------------------------------------------------------
# LIBSVM


def _parse_label(token: str, line_no: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise LibsvmParseError(line_no, f"non-numeric label {token!r}") from None
    if not value.is_integer():
        raise LibsvmParseError(line_no, f"label {token!r} is not a class id")
    return int(value)


def parse_libsvm(source: str | TextIO, n_features: int | None = None) -> Dataset:
    """Read ``label idx:val ...`` lines with 1-based ascending indices.

    Indices are shifted to 0-based. ``n_features`` overrides the inferred
    dimension (the largest index seen) and must not be smaller than it.
    """
    stream = io.StringIO(source) if isinstance(source, str) else source
    examples = []
    max_index = 0
    for line_no, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens:
            continue
        label = _parse_label(tokens[0], line_no)
        feats: dict[int, float] = {}
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(line_no, f"expected idx:val, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(line_no, f"non-numeric token {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(line_no, f"index {idx} is not 1-based")
            if idx <= prev:
                raise LibsvmParseError(line_no, f"index {idx} after {prev} (duplicate or descending)")
            if not math.isfinite(val):
                raise LibsvmParseError(line_no, f"non-finite value {val_s!r}")
            prev = idx
            feats[idx - 1] = val
        max_index = max(max_index, prev)
        examples.append(Example(feats, label))
    if n_features is None:
        n_features = max_index
    elif n_features < max_index:
        raise DataError(f"declared n_features={n_features} but index {max_index} present")
    return Dataset(examples, n_features)


def export_libsvm(dataset: Dataset) -> str:
    """Inverse of :func:`parse_libsvm`; zero values are omitted."""
    lines = []
    for ex in dataset.examples:
        parts = [str(ex.label)]
        parts += [f"{i + 1}:{float(v)!r}" for i, v in ex.nonzero().items()]
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# unification maps

_WS = re.compile(r"\s+")


def normalize_category(raw: str) -> str:
    return _WS.sub(" ", raw).strip()


@dataclass(frozen=True)
class UnificationMap:
    feature_name: str
    entries: Mapping[str, int]
    default_code: int = 99
    column: str | None = None  # raw column name; defaults to feature_name
    codebook: frozenset[int] | None = None
    labels: Mapping[int, str] = field(default_factory=dict)  # code -> category name

    @property
    def source_column(self) -> str:
        return self.column or self.feature_name

    def lookup(self, raw: str | None) -> int | None:
        """Unified code for ``raw``; None if unmapped. Null cells match the ``NULL`` entry."""
        if raw is None or not str(raw).strip():
            return self.entries.get(NULL_KEY)
        return self.entries.get(normalize_category(str(raw)))


_MAP_KEYS = {"feature", "default", "entries", "column", "codebook", "labels"}


def load_unification_maps(spec: str | Sequence[Mapping[str, Any]]) -> list[UnificationMap]:
    doc = json.loads(spec) if isinstance(spec, str) else spec
    if isinstance(doc, Mapping):
        doc = [doc]
    if not isinstance(doc, list):
        raise DataError("mapping spec must be a list of maps")
    maps = []
    for i, raw in enumerate(doc):
        where = f"map[{i}]"
        if not isinstance(raw, Mapping) or "feature" not in raw or "entries" not in raw:
            raise DataError(f"{where}: needs 'feature' and 'entries'")
        unknown = set(raw) - _MAP_KEYS
        if unknown:
            raise DataError(f"{where}: unknown keys {sorted(unknown)}")
        default = raw.get("default", 99)
        codebook = frozenset(raw["codebook"]) if "codebook" in raw else None
        entries: dict[str, int] = {}
        for key, code in raw["entries"].items():
            norm = normalize_category(key)
            if norm in entries:
                raise DataError(f"{where}: duplicate raw key {key!r}")
            if not isinstance(code, int) or isinstance(code, bool):
                raise DataError(f"{where}: code for {key!r} must be an integer")
            if codebook is not None and code not in codebook:
                raise DataError(f"{where}: code {code} for {key!r} is outside the codebook")
            entries[norm] = code
        if codebook is not None and default not in codebook:
            raise DataError(f"{where}: default code {default} is outside the codebook")
        labels = {int(k): str(v) for k, v in raw.get("labels", {}).items()}
        maps.append(UnificationMap(raw["feature"], entries, default, raw.get("column"), codebook, labels))
    return maps


BUNDLED_MAPS = {
    "maryland": "collision_manner_maryland.json",
    "arizona": "collision_manner_arizona.json",
}


def bundled_maps(state: str) -> list[UnificationMap]:
    """Collision-manner maps for ``maryland`` or ``arizona``."""
    try:
        name = BUNDLED_MAPS[state.lower()]
    except KeyError:
        raise DataError(f"no bundled map for state {state!r}") from None
    return load_unification_maps(resources.files("treecert.data").joinpath(name).read_text())


@dataclass(frozen=True)
class AuditEntry:
    file: str
    row: int
    column: str
    raw_value: str


@dataclass
class AuditLog:
    entries: list[AuditEntry] = field(default_factory=list)

    def add(self, entry: AuditEntry) -> None:
        logger.info("unmapped value %r in column %s (%s row %d)", entry.raw_value, entry.column, entry.file, entry.row)
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for e in self.entries:
            writer.writerow([e.file, e.row, e.column, e.raw_value])
        return buf.getvalue()


def unify_record(
    record: Mapping[str, Any],
    maps: Sequence[UnificationMap],
    audit: AuditLog | None = None,
    *,
    source: str = "",
    row: int = 0,
) -> dict[str, Any]:
    """Replace every mapped column by its unified code.

    Unmapped or null values fall back to the map's default code and are
    recorded in ``audit``. Columns without a map pass through unchanged.
    """
    out = dict(record)
    for m in maps:
        raw = record.get(m.source_column)
        code = m.lookup(raw)
        if code is None:
            code = m.default_code
            if audit is not None:
                audit.add(AuditEntry(source, row, m.source_column, "" if raw is None else str(raw)))
        if m.source_column != m.feature_name:
            out.pop(m.source_column, None)
        out[m.feature_name] = code
    return out


def read_crash_csv(stream: TextIO) -> list[dict[str, str]]:
    return list(csv.DictReader(stream))


@dataclass(frozen=True)
class LabelRule:
    """Binary severity label: 1 iff ``record[column]`` is one of ``positive``."""

    column: str
    positive: frozenset[str]

    def __call__(self, record: Mapping[str, Any]) -> bool:
        value = record.get(self.column)
        return value is not None and normalize_category(str(value)) in self.positive


def _to_number(value: Any, column: str, row: int) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    try:
        return float(str(value).strip())
    except ValueError:
        raise DataError(f"row {row}: column {column!r} has non-numeric value {value!r}") from None


def encode_dataset(
    records: Sequence[Mapping[str, Any]],
    feature_order: Sequence[str],
    label_rule: Callable[[Mapping[str, Any]], bool],
) -> Dataset:
    examples = []
    for r, rec in enumerate(records):
        missing = [c for c in feature_order if c not in rec]
        if missing:
            raise DataError(f"row {r}: unknown column {missing[0]!r}")
        feats = {}
        for i, col in enumerate(feature_order):
            v = _to_number(rec[col], col, r)
            if v != 0:
                feats[i] = v
        examples.append(Example(feats, 1 if label_rule(rec) else 0))
    return Dataset(examples, len(feature_order), list(feature_order))


def split_train_test(
    dataset: Dataset, train_fraction: float = DEFAULT_TRAIN_FRACTION, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Seeded shuffle into ``floor(n * f)`` training and the remaining test rows.

    Each side keeps the source order of its rows.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * train_fraction)
    return dataset.subset(sorted(perm[:n_train])), dataset.subset(sorted(perm[n_train:]))
