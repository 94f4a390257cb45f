"""Records, labeled pairs, datasets and the benchmark CSV layout."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Record = tuple[str, ...]

SPLIT_FILES = ("train.csv", "valid.csv", "test.csv")
PAIR_COLUMNS = ("ltable_id", "rtable_id", "label")


class DatasetError(ValueError):
    """Malformed dataset input. The message names the file and line."""


@dataclass(frozen=True)
class Schema:
    attributes: tuple[str, ...]

    def __post_init__(self):
        attrs = tuple(self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if not attrs:
            raise ValueError("schema needs at least one attribute")
        if any(not a for a in attrs):
            raise ValueError("attribute names must be non-empty")
        if len(set(attrs)) != len(attrs):
            raise ValueError(f"duplicate attribute names in {attrs}")

    def __len__(self) -> int:
        return len(self.attributes)

    def check_record(self, record: Sequence[str]) -> None:
        if len(record) != len(self.attributes):
            raise ValueError(
                f"record has {len(record)} values, schema has {len(self.attributes)} attributes"
            )


@dataclass(frozen=True)
class RecordPair:
    left: Record
    right: Record

    def __post_init__(self):
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "right", tuple(self.right))
        if len(self.left) != len(self.right):
            raise ValueError("left and right records have different lengths")

    def swapped(self) -> "RecordPair":
        return RecordPair(self.right, self.left)


@dataclass(frozen=True)
class LabeledPair(RecordPair):
    label: int = 0

    def __post_init__(self):
        super().__post_init__()
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def swapped(self) -> "LabeledPair":
        return LabeledPair(self.right, self.left, self.label)


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    train: tuple[LabeledPair, ...] = ()
    valid: tuple[LabeledPair, ...] = ()
    test: tuple[LabeledPair, ...] = ()
    name: str = ""

    def __post_init__(self):
        for split in ("train", "valid", "test"):
            pairs = tuple(getattr(self, split))
            object.__setattr__(self, split, pairs)
            for p in pairs:
                self.schema.check_record(p.left)
                self.schema.check_record(p.right)

    def split(self, name: str) -> tuple[LabeledPair, ...]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_pairs(self) -> list[LabeledPair]:
        return [*self.train, *self.valid, *self.test]


def split_pairs(pairs: Sequence, ratios=(3, 1, 1), seed: int = 0):
    """Shuffle ``pairs`` under ``seed`` and cut them into train/valid/test.

    Valid and test sizes are floored; the remainder goes to train.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios <= 0):
        raise ValueError("ratios must be three positive numbers")
    n = len(pairs)
    if n == 0:
        return [], [], []
    frac = ratios / ratios.sum()
    n_valid = math.floor(n * frac[1])
    n_test = math.floor(n * frac[2])
    n_train = n - n_valid - n_test
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [pairs[i] for i in order]
    return (
        shuffled[:n_train],
        shuffled[n_train:n_train + n_valid],
        shuffled[n_train + n_valid:],
    )


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    if not path.is_file():
        raise DatasetError(f"{path}: missing file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}:1: missing header row") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append((reader.line_num, row))
    return [h.strip() for h in header], rows


def _parse_label(raw: str, path: Path, line: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise DatasetError(f"{path}:{line}: label {raw!r} is not 0 or 1") from None
    if value not in (0.0, 1.0):
        raise DatasetError(f"{path}:{line}: label {raw!r} is not 0 or 1")
    return int(value)


def _read_table(path: Path) -> tuple[list[str], dict[str, Record]]:
    header, rows = _read_csv(path)
    if not header or header[0] != "id":
        raise DatasetError(f"{path}:1: first column must be 'id'")
    table = {}
    for line, row in rows:
        key = row[0].strip()
        if key in table:
            raise DatasetError(f"{path}:{line}: duplicate id {key!r}")
        table[key] = tuple(row[1:])
    return header[1:], table


def _read_split(path: Path, left: dict, right: dict, names: tuple[str, str]) -> list[LabeledPair]:
    header, rows = _read_csv(path)
    missing = [c for c in PAIR_COLUMNS if c not in header]
    if missing:
        raise DatasetError(f"{path}:1: missing columns {missing}")
    li, ri, yi = (header.index(c) for c in PAIR_COLUMNS)
    pairs = []
    for line, row in rows:
        lid, rid = row[li].strip(), row[ri].strip()
        if lid not in left:
            raise DatasetError(f"{path}:{line}: ltable_id {lid} not found in {names[0]}")
        if rid not in right:
            raise DatasetError(f"{path}:{line}: rtable_id {rid} not found in {names[1]}")
        pairs.append(LabeledPair(left[lid], right[rid], _parse_label(row[yi], path, line)))
    return pairs


def load_benchmark_dataset(dir_path, seed: int = 0, ratios=(3, 1, 1)) -> Dataset:
    """Load a dataset directory.

    Two layouts are accepted. The benchmark layout has ``tableA.csv``,
    ``tableB.csv`` and ``train/valid/test.csv`` with columns
    ``ltable_id,rtable_id,label``. The flat layout is a single ``pairs.csv``
    with ``left_<attr>`` / ``right_<attr>`` columns and a ``label`` column,
    split with :func:`split_pairs` under ``seed``.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    if not (root / "tableA.csv").exists() and (root / "pairs.csv").exists():
        schema, pairs = load_pairs_csv(root / "pairs.csv")
        train, valid, test = split_pairs(pairs, ratios, seed)
        return Dataset(schema, train, valid, test, name=root.name)

    attrs_a, table_a = _read_table(root / "tableA.csv")
    attrs_b, table_b = _read_table(root / "tableB.csv")
    if attrs_a != attrs_b:
        raise DatasetError(
            f"{root / 'tableB.csv'}:1: header {attrs_b} does not match tableA.csv header {attrs_a}"
        )
    schema = Schema(tuple(attrs_a))
    splits = [
        _read_split(root / f, table_a, table_b, ("tableA.csv", "tableB.csv"))
        for f in SPLIT_FILES
    ]
    return Dataset(schema, *splits, name=root.name)


def load_pairs_csv(path, require_label: bool = True):
    """Read a flat pairs file. Returns ``(schema, pairs)``.

    With ``require_label=False`` a missing ``label`` column yields
    :class:`RecordPair` objects instead of :class:`LabeledPair`.
    """
    path = Path(path)
    header, rows = _read_csv(path)
    left_cols = [(i, h[len("left_"):]) for i, h in enumerate(header) if h.startswith("left_")]
    right_cols = [(i, h[len("right_"):]) for i, h in enumerate(header) if h.startswith("right_")]
    attrs = [a for _, a in left_cols]
    if not attrs:
        raise DatasetError(f"{path}:1: no left_<attr> columns")
    if attrs != [a for _, a in right_cols]:
        raise DatasetError(f"{path}:1: left_ and right_ columns do not name the same attributes")
    has_label = "label" in header
    if require_label and not has_label:
        raise DatasetError(f"{path}:1: missing 'label' column")
    yi = header.index("label") if has_label else None
    pairs = []
    for line, row in rows:
        left = tuple(row[i] for i, _ in left_cols)
        right = tuple(row[i] for i, _ in right_cols)
        if yi is None:
            pairs.append(RecordPair(left, right))
        else:
            pairs.append(LabeledPair(left, right, _parse_label(row[yi], path, line)))
    return Schema(tuple(attrs)), pairs


def pairs_csv_ids(path) -> list[str]:
    """Row identifiers of a pairs file: the ``id`` column if present, else row numbers."""
    header, rows = _read_csv(Path(path))
    if "id" in header:
        i = header.index("id")
        return [row[i] for _, row in rows]
    return [str(k) for k in range(len(rows))]


def save_pairs_csv(pairs: Iterable[RecordPair], schema: Schema, path) -> None:
    header = [f"left_{a}" for a in schema.attributes] + [f"right_{a}" for a in schema.attributes]
    pairs = list(pairs)
    labeled = all(isinstance(p, LabeledPair) for p in pairs)
    if labeled:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in pairs:
            row = list(p.left) + list(p.right)
            if labeled:
                row.append(str(p.label))
            writer.writerow(row)
