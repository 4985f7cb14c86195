"""Entity/pair data model, Magellan-style benchmark loading, splitting and metrics."""

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import (
    DatasetFormatError,
    DatasetIntegrityError,
    DatasetLoadError,
    SplitError,
)

PAIR_FILE_NAMES = ("pairs.csv", "train.csv", "valid.csv", "test.csv")


@dataclass(frozen=True)
class EntityRecord:
    """One entity as an ordered sequence of (attribute name, value) pairs."""

    id: str
    attributes: tuple

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple((str(k), str(v)) for k, v in self.attributes))
        names = [k for k, _ in self.attributes]
        if any(not n for n in names):
            raise ValueError("attribute names must be non-empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in record {self.id!r}")

    @property
    def names(self):
        return [k for k, _ in self.attributes]

    def value(self, name: str) -> str:
        for k, v in self.attributes:
            if k == name:
                return v
        raise KeyError(name)

    def __len__(self):
        return len(self.attributes)

    def to_dict(self) -> dict:
        return {"id": self.id, "attributes": [list(kv) for kv in self.attributes]}

    @classmethod
    def from_dict(cls, d: dict) -> "EntityRecord":
        return cls(id=d["id"], attributes=tuple((k, v) for k, v in d["attributes"]))


@dataclass(frozen=True)
class CandidatePair:
    """Two records to be matched, with an optional binary label."""

    left: EntityRecord
    right: EntityRecord
    label: Optional[int] = None

    def __post_init__(self):
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def to_dict(self) -> dict:
        d = {"left": self.left.to_dict(), "right": self.right.to_dict()}
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CandidatePair":
        return cls(
            left=EntityRecord.from_dict(d["left"]),
            right=EntityRecord.from_dict(d["right"]),
            label=d.get("label"),
        )


@dataclass
class DatasetBundle:
    """A named collection of candidate pairs."""

    pairs: list
    name: str = "dataset"
    split_tag: str = "unsplit"

    def __len__(self):
        return len(self.pairs)

    @property
    def labels(self):
        return [p.label for p in self.pairs]

    @property
    def num_positive(self) -> int:
        return sum(1 for p in self.pairs if p.label == 1)


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float
    true_pos: int
    false_pos: int
    false_neg: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.true_pos,
            "fp": self.false_pos,
            "fn": self.false_neg,
        }


@dataclass
class SynonymLexicon:
    """Maps a surface string to the set of strings it may be replaced with."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for term, repls in self.entries.items():
            repls = set(repls) - {term}
            if not repls:
                raise ValueError(f"lexicon entry {term!r} has no distinct replacement")
            self.entries[term] = repls

    @classmethod
    def load(cls, path) -> "SynonymLexicon":
        entries = {}
        path = Path(path)
        if not path.exists():
            raise DatasetLoadError(f"lexicon file not found: {path}")
        with open(path, newline="", encoding="utf-8") as f:
            for row_no, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                if len(row) != 2:
                    raise DatasetFormatError(f"{path}:{row_no}: expected two columns, got {len(row)}")
                term, syn = row[0].strip(), row[1].strip()
                entries.setdefault(term, set()).add(syn)
        return cls(entries=entries)


def _read_entity_table(path: Path) -> dict:
    """Read one Magellan entity table into {id: EntityRecord} preserving column order."""
    if not path.exists():
        raise DatasetLoadError(f"missing entity table: {path}")
    records = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if "id" not in header:
            raise DatasetFormatError(f"{path}: no 'id' column in header {header}")
        id_col = header.index("id")
        attr_cols = [(i, name) for i, name in enumerate(header) if i != id_col]
        for row_no, row in enumerate(reader, start=2):
            rid = row[id_col] if id_col < len(row) else ""
            attrs = tuple((name, row[i] if i < len(row) else "") for i, name in attr_cols)
            if rid in records:
                raise DatasetIntegrityError(f"{path}:{row_no}: duplicate id {rid!r}")
            records[rid] = EntityRecord(id=rid, attributes=attrs)
    return records


def _read_pair_file(path: Path, left_table: dict, right_table: dict) -> list:
    pairs = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"ltable_id", "rtable_id", "label"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DatasetFormatError(f"{path}: header must contain {sorted(required)}")
        for row_no, row in enumerate(reader, start=2):
            lid, rid, raw_label = row["ltable_id"], row["rtable_id"], row["label"]
            if lid not in left_table:
                raise DatasetIntegrityError(f"{path}:{row_no}: unknown ltable_id {lid!r}")
            if rid not in right_table:
                raise DatasetIntegrityError(f"{path}:{row_no}: unknown rtable_id {rid!r}")
            if raw_label not in ("0", "1"):
                raise DatasetFormatError(f"{path}:{row_no}: non-binary label {raw_label!r}")
            pairs.append(CandidatePair(left=left_table[lid], right=right_table[rid], label=int(raw_label)))
    return pairs


def load_magellan_dataset(directory_path) -> DatasetBundle:
    """Load a Magellan-layout dataset directory.

    Expects tableA.csv / tableB.csv entity tables plus one or more pair files
    (pairs.csv or train/valid/test.csv) with ltable_id, rtable_id, label columns.
    """
    directory = Path(directory_path)
    if not directory.is_dir():
        raise DatasetLoadError(f"dataset directory not found: {directory}")
    left_table = _read_entity_table(directory / "tableA.csv")
    right_table = _read_entity_table(directory / "tableB.csv")
    pair_files = [directory / n for n in PAIR_FILE_NAMES if (directory / n).exists()]
    if not pair_files:
        raise DatasetLoadError(
            f"no pair file found in {directory} (looked for {', '.join(PAIR_FILE_NAMES)})"
        )
    pairs = []
    for pf in pair_files:
        pairs.extend(_read_pair_file(pf, left_table, right_table))
    return DatasetBundle(pairs=pairs, name=directory.name, split_tag="unsplit")


def split_dataset(bundle: DatasetBundle, seed: int):
    """Deterministic stratified 3:1:1 split into (train, valid, test)."""
    k = len(bundle.pairs)
    if k < 5:
        raise SplitError(f"need at least 5 labeled pairs to split, got {k}")
    if any(p.label is None for p in bundle.pairs):
        raise SplitError("cannot split a bundle with unlabeled pairs")

    targets = [3 * k // 5, k // 5, k - 3 * k // 5 - k // 5]
    rng = random.Random(seed)
    by_class = {}
    for i, p in enumerate(bundle.pairs):
        by_class.setdefault(p.label, []).append(i)
    for cls in sorted(by_class):
        rng.shuffle(by_class[cls])

    # Largest-remainder allocation of each class across the three splits so that
    # split sizes are exact and per-split positive rates track the whole bundle.
    quota = {}
    for cls in sorted(by_class):
        kc = len(by_class[cls])
        for s in range(3):
            quota[(s, cls)] = kc * targets[s] // k
    remaining_split = [targets[s] - sum(quota[(s, c)] for c in by_class) for s in range(3)]
    remaining_class = {c: len(by_class[c]) - sum(quota[(s, c)] for s in range(3)) for c in by_class}
    candidates = sorted(
        ((s, c) for s in range(3) for c in by_class),
        key=lambda sc: (-(len(by_class[sc[1]]) * targets[sc[0]] % k), sc),
    )
    while any(remaining_split):
        progressed = False
        for s, c in candidates:
            if remaining_split[s] > 0 and remaining_class[c] > 0:
                quota[(s, c)] += 1
                remaining_split[s] -= 1
                remaining_class[c] -= 1
                progressed = True
        assert progressed, "stratified allocation deadlocked"

    split_indices = [[], [], []]
    for cls in sorted(by_class):
        pool = by_class[cls]
        pos = 0
        for s in range(3):
            take = quota[(s, cls)]
            split_indices[s].extend(pool[pos : pos + take])
            pos += take
    tags = ("train", "valid", "test")
    out = []
    for s, tag in enumerate(tags):
        idx = split_indices[s]
        rng.shuffle(idx)
        out.append(
            DatasetBundle(pairs=[bundle.pairs[i] for i in idx], name=bundle.name, split_tag=tag)
        )
    return tuple(out)


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Precision/recall/F1 over the positive class."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if len(labels) == 0:
        raise ValueError("empty prediction/label sequences")
    tp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 1)
    fp = sum(1 for p, y in zip(predictions, labels) if p == 1 and y == 0)
    fn = sum(1 for p, y in zip(predictions, labels) if p == 0 and y == 1)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision=precision, recall=recall, f1=f1, true_pos=tp, false_pos=fp, false_neg=fn)


def merge_attributes(record: EntityRecord, first: str, second: str, new_name: str) -> EntityRecord:
    """Replace two attributes by one at the position of `first`, values joined by a space."""
    names = record.names
    if first not in names:
        raise ValueError(f"record {record.id!r} has no attribute {first!r}")
    if second not in names:
        raise ValueError(f"record {record.id!r} has no attribute {second!r}")
    merged_value = record.value(first) + " " + record.value(second)
    attrs = []
    for name, value in record.attributes:
        if name == first:
            attrs.append((new_name, merged_value))
        elif name == second:
            continue
        else:
            attrs.append((name, value))
    return EntityRecord(id=record.id, attributes=tuple(attrs))
