"""Domain types shared by every stage: feature schema, query groups, datasets.

A :class:`QueryGroup` is one logged search event: a query, the products shown
for it, their feature rows and the engagement outcome each product received.
Synthetic groups additionally carry latent ground truth (content relevance
``rho`` and engagement propensity ``pi``) for every item.

Datasets are persisted as UTF-8 CSV, one item per line::

    group_id,query_id,segment,product_id,outcome,<feat>:<channel>,...[,latent.rho,latent.pi]
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Channel",
    "Dataset",
    "DatasetFormatError",
    "FeatureSchema",
    "Outcome",
    "QueryGroup",
    "SchemaMismatchError",
    "VariantConfig",
    "ContentSource",
    "load_dataset",
    "save_dataset",
]

LATENT_COLUMNS = ("latent.rho", "latent.pi")
KEY_COLUMNS = ("group_id", "query_id", "segment", "product_id", "outcome")
SEGMENTS = ("head", "torso", "tail")


class Outcome(IntEnum):
    """Engagement outcome of one impression; the integer order is the funnel order."""

    NON_ENGAGED = 0
    CLICKED = 1
    ADDED_TO_CART = 2
    ORDERED = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> Outcome:
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown outcome {text!r}") from None


class Channel(str, Enum):
    SPARSE = "sparse-content"
    XE = "xe-dense"
    ENGAGEMENT = "engagement"

    @classmethod
    def content(cls) -> frozenset[Channel]:
        return frozenset({cls.SPARSE, cls.XE})


class DatasetFormatError(ValueError):
    """Malformed dataset file; ``lineno`` is 1-based (the header is line 1)."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SchemaMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    channels: tuple[Channel, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "channels", tuple(Channel(c) for c in self.channels))
        if len(self.names) != len(self.channels):
            raise ValueError("schema names and channels differ in length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names in schema")
        for name in self.names:
            if not name or ":" in name or "," in name:
                raise ValueError(f"invalid feature name {name!r}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaMismatchError(f"feature {name!r} not in schema") from None

    def indices(self, channels: Iterable[Channel | str]) -> np.ndarray:
        """Column indices whose channel is in ``channels``, in schema order."""
        wanted = {Channel(c) for c in channels}
        return np.array([i for i, c in enumerate(self.channels) if c in wanted], dtype=np.intp)

    def subset(self, channels: Iterable[Channel | str]) -> FeatureSchema:
        idx = self.indices(channels)
        return FeatureSchema(tuple(self.names[i] for i in idx), tuple(self.channels[i] for i in idx))

    @property
    def fingerprint(self) -> str:
        text = "\n".join(f"{n}:{c.value}" for n, c in zip(self.names, self.channels))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def header_fields(self) -> list[str]:
        return [f"{n}:{c.value}" for n, c in zip(self.names, self.channels)]


def _frozen_array(values, dtype, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class QueryGroup:
    """One search event.  Arrays are copied on construction and made read-only."""

    group_id: str
    query_id: str
    segment: str
    product_ids: tuple[str, ...]
    features: np.ndarray
    outcomes: np.ndarray
    rho: np.ndarray | None = None
    pi: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "product_ids", tuple(self.product_ids))
        object.__setattr__(self, "features", _frozen_array(self.features, np.float64, 2))
        object.__setattr__(self, "outcomes", _frozen_array(self.outcomes, np.int8, 1))
        n = len(self.product_ids)
        if not self.group_id or not self.query_id:
            raise ValueError("group_id and query_id must be non-empty")
        if n < 2:
            raise ValueError(f"group {self.group_id!r} has {n} item(s); at least 2 required")
        if any(not p for p in self.product_ids):
            raise ValueError(f"group {self.group_id!r} has an empty product id")
        if len(set(self.product_ids)) != n:
            raise ValueError(f"duplicate product id in group {self.group_id!r}")
        if self.features.shape[0] != n or self.outcomes.shape[0] != n:
            raise ValueError(f"group {self.group_id!r}: feature/outcome rows do not match items")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"group {self.group_id!r} has non-finite feature values")
        if self.outcomes.min() < Outcome.NON_ENGAGED or self.outcomes.max() > Outcome.ORDERED:
            raise ValueError(f"group {self.group_id!r} has an invalid outcome code")
        if (self.rho is None) != (self.pi is None):
            raise ValueError("latent rho and pi must be given together")
        if self.rho is not None:
            for name in ("rho", "pi"):
                arr = _frozen_array(getattr(self, name), np.float64, 1)
                if arr.shape[0] != n or np.any(~np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
                    raise ValueError(f"group {self.group_id!r}: latent {name} must be n values in [0,1]")
                object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.product_ids)

    @property
    def has_latent(self) -> bool:
        return self.rho is not None

    def items(self) -> Iterator[tuple[str, np.ndarray, Outcome]]:
        for pid, row, out in zip(self.product_ids, self.features, self.outcomes):
            yield pid, row, Outcome(int(out))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QueryGroup):
            return NotImplemented
        return (
            (self.group_id, self.query_id, self.segment, self.product_ids)
            == (other.group_id, other.query_id, other.segment, other.product_ids)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.outcomes, other.outcomes)
            and _opt_equal(self.rho, other.rho)
            and _opt_equal(self.pi, other.pi)
        )

    __hash__ = None  # type: ignore[assignment]


def _opt_equal(a: np.ndarray | None, b: np.ndarray | None) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(frozen=True)
class Dataset:
    groups: tuple[QueryGroup, ...]
    schema: FeatureSchema

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(self.groups))
        d = len(self.schema)
        seen_groups: set[str] = set()
        seen_queries: set[str] = set()
        for g in self.groups:
            if g.features.shape[1] != d:
                raise SchemaMismatchError(
                    f"group {g.group_id!r} has {g.features.shape[1]} features, schema has {d}"
                )
            if g.group_id in seen_groups:
                raise ValueError(f"duplicate group id {g.group_id!r}")
            if g.query_id in seen_queries:
                raise ValueError(f"duplicate query id {g.query_id!r}")
            seen_groups.add(g.group_id)
            seen_queries.add(g.query_id)
        if len({g.has_latent for g in self.groups}) > 1:
            raise ValueError("latent columns must be present for all groups or none")

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self) -> Iterator[QueryGroup]:
        return iter(self.groups)

    @property
    def has_latent(self) -> bool:
        return bool(self.groups) and self.groups[0].has_latent

    @property
    def n_items(self) -> int:
        return sum(len(g) for g in self.groups)

    def stacked_features(self) -> np.ndarray:
        if not self.groups:
            return np.empty((0, len(self.schema)))
        return np.vstack([g.features for g in self.groups])

    def group_offsets(self) -> np.ndarray:
        """Row offsets of each group in :meth:`stacked_features` (length ``len + 1``)."""
        return np.concatenate([[0], np.cumsum([len(g) for g in self.groups])]).astype(np.intp)

    def subset(self, indices: Sequence[int]) -> Dataset:
        return Dataset(tuple(self.groups[i] for i in indices), self.schema)


class ContentSource(str, Enum):
    GBDT_BASELINE = "gbdt"
    CONTENT_SCORER = "scorer"
    FILE_SCORES = "file"


@dataclass(frozen=True)
class VariantConfig:
    """One row of the model grid: where content scores come from and how they are used."""

    name: str
    content_source: ContentSource
    transform: tuple[float, float] | None = None  # (alpha, beta)
    use_xe_features: bool = False
    scores_path: str | None = None
    is_baseline: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "content_source", ContentSource(self.content_source))
        if not self.name:
            raise ValueError("variant name must be non-empty")
        if self.content_source is ContentSource.FILE_SCORES and not self.scores_path:
            raise ValueError(f"variant {self.name!r}: file content source needs scores_path")


# --------------------------------------------------------------------------- IO


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    latent = dataset.has_latent
    header = list(KEY_COLUMNS) + dataset.schema.header_fields()
    if latent:
        header += list(LATENT_COLUMNS)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for g in dataset.groups:
            for i, pid in enumerate(g.product_ids):
                row = [g.group_id, g.query_id, g.segment, pid, Outcome(int(g.outcomes[i])).label]
                row += [_fmt(v) for v in g.features[i]]
                if latent:
                    row += [_fmt(g.rho[i]), _fmt(g.pi[i])]
                writer.writerow(row)


def _parse_header(fields: list[str]) -> tuple[FeatureSchema, bool]:
    if tuple(fields[: len(KEY_COLUMNS)]) != KEY_COLUMNS:
        raise DatasetFormatError(f"header must start with {','.join(KEY_COLUMNS)}", 1)
    rest = fields[len(KEY_COLUMNS):]
    latent = tuple(rest[-2:]) == LATENT_COLUMNS
    if latent:
        rest = rest[:-2]
    names, channels = [], []
    for column in rest:
        name, sep, channel = column.rpartition(":")
        if not sep:
            raise DatasetFormatError(f"feature column {column!r} lacks a channel tag", 1)
        try:
            channels.append(Channel(channel))
        except ValueError:
            raise DatasetFormatError(f"unknown channel tag {channel!r}", 1) from None
        names.append(name)
    try:
        return FeatureSchema(tuple(names), tuple(channels)), latent
    except ValueError as exc:
        raise DatasetFormatError(str(exc), 1) from None


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(f"{what}: not a number: {text!r}", lineno) from None
    if not math.isfinite(value):
        raise DatasetFormatError(f"{what}: non-finite value {text!r}", lineno)
    return value


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file (missing header)", 1) from None
        schema, latent = _parse_header(header)
        d = len(schema)
        width = len(KEY_COLUMNS) + d + (2 if latent else 0)

        rows: dict[str, dict] = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise DatasetFormatError(f"expected {width} fields, got {len(rec)}", lineno)
            gid, qid, segment, pid, outcome = rec[:5]
            try:
                out = Outcome.parse(outcome)
            except ValueError as exc:
                raise DatasetFormatError(str(exc), lineno) from None
            feats = [_parse_float(v, f"feature {schema.names[j]!r}", lineno) for j, v in enumerate(rec[5:5 + d])]
            entry = rows.setdefault(gid, {
                "query_id": qid, "segment": segment, "pids": [], "x": [], "out": [],
                "rho": [], "pi": [], "first_line": lineno,
            })
            if entry["query_id"] != qid or entry["segment"] != segment:
                raise DatasetFormatError(f"group {gid!r} changes query or segment", lineno)
            if pid in entry["pids"]:
                raise DatasetFormatError(f"duplicate product {pid!r} in group {gid!r}", lineno)
            entry["pids"].append(pid)
            entry["x"].append(feats)
            entry["out"].append(int(out))
            if latent:
                rho = _parse_float(rec[-2], "latent.rho", lineno)
                pi = _parse_float(rec[-1], "latent.pi", lineno)
                if not (0.0 <= rho <= 1.0 and 0.0 <= pi <= 1.0):
                    raise DatasetFormatError("latent values must lie in [0,1]", lineno)
                entry["rho"].append(rho)
                entry["pi"].append(pi)

    groups = []
    for gid, e in rows.items():
        try:
            groups.append(QueryGroup(
                group_id=gid,
                query_id=e["query_id"],
                segment=e["segment"],
                product_ids=tuple(e["pids"]),
                features=np.array(e["x"], dtype=np.float64).reshape(len(e["pids"]), d),
                outcomes=np.array(e["out"], dtype=np.int8),
                rho=np.array(e["rho"]) if latent else None,
                pi=np.array(e["pi"]) if latent else None,
            ))
        except ValueError as exc:
            raise DatasetFormatError(str(exc), e["first_line"]) from None
    try:
        return Dataset(tuple(groups), schema)
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from None
