"""Unbalanced longitudinal data and the covariance-class bookkeeping.

Subjects are observed at a subset ``J_i`` of the visit indices ``1..b``.
A :class:`CovarianceGrouping` assigns every within-subject pair ``(j, k)``
(stored with ``j <= k``) a class label ``l``; subjects sharing ``(j, k, l)``
share one unknown covariance value, which is what makes the covariances
estimable by pooling.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from collections.abc import Hashable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import DatasetError, GroupingError, MissingGroup

__all__ = [
    "SubjectRecord",
    "LongitudinalDataset",
    "Block",
    "build_dataset",
    "read_csv",
    "write_csv",
    "PairOnly",
    "ByCovariateLevel",
    "Explicit",
    "GroupingSpec",
    "grouping_spec_from_dict",
    "read_grouping_spec",
    "CovarianceGrouping",
    "build_grouping",
    "PartitionDesign",
    "detect_partition",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One subject: visit indices ``J_i``, responses ``Y_i`` and covariates ``X_i``."""

    subject_id: Hashable
    visits: np.ndarray
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        visits = np.asarray(self.visits, dtype=np.int64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, 0)
        if visits.size == 0:
            raise DatasetError(f"subject {self.subject_id!r} has no visits")
        if np.any(np.diff(visits) <= 0):
            if len(np.unique(visits)) != len(visits):
                raise DatasetError(f"subject {self.subject_id!r} has duplicate visits")
            raise DatasetError(f"subject {self.subject_id!r}: visits must be strictly increasing")
        if visits[0] < 1:
            raise DatasetError(f"subject {self.subject_id!r}: visit indices start at 1")
        if y.shape[0] != visits.shape[0] or X.shape[0] != visits.shape[0]:
            raise DatasetError(
                f"subject {self.subject_id!r}: {len(visits)} visits, {len(y)} responses, "
                f"{X.shape[0]} covariate rows"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DatasetError(f"subject {self.subject_id!r} has non-finite values")
        object.__setattr__(self, "visits", _frozen(visits))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "X", _frozen(np.ascontiguousarray(X)))

    @property
    def size(self) -> int:
        return len(self.visits)


class Block(NamedTuple):
    """Subjects with the same number of visits, stacked for batched linear algebra."""

    m: int
    positions: np.ndarray  # subject positions in dataset order
    visits: np.ndarray  # (n_m, m)
    X: np.ndarray  # (n_m, m, p)
    y: np.ndarray  # (n_m, m)


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """An immutable collection of :class:`SubjectRecord` sharing ``b`` and ``p``."""

    subjects: tuple[SubjectRecord, ...]
    b: int
    p: int
    covariate_names: tuple[str, ...] = ()
    intercept: bool = False

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise DatasetError("no subjects")
        object.__setattr__(self, "subjects", subjects)
        if not self.covariate_names:
            object.__setattr__(
                self, "covariate_names", tuple(f"x{c + 1}" for c in range(self.p))
            )
        if len(self.covariate_names) != self.p:
            raise DatasetError(
                f"{len(self.covariate_names)} covariate names given for p = {self.p}"
            )
        seen = set()
        for s in subjects:
            if s.subject_id in seen:
                raise DatasetError(f"subject {s.subject_id!r} appears twice")
            seen.add(s.subject_id)
            if s.X.shape[1] != self.p:
                raise DatasetError(
                    f"subject {s.subject_id!r} has {s.X.shape[1]} covariates, expected {self.p}"
                )
            if s.visits[-1] > self.b:
                raise DatasetError(
                    f"subject {s.subject_id!r} has visit {s.visits[-1]} beyond b = {self.b}"
                )
            if self.intercept and not np.all(s.X[:, 0] == 1.0):
                raise DatasetError(
                    f"subject {s.subject_id!r}: first covariate column must be all ones"
                )

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def n_obs(self) -> int:
        return sum(s.size for s in self.subjects)

    @cached_property
    def subject_ids(self) -> tuple:
        return tuple(s.subject_id for s in self.subjects)

    @cached_property
    def locator(self) -> dict:
        """Map subject id to ``(block index, row within block)``."""
        loc = {}
        for bi, blk in enumerate(self.blocks):
            for r, pos in enumerate(blk.positions):
                loc[self.subjects[pos].subject_id] = (bi, r)
        return loc

    @cached_property
    def blocks(self) -> tuple[Block, ...]:
        by_size: dict[int, list[int]] = defaultdict(list)
        for pos, s in enumerate(self.subjects):
            by_size[s.size].append(pos)
        out = []
        for m in sorted(by_size):
            pos = np.array(by_size[m], dtype=np.int64)
            subs = [self.subjects[i] for i in pos]
            out.append(
                Block(
                    m=m,
                    positions=_frozen(pos),
                    visits=_frozen(np.stack([s.visits for s in subs])),
                    X=_frozen(np.stack([s.X for s in subs])),
                    y=_frozen(np.stack([s.y for s in subs])),
                )
            )
        return tuple(out)

    def __getitem__(self, subject_id) -> SubjectRecord:
        bi, r = self.locator[subject_id]
        return self.subjects[self.blocks[bi].positions[r]]

    def with_responses(self, responses: Sequence[np.ndarray]) -> LongitudinalDataset:
        """Same design (ids, visits, covariates) with new response vectors."""
        if len(responses) != self.n:
            raise DatasetError(f"{len(responses)} response vectors for {self.n} subjects")
        subs = []
        for s, y in zip(self.subjects, responses):
            y = np.array(y, dtype=np.float64).ravel()
            if y.shape != s.y.shape or not np.isfinite(y).all():
                raise DatasetError(f"subject {s.subject_id!r}: bad response vector")
            rec = object.__new__(SubjectRecord)
            for name, val in (("subject_id", s.subject_id), ("visits", s.visits), ("y", _frozen(y)), ("X", s.X)):
                object.__setattr__(rec, name, val)
            subs.append(rec)
        # design already validated: skip __post_init__
        out = object.__new__(LongitudinalDataset)
        for name in ("b", "p", "covariate_names", "intercept"):
            object.__setattr__(out, name, getattr(self, name))
        object.__setattr__(out, "subjects", tuple(subs))
        return out

    def scaled(self, c: float) -> LongitudinalDataset:
        return self.with_responses([c * s.y for s in self.subjects])

    def visit_sets(self) -> list[tuple[int, ...]]:
        return [tuple(int(j) for j in s.visits) for s in self.subjects]


Row = Sequence


def build_dataset(
    rows: Iterable[Row],
    *,
    b: int | None = None,
    covariate_names: Sequence[str] | None = None,
    intercept: bool = False,
) -> LongitudinalDataset:
    """Group ``(subject, visit, y, x1, ..., xp)`` rows into a dataset.

    Rows may come in any order; each subject's rows are sorted by visit.
    Subjects keep their order of first appearance. ``b`` defaults to the
    largest visit index seen. Errors name the offending row (1-based).
    """
    return _build(enumerate(rows, start=1), b, covariate_names, intercept, None)


def _build(numbered, b, covariate_names, intercept, source) -> LongitudinalDataset:
    per_subject: dict = {}
    p = None
    for rownum, row in numbered:
        row = list(row)
        if len(row) < 3:
            raise DatasetError("expected subject, visit, y and covariates", rownum, source)
        sid, visit, yval, *xs = row
        if p is None:
            p = len(xs)
        elif len(xs) != p:
            raise DatasetError(f"expected {p} covariates, found {len(xs)}", rownum, source)
        try:
            fv = float(visit)
        except (TypeError, ValueError):
            raise DatasetError(f"visit {visit!r} is not an integer", rownum, source) from None
        if not math.isfinite(fv) or fv != int(fv) or fv < 1:
            raise DatasetError(f"visit {visit!r} is not a positive integer", rownum, source)
        visit = int(fv)
        try:
            vals = [float(yval)] + [float(x) for x in xs]
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"non-numeric value ({exc})", rownum, source) from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError("non-finite value", rownum, source)
        entries = per_subject.setdefault(sid, {})
        if visit in entries:
            raise DatasetError(
                f"duplicate (subject, visit) = ({sid!r}, {visit}); first seen at row "
                f"{entries[visit][0]}",
                rownum,
                source,
            )
        entries[visit] = (rownum, vals)
    if not per_subject:
        raise DatasetError("no subjects", source=source)
    subjects = []
    for sid, entries in per_subject.items():
        visits = sorted(entries)
        vals = np.array([entries[v][1] for v in visits], dtype=np.float64)
        subjects.append(SubjectRecord(sid, np.array(visits), vals[:, 0], vals[:, 1:]))
    b_seen = max(int(s.visits[-1]) for s in subjects)
    if b is None:
        b = b_seen
    elif b < b_seen:
        raise DatasetError(f"visit {b_seen} exceeds b = {b}", source=source)
    return LongitudinalDataset(
        tuple(subjects),
        b=b,
        p=p,
        covariate_names=tuple(covariate_names) if covariate_names else (),
        intercept=intercept,
    )


def _parse_id(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def read_csv(path, *, b: int | None = None, intercept: bool = False) -> LongitudinalDataset:
    """Read ``subject,visit,y,x1,...,xp`` CSV (header required).

    Row numbers in error messages are file line numbers (header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError("empty file, header required", source=str(path)) from None
        if header[:3] != ["subject", "visit", "y"]:
            raise DatasetError("header must start with subject,visit,y", 1, str(path))
        numbered = [
            (reader.line_num, [_parse_id(line[0].strip())] + [c.strip() for c in line[1:]])
            for line in reader
            if line and any(c.strip() for c in line)
        ]
    return _build(numbered, b, header[3:], intercept, str(path))


def write_csv(ds: LongitudinalDataset, path) -> None:
    """Write the dataset in the CSV layout accepted by :func:`read_csv`.

    Floats are written with ``repr`` so a round trip is exact.
    """
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "visit", "y", *ds.covariate_names])
        for s in ds.subjects:
            for j, yv, xrow in zip(s.visits, s.y, s.X):
                w.writerow([s.subject_id, int(j), repr(float(yv)), *(repr(float(x)) for x in xrow)])


# --------------------------------------------------------------------------
# Grouping specifications
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PairOnly:
    """One covariance class per visit pair: ``v_ijk`` depends on ``(j, k)`` only."""


@dataclass(frozen=True)
class ByCovariateLevel:
    """Class label is the (time-invariant, integer) value of a named covariate."""

    column: str


@dataclass(frozen=True)
class Explicit:
    """User-supplied labels: ``{(subject, j, k): l}``."""

    labels: Mapping = field(default_factory=dict)


GroupingSpec = Union[PairOnly, ByCovariateLevel, Explicit]


def grouping_spec_from_dict(doc: Mapping) -> GroupingSpec:
    mode = doc.get("mode")
    if mode == "pair_only":
        return PairOnly()
    if mode == "by_covariate":
        if "column" not in doc:
            raise GroupingError("by_covariate grouping needs a 'column'")
        return ByCovariateLevel(str(doc["column"]))
    if mode == "explicit":
        labels = {}
        for k, entry in enumerate(doc.get("labels", [])):
            try:
                sid, j, kk, l = entry["subject"], int(entry["j"]), int(entry["k"]), entry["l"]
            except (KeyError, TypeError, ValueError) as exc:
                raise GroupingError(f"explicit label #{k} malformed: {exc}") from None
            labels[(sid, min(j, kk), max(j, kk))] = l
        return Explicit(labels)
    raise GroupingError(f"unknown grouping mode {mode!r}")


def read_grouping_spec(path) -> GroupingSpec:
    with Path(path).open() as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GroupingError(f"{path}: invalid JSON ({exc})") from None
    return grouping_spec_from_dict(doc)


Key = tuple  # (j, k, l) with j <= k


@dataclass(frozen=True, eq=False)
class CovarianceGrouping:
    """The registered covariance classes of a dataset.

    ``keys`` lists the ``(j, k, l)`` triples in canonical sorted order; the
    covariance vector ``v`` of the estimators is indexed the same way.
    ``block_index[b]`` has shape ``(n_m, m, m)`` and maps every entry of
    every subject's covariance matrix in dataset block ``b`` to its
    position in ``v`` (symmetric by construction).
    """

    keys: tuple[Key, ...]
    counts: np.ndarray
    index_sets: dict
    group_of: dict
    block_index: tuple[np.ndarray, ...]
    subject_ids: tuple
    block_visits: tuple[np.ndarray, ...] = ()

    @cached_property
    def R(self) -> int:
        return len(self.keys)

    @cached_property
    def key_index(self) -> dict:
        return {k: r for r, k in enumerate(self.keys)}

    @cached_property
    def pair_set(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted({(j, k) for j, k, _ in self.keys}))

    @cached_property
    def L(self) -> dict:
        """Number of labels per pair, ``L_jk``."""
        out: dict = defaultdict(int)
        for j, k, _ in self.keys:
            out[(j, k)] += 1
        return dict(out)

    @cached_property
    def diagonal(self) -> np.ndarray:
        return _frozen(np.array([j == k for j, k, _ in self.keys], dtype=bool))

    def count(self, j: int, k: int, l) -> int:
        return int(self.counts[self.key_index[(min(j, k), max(j, k), l)]])

    def identity_vector(self) -> np.ndarray:
        """Variances 1 and covariances 0: every assembled matrix is the identity."""
        return self.diagonal.astype(np.float64)

    def check(self, ds: LongitudinalDataset) -> None:
        """Raise :class:`MissingGroup` unless ``ds`` has the ids and visit sets this was built on."""
        if (
            ds.subject_ids != self.subject_ids
            or len(ds.blocks) != len(self.block_visits)
            or not all(np.array_equal(b.visits, v) for b, v in zip(ds.blocks, self.block_visits))
        ):
            raise MissingGroup(
                "grouping does not cover this dataset (built for different subjects or visits)"
            )


def _labeler(ds: LongitudinalDataset, spec: GroupingSpec):
    if isinstance(spec, PairOnly):
        return lambda s, j, k: 1
    if isinstance(spec, ByCovariateLevel):
        try:
            col = ds.covariate_names.index(spec.column)
        except ValueError:
            raise GroupingError(f"no covariate named {spec.column!r}") from None
        levels = {}
        for s in ds.subjects:
            x = s.X[:, col]
            if not np.all(x == x[0]):
                raise GroupingError(
                    f"covariate {spec.column!r} varies over time for subject {s.subject_id!r}"
                )
            if x[0] != int(x[0]):
                raise GroupingError(
                    f"covariate {spec.column!r} is not integer for subject {s.subject_id!r}"
                )
            levels[s.subject_id] = int(x[0])
        return lambda s, j, k: levels[s.subject_id]
    if isinstance(spec, Explicit):
        labels = spec.labels

        def lab(s, j, k):
            try:
                return labels[(s.subject_id, j, k)]
            except KeyError:
                raise MissingGroup(
                    f"explicit grouping has no label for subject {s.subject_id!r}, pair ({j}, {k})"
                ) from None

        return lab
    raise GroupingError(f"unsupported grouping spec {spec!r}")


def _label_sort_key(l):
    return (0, l, "") if isinstance(l, (int, np.integer)) else (1, 0, str(l))


def build_grouping(ds: LongitudinalDataset, spec: GroupingSpec | None = None) -> CovarianceGrouping:
    """Register every ``(j, k, l)`` class used by the dataset.

    Deterministic: keys are sorted by ``(j, k, l)`` and index sets keep the
    dataset's subject order.
    """
    spec = PairOnly() if spec is None else spec
    label = _labeler(ds, spec)
    group_of = {}
    members: dict = defaultdict(list)
    for s in ds.subjects:
        vis = [int(j) for j in s.visits]
        for a, j in enumerate(vis):
            for k in vis[a:]:
                l = label(s, j, k)
                group_of[(s.subject_id, j, k)] = l
                members[(j, k, l)].append(s.subject_id)
    keys = tuple(sorted(members, key=lambda t: (t[0], t[1], _label_sort_key(t[2]))))
    key_index = {k: r for r, k in enumerate(keys)}
    counts = np.array([len(members[k]) for k in keys], dtype=np.int64)

    block_index = []
    for blk in ds.blocks:
        idx = np.empty((len(blk.positions), blk.m, blk.m), dtype=np.int64)
        for r, pos in enumerate(blk.positions):
            s = ds.subjects[pos]
            vis = [int(j) for j in s.visits]
            for a, j in enumerate(vis):
                for c in range(a, blk.m):
                    k = vis[c]
                    idx[r, a, c] = idx[r, c, a] = key_index[(j, k, group_of[(s.subject_id, j, k)])]
        block_index.append(_frozen(idx))

    return CovarianceGrouping(
        keys=keys,
        counts=_frozen(counts),
        index_sets={k: tuple(members[k]) for k in keys},
        group_of=group_of,
        block_index=tuple(block_index),
        subject_ids=ds.subject_ids,
        block_visits=tuple(blk.visits for blk in ds.blocks),
    )


# --------------------------------------------------------------------------
# Partition designs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionDesign:
    """Disjoint visit sets; every subject observes exactly one of them."""

    blocks: tuple[tuple[int, ...], ...]

    def block_of(self, visits) -> int:
        return self.blocks.index(tuple(int(j) for j in visits))


def detect_partition(ds: LongitudinalDataset) -> PartitionDesign | None:
    """Return the partition when the distinct visit sets are pairwise disjoint."""
    distinct = []
    for vs in ds.visit_sets():
        if vs not in distinct:
            distinct.append(vs)
    used: set[int] = set()
    for vs in distinct:
        if used.intersection(vs):
            return None
        used.update(vs)
    return PartitionDesign(tuple(distinct))
