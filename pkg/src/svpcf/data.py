"""Interaction logs: ingestion, filtering, splitting and export.

A :class:`Dataset` is an immutable column store of ``(user, item, rating,
timestamp)`` events with dense 0-based indices.  Subsets produced by
splitting or sampling keep the parent's index space (``num_users`` and
``num_items`` do not shrink) so that models trained on a subsample can be
scored against the original validation and test interactions.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .utils import round_half_up

SCENARIOS = ("explicit", "implicit", "sequential")


class DataError(ValueError):
    pass


class EmptyDatasetError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SplitError(DataError):
    pass


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    rows: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self):
        for name, dtype in (("users", np.int64), ("items", np.int64),
                            ("ratings", np.float64), ("timestamps", np.int64),
                            ("rows", np.int64), ("user_ids", object),
                            ("item_ids", object)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        n = len(self.users)
        if not (len(self.items) == len(self.ratings) == len(self.timestamps)
                == len(self.rows) == n):
            raise DataError("interaction columns have different lengths")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.num_users:
                raise DataError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.num_items:
                raise DataError("item index out of range")
            if self.timestamps.min() < 0:
                raise DataError("negative timestamp")

    @classmethod
    def from_arrays(cls, users, items, ratings=None, timestamps=None,
                    num_users=None, num_items=None, rows=None) -> "Dataset":
        """Build a dataset from dense index arrays; raw ids are the indices."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        n = len(users)
        if num_users is None:
            num_users = int(users.max()) + 1 if n else 0
        if num_items is None:
            num_items = int(items.max()) + 1 if n else 0
        return cls(
            users=users,
            items=items,
            ratings=np.ones(n) if ratings is None else ratings,
            timestamps=np.arange(n) if timestamps is None else timestamps,
            rows=np.arange(n) if rows is None else rows,
            user_ids=np.array([str(u) for u in range(num_users)], dtype=object),
            item_ids=np.array([str(i) for i in range(num_items)], dtype=object),
        )

    def __len__(self) -> int:
        return len(self.users)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def subset(self, index) -> "Dataset":
        """Interactions selected by ``index`` (mask or positions), same id maps."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        index = np.sort(index.astype(np.int64))
        return Dataset(self.users[index], self.items[index], self.ratings[index],
                       self.timestamps[index], self.rows[index],
                       self.user_ids, self.item_ids)

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    @cached_property
    def _history_csr(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.lexsort((self.rows, self.timestamps, self.users))
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(self.user_counts(), out=indptr[1:])
        return indptr, order

    @property
    def history_indptr(self) -> np.ndarray:
        return self._history_csr[0]

    @property
    def history_order(self) -> np.ndarray:
        """Interaction positions grouped by user, each group oldest first."""
        return self._history_csr[1]

    def user_history(self, u: int) -> np.ndarray:
        indptr, order = self._history_csr
        return order[indptr[u]:indptr[u + 1]]

    @property
    def user_histories(self) -> list[np.ndarray]:
        indptr, order = self._history_csr
        return [order[indptr[u]:indptr[u + 1]] for u in range(self.num_users)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for a in (self.users, self.items, self.ratings, self.timestamps, self.rows):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update("\x1f".join(map(str, self.user_ids)).encode())
        h.update("\x1e".join(map(str, self.item_ids)).encode())
        return h.hexdigest()

    def check_invariants(self, *, all_users_active: bool = True) -> None:
        if all_users_active and np.any(self.user_counts() == 0):
            raise DataError("dataset contains users without interactions")
        if len(set(self.user_ids)) != self.num_users:
            raise DataError("user id map is not bijective")
        if len(set(self.item_ids)) != self.num_items:
            raise DataError("item id map is not bijective")


@dataclass(frozen=True, eq=False)
class SplitBundle:
    train: Dataset
    validation: Dataset
    test: Dataset
    scenario: str

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def with_train(self, train: Dataset) -> "SplitBundle":
        return SplitBundle(train, self.validation, self.test, self.scenario)


# --------------------------------------------------------------------------
# CSV ingestion / export


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of an interaction file.

    With ``header=True`` the column fields are header names; otherwise they
    are 0-based positions.  ``rating`` / ``timestamp`` set to ``None`` (or
    naming a column the file does not have) fall back to ``1.0`` and the
    data-row index respectively.
    """

    user: str | int = "user"
    item: str | int = "item"
    rating: str | int | None = "rating"
    timestamp: str | int | None = "timestamp"
    delimiter: str = ","
    header: bool = True

    @classmethod
    def positional(cls, delimiter: str = ",") -> "CsvSchema":
        return cls(0, 1, 2, 3, delimiter=delimiter, header=False)


def _parse_timestamp(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise
        return int(value)


def ingest_csv(path, schema: CsvSchema | None = None, *,
               user_ids: Sequence[str] | None = None,
               item_ids: Sequence[str] | None = None) -> Dataset:
    """Read an interaction log.

    Raw ids are densified in order of first appearance unless existing id
    maps are supplied, in which case every raw id must already be known
    (this is how split files written by :func:`export_split` are re-read).
    Duplicate ``(user, item)`` rows are kept as separate interactions.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    fixed_maps = user_ids is not None
    if fixed_maps != (item_ids is not None):
        raise ValueError("user_ids and item_ids must be given together")
    user_index = {str(r): k for k, r in enumerate(user_ids)} if fixed_maps else {}
    item_index = {str(r): k for k, r in enumerate(item_ids)} if fixed_maps else {}

    users, items, ratings, stamps = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        cols = None
        width = None
        first_line = 1
        if schema.header:
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise EmptyDatasetError(f"{path}: file is empty") from None
            first_line = 2
            pos = {name: k for k, name in enumerate(header)}
            try:
                cols = [pos[schema.user], pos[schema.item]]
            except KeyError as exc:
                raise ParseError(f"missing column {exc.args[0]!r}", 1) from None
            cols.append(pos.get(schema.rating))
            cols.append(pos.get(schema.timestamp))
            width = len(header)
        for offset, row in enumerate(reader):
            line = first_line + offset
            if not row or all(not c.strip() for c in row):
                continue
            if cols is None:
                width = len(row)
                cols = [schema.user, schema.item,
                        schema.rating if schema.rating is not None and schema.rating < width else None,
                        schema.timestamp if schema.timestamp is not None and schema.timestamp < width else None]
                if max(schema.user, schema.item) >= width:
                    raise ParseError(f"expected at least {max(schema.user, schema.item) + 1} columns", line)
            if len(row) != width:
                raise ParseError(f"expected {width} columns, found {len(row)}", line)
            raw_u, raw_i = row[cols[0]].strip(), row[cols[1]].strip()
            if not raw_u or not raw_i:
                raise ParseError("empty user or item id", line)
            try:
                r = float(row[cols[2]]) if cols[2] is not None else 1.0
                t = _parse_timestamp(row[cols[3]].strip()) if cols[3] is not None else len(users)
            except ValueError:
                raise ParseError("unparseable rating or timestamp", line) from None
            if not np.isfinite(r):
                raise ParseError("non-finite rating", line)
            if t < 0:
                raise ParseError("negative timestamp", line)
            if fixed_maps:
                if raw_u not in user_index or raw_i not in item_index:
                    raise ParseError("id not present in the supplied id maps", line)
            else:
                user_index.setdefault(raw_u, len(user_index))
                item_index.setdefault(raw_i, len(item_index))
            users.append(user_index[raw_u])
            items.append(item_index[raw_i])
            ratings.append(r)
            stamps.append(t)

    if not users:
        raise EmptyDatasetError(f"{path}: no interactions")
    return Dataset(
        users=users, items=items, ratings=ratings, timestamps=stamps,
        rows=np.arange(len(users)),
        user_ids=np.array(list(user_index), dtype=object),
        item_ids=np.array(list(item_index), dtype=object),
    )


def export_csv(d: Dataset, path, delimiter: str = ",") -> None:
    """Write ``user,item,rating,timestamp`` with raw ids, one row per interaction."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["user", "item", "rating", "timestamp"])
        for u, i, r, t in zip(d.users, d.items, d.ratings, d.timestamps):
            w.writerow([d.user_ids[u], d.item_ids[i], repr(float(r)), int(t)])


def export_id_maps(d: Dataset, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = directory / "users.csv", directory / "items.csv"
    for path, ids in zip(paths, (d.user_ids, d.item_ids)):
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "raw_id"])
            w.writerows(enumerate(ids))
    return paths


def load_id_map(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        pairs = [(int(k), raw) for k, raw in reader]
    if [k for k, _ in pairs] != list(range(len(pairs))):
        raise DataError(f"{path}: indices are not contiguous from 0")
    return np.array([raw for _, raw in pairs], dtype=object)


def export_split(bundle: SplitBundle, directory) -> None:
    directory = Path(directory)
    export_id_maps(bundle.train, directory)
    for name in ("train", "validation", "test"):
        export_csv(getattr(bundle, name), directory / f"{name}.csv")
    (directory / "scenario.txt").write_text(bundle.scenario + "\n")


def load_split(directory, scenario: str | None = None) -> SplitBundle:
    directory = Path(directory)
    user_ids = load_id_map(directory / "users.csv")
    item_ids = load_id_map(directory / "items.csv")
    if scenario is None:
        scenario = (directory / "scenario.txt").read_text().strip()
    parts = []
    for name in ("train", "validation", "test"):
        parts.append(ingest_csv(directory / f"{name}.csv", user_ids=user_ids, item_ids=item_ids))
    return SplitBundle(*parts, scenario=scenario)


def load_interactions(path, directory) -> Dataset:
    """Read a CSV whose raw ids are resolved through the id maps in ``directory``."""
    directory = Path(directory)
    return ingest_csv(path, user_ids=load_id_map(directory / "users.csv"),
                      item_ids=load_id_map(directory / "items.csv"))


# --------------------------------------------------------------------------
# Filtering and splitting


def _redensify(d: Dataset, keep: np.ndarray) -> Dataset:
    users, items = d.users[keep], d.items[keep]
    user_vals, new_users = np.unique(users, return_inverse=True)
    item_vals, new_items = np.unique(items, return_inverse=True)
    return Dataset(new_users, new_items, d.ratings[keep], d.timestamps[keep],
                   d.rows[keep], d.user_ids[user_vals], d.item_ids[item_vals])


def filter_min_interactions(d: Dataset, k: int = 3) -> Dataset:
    """Drop users with fewer than ``k`` interactions (single pass).

    Items left without interactions disappear from the index; items that
    fall below ``k`` are not filtered and there is no second pass.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = d.user_counts()[d.users] >= k
    if not keep.any():
        raise EmptyDatasetError(f"no user has at least {k} interactions")
    return _redensify(d, keep)


def _check_min_history(d: Dataset, minimum: int = 3) -> np.ndarray:
    counts = d.user_counts()
    short = np.flatnonzero((counts > 0) & (counts < minimum))
    if len(short):
        raise SplitError(
            f"{len(short)} user(s) have fewer than {minimum} interactions "
            f"(first: {d.user_ids[short[0]]!r})")
    return counts


def split_random(d: Dataset, seed: int, scenario: str = "explicit") -> SplitBundle:
    """Per-user randomized 80/10/10 train/validation/test split.

    Each user with ``N`` interactions sends ``max(1, round(N/10))`` to test
    and the same number to validation.
    """
    counts = _check_min_history(d)
    rng = np.random.default_rng(seed)
    part = np.zeros(len(d), dtype=np.int8)  # 0 train, 1 validation, 2 test
    for u in np.flatnonzero(counts):
        hist = d.user_history(u)
        n_hold = max(1, round_half_up(len(hist) / 10))
        perm = rng.permutation(hist)
        part[perm[:n_hold]] = 2
        part[perm[n_hold:2 * n_hold]] = 1
    return SplitBundle(d.subset(part == 0), d.subset(part == 1), d.subset(part == 2), scenario)


def split_leave_one_last(d: Dataset, scenario: str = "sequential") -> SplitBundle:
    """Last interaction of each user to test, second-last to validation."""
    counts = _check_min_history(d)
    indptr, order = d.history_indptr, d.history_order
    active = counts > 0
    last = order[indptr[1:][active] - 1]
    second = order[indptr[1:][active] - 2]
    part = np.zeros(len(d), dtype=np.int8)
    part[last] = 2
    part[second] = 1
    return SplitBundle(d.subset(part == 0), d.subset(part == 1), d.subset(part == 2), scenario)


def make_split(d: Dataset, scenario: str, seed: int) -> SplitBundle:
    if scenario == "sequential":
        return split_leave_one_last(d)
    if scenario in ("explicit", "implicit"):
        return split_random(d, seed, scenario)
    raise ValueError(f"unknown scenario {scenario!r}")


def concat(parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    base = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return Dataset(cat("users"), cat("items"), cat("ratings"), cat("timestamps"),
                   cat("rows"), base.user_ids, base.item_ids)
