"""Interaction logs, user attributes, item properties, and sequence windows.

On-disk format is UTF-8 TSV without headers:

* interactions: ``user  item  rating  timestamp`` (rating may be empty)
* attributes:   ``user  attr_name  attr_value``
* properties:   ``item  prop_name  prop_value`` (repeat a line per value)
"""

from __future__ import annotations

import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


def _id_key(raw: str):
    # numeric ids sort numerically, everything else lexicographically after them
    try:
        return (0, int(raw), "")
    except ValueError:
        return (1, 0, raw)


def age_bucket(value: str) -> str:
    """Ten-year age range, e.g. ``"25" -> "20-29"``. Non-numeric values pass through."""
    try:
        age = int(float(value))
    except ValueError:
        return value
    lo = (age // 10) * 10
    return f"{lo}-{lo + 9}"


@dataclass(frozen=True)
class InteractionLog:
    """Dense-indexed implicit/explicit feedback events.

    ``user_ids[u]`` / ``item_ids[v]`` give the original identifiers of the
    dense indices used in ``users`` / ``items``.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray  # NaN where no rating was recorded
    timestamps: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self):
        return len(self.users)

    @classmethod
    def from_records(cls, records) -> "InteractionLog":
        """Build from ``(user_id, item_id, rating_or_None, timestamp)`` tuples."""
        records = list(records)
        user_ids = tuple(sorted({str(r[0]) for r in records}, key=_id_key))
        item_ids = tuple(sorted({str(r[1]) for r in records}, key=_id_key))
        u_index = {u: i for i, u in enumerate(user_ids)}
        v_index = {v: i for i, v in enumerate(item_ids)}
        return cls(
            users=np.array([u_index[str(r[0])] for r in records], dtype=np.int64),
            items=np.array([v_index[str(r[1])] for r in records], dtype=np.int64),
            ratings=np.array([np.nan if r[2] is None else float(r[2]) for r in records]),
            timestamps=np.array([int(r[3]) for r in records], dtype=np.int64),
            user_ids=user_ids,
            item_ids=item_ids,
        )

    def records(self):
        for u, v, r, ts in zip(self.users, self.items, self.ratings, self.timestamps):
            yield self.user_ids[u], self.item_ids[v], (None if np.isnan(r) else float(r)), int(ts)

    def select(self, mask: np.ndarray) -> "InteractionLog":
        """Keep rows where ``mask`` is true and re-densify both index spaces."""
        users, items = self.users[mask], self.items[mask]
        keep_u = np.unique(users)
        keep_v = np.unique(items)
        u_map = np.full(self.n_users, -1, dtype=np.int64)
        v_map = np.full(self.n_items, -1, dtype=np.int64)
        u_map[keep_u] = np.arange(len(keep_u))
        v_map[keep_v] = np.arange(len(keep_v))
        return InteractionLog(
            users=u_map[users],
            items=v_map[items],
            ratings=self.ratings[mask],
            timestamps=self.timestamps[mask],
            user_ids=tuple(self.user_ids[i] for i in keep_u),
            item_ids=tuple(self.item_ids[i] for i in keep_v),
        )

    def sequences(self) -> list[np.ndarray]:
        """Chronological item sequence per dense user; timestamp ties by item index."""
        order = np.lexsort((self.items, self.timestamps, self.users))
        users = self.users[order]
        items = self.items[order]
        bounds = np.searchsorted(users, np.arange(self.n_users + 1))
        return [items[bounds[u]:bounds[u + 1]] for u in range(self.n_users)]


@dataclass
class AttributeTable:
    """Per-user demographic attributes, keyed by original user id."""

    names: tuple[str, ...]
    rows: dict[str, dict[str, str]]

    def values(self, name: str) -> list[str]:
        return sorted({row[name] for row in self.rows.values() if name in row})

    def has_all(self, user_id: str, names=None) -> bool:
        row = self.rows.get(user_id, {})
        return all(n in row for n in (names or self.names))

    def column(self, name: str, user_ids) -> list[str]:
        return [self.rows[u][name] for u in user_ids]


@dataclass
class PropertyTable:
    """Per-item metadata labels; each property may carry several values."""

    rows: dict[str, dict[str, set[str]]] = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(sorted({p for props in self.rows.values() for p in props}))

    def of(self, item_id: str) -> dict[str, set[str]]:
        return self.rows.get(item_id, {})


@dataclass(frozen=True)
class SequenceSample:
    user: int
    input: tuple[int, ...]
    targets: tuple[int, ...]
    window_id: int


@dataclass
class Dataset:
    log: InteractionLog
    attributes: AttributeTable
    properties: PropertyTable

    def user_attribute(self, names) -> list[str]:
        """Joint attribute value per dense user, e.g. ``"F|20-29"``."""
        names = tuple(names)
        return [
            "|".join(self.attributes.rows[u][n] for n in names) for u in self.log.user_ids
        ]


# --- operations

def to_implicit(log_: InteractionLog, threshold: float) -> InteractionLog:
    """Keep events rated at least ``threshold``; ``threshold <= 0`` keeps everything."""
    if threshold <= 0:
        return log_
    if np.isnan(log_.ratings).any():
        raise DataError(f"{int(np.isnan(log_.ratings).sum())} records lack a rating but threshold={threshold}")
    return log_.select(log_.ratings >= threshold)


def filter_users(log_: InteractionLog, attrs: AttributeTable, min_interactions: int = 4,
                 required=None):
    """Drop users missing any required attribute or with too few interactions."""
    required = tuple(required or attrs.names)
    has_attrs = np.array([attrs.has_all(u, required) for u in log_.user_ids])
    counts = np.bincount(log_.users, minlength=log_.n_users)
    keep_user = has_attrs & (counts >= min_interactions)
    out = log_.select(keep_user[log_.users])
    if len(out) == 0:
        raise DataError(
            f"no users left: {int((~has_attrs).sum())} lack attributes {required}, "
            f"{int((counts < min_interactions).sum())} have < {min_interactions} interactions "
            f"(of {log_.n_users})"
        )
    kept = AttributeTable(
        names=required,
        rows={u: {n: attrs.rows[u][n] for n in required} for u in out.user_ids},
    )
    return out, kept


def head_users(data: Dataset, max_users: int) -> Dataset:
    """Keep the first ``max_users`` users in dense order, re-densifying items."""
    if data.log.n_users <= max_users:
        return data
    lg = data.log.select(data.log.users < max_users)
    attrs = AttributeTable(data.attributes.names, {u: data.attributes.rows[u] for u in lg.user_ids})
    props = PropertyTable({v: data.properties.rows[v] for v in lg.item_ids if v in data.properties.rows})
    return Dataset(lg, attrs, props)


def make_windows(log_: InteractionLog, t: int, g: int) -> list[SequenceSample]:
    """All stride-1 windows of ``t`` inputs followed by ``g`` targets, per user."""
    if t < 1 or g < 1:
        raise ValueError(f"need t >= 1 and g >= 1, got t={t}, g={g}")
    span = t + g
    samples = []
    for user, seq in enumerate(log_.sequences()):
        seq = seq.tolist()
        for w in range(len(seq) - span + 1):
            samples.append(SequenceSample(user, tuple(seq[w:w + t]), tuple(seq[w + t:w + span]), w))
    return samples


def split_counts(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Train takes the ceiling share, test the floor share, validation the rest."""
    n_train = min(n, math.ceil(ratios[0] * n - 1e-9))
    n_test = min(n - n_train, math.floor(ratios[2] * n + 1e-9))
    return n_train, n - n_train - n_test, n_test


def split(samples, ratios=(0.6, 0.2, 0.2)):
    """Chronological per-user split of windows into (train, val, test)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    by_user = defaultdict(list)
    for s in samples:
        by_user[s.user].append(s)
    train, val, test = [], [], []
    for user in sorted(by_user):
        windows = sorted(by_user[user], key=lambda s: s.window_id)
        n_train, n_val, _ = split_counts(len(windows), ratios)
        train += windows[:n_train]
        val += windows[n_train:n_train + n_val]
        test += windows[n_train + n_val:]
    return train, val, test


def stack(samples):
    """Arrays ``(users, inputs, targets)`` for a list of windows."""
    if not samples:
        return np.zeros(0, np.int64), np.zeros((0, 0), np.int64), np.zeros((0, 0), np.int64)
    return (
        np.array([s.user for s in samples], dtype=np.int64),
        np.array([s.input for s in samples], dtype=np.int64),
        np.array([s.targets for s in samples], dtype=np.int64),
    )


def interacted_pairs(samples) -> tuple[np.ndarray, np.ndarray]:
    """Unique (user, item) pairs covered by the windows, inputs and targets alike."""
    pairs = {(s.user, v) for s in samples for v in s.input + s.targets}
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    arr = np.array(sorted(pairs), dtype=np.int64)
    return arr[:, 0], arr[:, 1]


# --- files

def _tsv_rows(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_interactions(path) -> InteractionLog:
    records = []
    for lineno, cols in _tsv_rows(path):
        if len(cols) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
        user, item, rating, ts = cols
        records.append((user, item, float(rating) if rating.strip() else None, int(float(ts))))
    if not records:
        raise DataError(f"{path}: no interactions")
    return InteractionLog.from_records(records)


def read_attributes(path, bucket_age=True) -> AttributeTable:
    rows: dict[str, dict[str, str]] = defaultdict(dict)
    names = []
    for lineno, cols in _tsv_rows(path):
        if len(cols) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        user, name, value = cols
        if bucket_age and name == "age":
            value = age_bucket(value)
        rows[user][name] = value
        if name not in names:
            names.append(name)
    return AttributeTable(names=tuple(names), rows=dict(rows))


def read_properties(path) -> PropertyTable:
    rows: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    for lineno, cols in _tsv_rows(path):
        if len(cols) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        item, name, value = cols
        rows[item][name].add(value)
    return PropertyTable({k: dict(v) for k, v in rows.items()})


def ingest(interactions, attributes, properties=None, threshold=0.0, min_interactions=4,
           required=None) -> Dataset:
    log_ = to_implicit(read_interactions(interactions), threshold)
    attrs = read_attributes(attributes)
    log_, attrs = filter_users(log_, attrs, min_interactions, required)
    props = read_properties(properties) if properties else PropertyTable()
    props = PropertyTable({v: props.rows[v] for v in log_.item_ids if v in props.rows})
    log.info("ingested %d interactions, %d users, %d items", len(log_), log_.n_users, log_.n_items)
    return Dataset(log_, attrs, props)


def write_snapshot(data: Dataset, out_dir) -> Path:
    """Dense-indexed TSVs plus ``user_index.txt`` / ``item_index.txt`` sidecars."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lg = data.log
    with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
        for u, v, r, ts in zip(lg.users, lg.items, lg.ratings, lg.timestamps):
            fh.write(f"{u}\t{v}\t{'' if np.isnan(r) else repr(float(r))}\t{ts}\n")
    with open(out / "attributes.tsv", "w", encoding="utf-8") as fh:
        for u, uid in enumerate(lg.user_ids):
            for name in data.attributes.names:
                fh.write(f"{u}\t{name}\t{data.attributes.rows[uid][name]}\n")
    with open(out / "properties.tsv", "w", encoding="utf-8") as fh:
        for v, vid in enumerate(lg.item_ids):
            for name, values in sorted(data.properties.of(vid).items()):
                for value in sorted(values):
                    fh.write(f"{v}\t{name}\t{value}\n")
    for fname, ids in (("user_index.txt", lg.user_ids), ("item_index.txt", lg.item_ids)):
        with open(out / fname, "w", encoding="utf-8") as fh:
            for dense, orig in enumerate(ids):
                fh.write(f"{orig}\t{dense}\n")
    return out


def load_snapshot(path) -> Dataset:
    """Read a directory written by :func:`write_snapshot`."""
    path = Path(path)
    lg = read_interactions(path / "interactions.tsv")
    # attribute ages are already bucketed in a snapshot
    attrs = read_attributes(path / "attributes.tsv", bucket_age=False)
    props = read_properties(path / "properties.tsv") if (path / "properties.tsv").exists() else PropertyTable()
    return Dataset(lg, attrs, props)


def convert_movielens(src, out_dir) -> Path:
    """Turn MovieLens-1M ``::`` files (ratings/users/movies.dat) into the TSV inputs."""
    src, out = Path(src), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def rows(name):
        with open(src / name, encoding="latin-1") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line:
                    yield line.split("::")

    with open(out / "interactions.tsv", "w", encoding="utf-8") as fh:
        for user, item, rating, ts in rows("ratings.dat"):
            fh.write(f"{user}\t{item}\t{rating}\t{ts}\n")
    with open(out / "attributes.tsv", "w", encoding="utf-8") as fh:
        for user, gender, age, *_ in rows("users.dat"):
            fh.write(f"{user}\tgender\t{gender}\n{user}\tage\t{age}\n")
    if os.path.exists(src / "movies.dat"):
        with open(out / "properties.tsv", "w", encoding="utf-8") as fh:
            for item, _title, genres in rows("movies.dat"):
                for genre in genres.split("|"):
                    fh.write(f"{item}\tgenre\t{genre}\n")
    return out
