"""Tri-partite preference graph and fairness-aware triplet sampling.

Entities are numbered with items first (entity ``v`` is item ``v``) followed
by tail entities: one per (attribute, value) and per (property, value).
Relations are typed by name: ``attr:<name>`` for user attributes and
``prop:<name>`` for item properties. Every triplet has an item head.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SAMPLING_MODES = ("fair", "random", "proportional")


@dataclass
class PreferenceGraph:
    n_items: int
    relations: tuple[str, ...]
    tails: tuple[tuple[str, str], ...]  # tail index -> (relation name, value)
    triplets: np.ndarray  # (T, 3): head item, relation index, tail index
    # (item, relation, tail, count) for every attribute value with interactors
    candidates: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))

    def __post_init__(self):
        self.triplets = np.asarray(self.triplets, dtype=np.int64).reshape(-1, 3)
        self.candidates = np.asarray(self.candidates, dtype=np.int64).reshape(-1, 4)
        order = np.lexsort((self.triplets[:, 2], self.triplets[:, 1], self.triplets[:, 0]))
        self.triplets = self.triplets[order]
        self._edge_set = {tuple(x) for x in self.triplets.tolist()}
        self.neighbor_offsets = np.searchsorted(
            self.triplets[:, 0], np.arange(self.n_items + 1)
        ).astype(np.int64)
        tail_rel = {}
        for i, (rel, _) in enumerate(self.tails):
            tail_rel[i] = self.relations.index(rel)
        self.tail_relation = np.array([tail_rel[i] for i in range(len(self.tails))], dtype=np.int64)
        self.family = {
            r: np.flatnonzero(self.tail_relation == r) for r in range(len(self.relations))
        }
        order = np.lexsort((self.candidates[:, 2], self.candidates[:, 1], self.candidates[:, 0]))
        self.candidates = self.candidates[order]
        self.candidate_offsets = np.searchsorted(
            self.candidates[:, 0], np.arange(self.n_items + 1)
        ).astype(np.int64)

    @property
    def n_entities(self) -> int:
        return self.n_items + len(self.tails)

    @property
    def n_tails(self) -> int:
        return len(self.tails)

    def tail_index(self, relation: str, value: str) -> int:
        return self.tails.index((relation, value))

    def relation_index(self, name: str) -> int:
        return self.relations.index(name)

    def neighbors(self, item: int) -> np.ndarray:
        lo, hi = self.neighbor_offsets[item], self.neighbor_offsets[item + 1]
        return self.triplets[lo:hi]

    def has(self, head, rel, tail) -> bool:
        return (int(head), int(rel), int(tail)) in self._edge_set

    def attribute_relations(self) -> list[int]:
        return [i for i, r in enumerate(self.relations) if r.startswith("attr:")]

    def property_relations(self) -> list[int]:
        return [i for i, r in enumerate(self.relations) if r.startswith("prop:")]

    def neighborhoods(self, heads):
        """Flattened neighbor lists for a batch of heads: (offsets, relations, tails)."""
        heads = np.asarray(heads, dtype=np.int64)
        lo = self.neighbor_offsets[heads]
        hi = self.neighbor_offsets[heads + 1]
        sizes = hi - lo
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        rows = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)] or [np.zeros(0, np.int64)])
        rows = rows.astype(np.int64)
        return offsets, self.triplets[rows, 1], self.triplets[rows, 2]

    def entity_name(self, entity: int) -> str:
        if entity < self.n_items:
            return f"item:{entity}"
        rel, value = self.tails[entity - self.n_items]
        return f"{rel}={value}"


def value_counts(users, items, user_values, n_items):
    """``{(item, value): number of distinct interacting users}``."""
    seen = set()
    counts: dict[tuple[int, str], int] = defaultdict(int)
    for u, v in zip(np.asarray(users).tolist(), np.asarray(items).tolist()):
        if (u, v) in seen:
            continue
        seen.add((u, v))
        counts[(v, user_values[u])] += 1
    return counts


def major_attribute_value(counts: dict[str, int]) -> str | None:
    """Value with the largest count; ties go to the lexicographically first value."""
    best = None
    for value in sorted(counts):
        if counts[value] > 0 and (best is None or counts[value] > counts[best]):
            best = value
    return best


def build_graph(n_items, users, items, user_attrs, protected, item_properties) -> PreferenceGraph:
    """Assemble the graph from training interactions.

    ``user_attrs[u]`` maps attribute name -> value for dense user ``u``;
    ``item_properties[v]`` maps property name -> set of values.
    """
    protected = tuple(protected)
    prop_names = sorted({p for props in item_properties for p in props})
    relations = tuple(f"attr:{a}" for a in protected) + tuple(f"prop:{p}" for p in prop_names)

    tails: list[tuple[str, str]] = []
    for a in protected:
        for value in sorted({row[a] for row in user_attrs}):
            tails.append((f"attr:{a}", value))
    for p in prop_names:
        for value in sorted({x for props in item_properties for x in props.get(p, ())}):
            tails.append((f"prop:{p}", value))
    tail_index = {t: i for i, t in enumerate(tails)}

    triplets = []
    candidates = []
    for a in protected:
        rel = relations.index(f"attr:{a}")
        counts = value_counts(users, items, [row[a] for row in user_attrs], n_items)
        per_item: dict[int, dict[str, int]] = defaultdict(dict)
        for (v, value), c in counts.items():
            per_item[v][value] = c
        for v in sorted(per_item):
            major = major_attribute_value(per_item[v])
            triplets.append((v, rel, tail_index[(f"attr:{a}", major)]))
            for value, c in sorted(per_item[v].items()):
                candidates.append((v, rel, tail_index[(f"attr:{a}", value)], c))
    for v, props in enumerate(item_properties):
        for p, values in sorted(props.items()):
            rel = relations.index(f"prop:{p}")
            for value in sorted(values):
                triplets.append((v, rel, tail_index[(f"prop:{p}", value)]))
    return PreferenceGraph(n_items, relations, tuple(tails), np.array(triplets), np.array(candidates))


def graph_from_dataset(data, samples, protected) -> PreferenceGraph:
    """Build from a :class:`~fairsr.dataio.Dataset` and its training windows."""
    from .dataio import interacted_pairs

    users, items = interacted_pairs(samples)
    user_attrs = [data.attributes.rows[u] for u in data.log.user_ids]
    props = [data.properties.of(v) for v in data.log.item_ids]
    return build_graph(data.log.n_items, users, items, user_attrs, protected, props)


# --- sampling

def sampling_distribution(graph: PreferenceGraph, item: int, mode="fair", relations=None):
    """(relation, tail) candidates and their probabilities for one item head.

    ``fair`` weights each attribute value by the reciprocal of its interaction
    count, normalised jointly over all protected attributes of the item.
    ``proportional`` weights by the count itself. ``random`` is uniform over
    the item's static attribute edges.
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if mode == "random":
        rows = graph.neighbors(item)
        rows = rows[np.isin(rows[:, 1], graph.attribute_relations())]
        if relations is not None:
            rows = rows[np.isin(rows[:, 1], relations)]
        n = len(rows)
        return rows[:, 1:3], np.full(n, 1.0 / n) if n else np.zeros(0)
    lo, hi = graph.candidate_offsets[item], graph.candidate_offsets[item + 1]
    cand = graph.candidates[lo:hi]
    if relations is not None:
        cand = cand[np.isin(cand[:, 1], relations)]
    counts = cand[:, 3].astype(np.float64)
    weights = 1.0 / counts if mode == "fair" else counts
    if len(weights) == 0:
        return cand[:, 1:3], weights
    return cand[:, 1:3], weights / weights.sum()


def fair_sample_positives(graph: PreferenceGraph, item_head: int, count: int, rng,
                          protected=None, mode="fair") -> np.ndarray:
    """Draw ``count`` attribute-tail triplets ``(head, relation, tail)`` for one item.

    With an empty candidate pool, falls back to uniform over the item's static edges.
    """
    relations = None
    if protected is not None:
        relations = [graph.relation_index(f"attr:{a}") for a in protected]
    pairs, probs = sampling_distribution(graph, item_head, mode, relations)
    if len(pairs) == 0:
        pairs = graph.neighbors(item_head)[:, 1:3]
        if len(pairs) == 0:
            return np.zeros((0, 3), dtype=np.int64)
        probs = np.full(len(pairs), 1.0 / len(pairs))
    pick = rng.choice(len(pairs), size=count, p=probs)
    out = np.empty((count, 3), dtype=np.int64)
    out[:, 0] = item_head
    out[:, 1:] = pairs[pick]
    return out


def sample_property_positives(graph: PreferenceGraph, item_head: int, count: int, rng) -> np.ndarray:
    rows = graph.neighbors(item_head)
    rows = rows[np.isin(rows[:, 1], graph.property_relations())]
    if len(rows) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return rows[rng.integers(0, len(rows), size=count)]


class TripletSampler:
    """Vectorised positive sampling for batches of heads.

    Precomputes one cumulative distribution per item so a batch needs a
    single ``searchsorted``.
    """

    def __init__(self, graph: PreferenceGraph, mode="fair"):
        self.graph = graph
        self.mode = mode
        pairs, cdfs, offsets = [], [], [0]
        for v in range(graph.n_items):
            p, probs = sampling_distribution(graph, v, mode)
            if len(p) == 0:
                p = graph.neighbors(v)[:, 1:3]
                probs = np.full(len(p), 1.0 / len(p)) if len(p) else np.zeros(0)
            c = np.cumsum(probs)
            if len(c):
                c[-1] = 1.0
            pairs.append(p)
            cdfs.append(v + c)
            offsets.append(offsets[-1] + len(p))
        self.pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), np.int64)
        self.keys = np.concatenate(cdfs) if cdfs else np.zeros(0)
        self.offsets = np.array(offsets, dtype=np.int64)
        prop_rel = graph.property_relations()
        self.prop_rows = []
        for v in range(graph.n_items):
            rows = graph.neighbors(v)
            self.prop_rows.append(rows[np.isin(rows[:, 1], prop_rel)])
        self.heads = np.flatnonzero(np.diff(graph.neighbor_offsets) > 0)
        self.skipped = 0  # positives dropped for lack of a negative

    def attribute_positives(self, heads, rng) -> np.ndarray:
        heads = np.asarray(heads, dtype=np.int64)
        has = self.offsets[heads + 1] > self.offsets[heads]
        heads = heads[has]
        u = rng.random(len(heads))
        idx = np.searchsorted(self.keys, heads + u, side="right")
        idx = np.clip(idx, self.offsets[heads], self.offsets[heads + 1] - 1)
        out = np.empty((len(heads), 3), dtype=np.int64)
        out[:, 0] = heads
        out[:, 1:] = self.pairs[idx]
        return out

    def property_positives(self, heads, rng) -> np.ndarray:
        rows = []
        for v in np.asarray(heads).tolist():
            cand = self.prop_rows[v]
            if len(cand):
                rows.append(cand[rng.integers(0, len(cand))])
        return np.array(rows, dtype=np.int64).reshape(-1, 3)

    def batch(self, size, rng):
        """Positives for ``size`` uniformly drawn heads plus one negative each."""
        heads = self.heads[rng.integers(0, len(self.heads), size=size)]
        pos = np.concatenate([self.attribute_positives(heads, rng), self.property_positives(heads, rng)])
        drawn = len(pos)
        pos, neg = sample_negatives(self.graph, pos, rng, warn=False)
        self.skipped += drawn - len(pos)
        return pos, neg


def sample_negatives(graph: PreferenceGraph, positives, rng, max_tries=64, warn=True):
    """One corrupted tail per positive, drawn from the same relation family.

    The tail is uniform over family members that are neither connected to
    the head under that relation nor the positive's own tail. Positives whose
    family is exhausted are dropped (with a warning), so the returned
    positives and negatives always pair up one to one.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    keep, negs = [], []
    exhausted = 0
    for i, (h, r, t) in enumerate(positives.tolist()):
        family = graph.family[r]
        tail = None
        for _ in range(max_tries):
            cand = int(family[rng.integers(0, len(family))])
            if cand != t and not graph.has(h, r, cand):
                tail = cand
                break
        if tail is None:
            free = [int(c) for c in family if c != t and not graph.has(h, r, c)]
            if not free:
                exhausted += 1
                continue
            tail = free[rng.integers(0, len(free))]
        keep.append(i)
        negs.append((h, r, tail))
    if exhausted and warn:
        log.warning("skipped %d positive(s) whose tail family is fully connected", exhausted)
    return positives[keep], np.array(negs, dtype=np.int64).reshape(-1, 3)


# --- files

def write_graph(graph: PreferenceGraph, path) -> Path:
    """``head \\t relation \\t tail`` lines plus entity and candidate-count sidecars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in graph.triplets.tolist():
            fh.write(f"{h}\t{graph.relations[r]}\t{graph.n_items + t}\n")
    with open(path.with_suffix(".entities.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"#items\t{graph.n_items}\n")
        for i, (rel, value) in enumerate(graph.tails):
            fh.write(f"{graph.n_items + i}\t{rel}\t{value}\n")
    with open(path.with_suffix(".counts.tsv"), "w", encoding="utf-8") as fh:
        for v, r, t, c in graph.candidates.tolist():
            fh.write(f"{v}\t{graph.relations[r]}\t{graph.n_items + t}\t{c}\n")
    return path


def read_graph(path) -> PreferenceGraph:
    path = Path(path)
    tails, n_items = [], None
    with open(path.with_suffix(".entities.tsv"), encoding="utf-8") as fh:
        for line in fh:
            cols = line.rstrip("\n").split("\t")
            if cols[0] == "#items":
                n_items = int(cols[1])
            else:
                tails.append((cols[1], cols[2]))
    relations = []
    for rel, _ in tails:
        if rel not in relations:
            relations.append(rel)
    rel_index = {r: i for i, r in enumerate(relations)}

    def rows(p):
        with open(p, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield line.rstrip("\n").split("\t")

    triplets = [(int(h), rel_index[r], int(t) - n_items) for h, r, t in rows(path)]
    counts_path = path.with_suffix(".counts.tsv")
    candidates = []
    if counts_path.exists():
        candidates = [(int(v), rel_index[r], int(t) - n_items, int(c)) for v, r, t, c in rows(counts_path)]
    return PreferenceGraph(n_items, tuple(relations), tuple(tails), np.array(triplets), np.array(candidates))
