"""Adoption proportion, adoption equality, interaction fairness (IF), DIF@k."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


def joint_values(user_attrs, names) -> list[str]:
    """Joint attribute value per user, joined with ``|`` in ``names`` order."""
    return ["|".join(row[n] for n in names) for row in user_attrs]


@dataclass
class AdoptionStats:
    """Per-item counts of interacting users by (joint) attribute value.

    ``values`` is the value set Z: every joint value held by at least one
    user in the population, in sorted order.
    """

    attribute: tuple[str, ...]
    values: tuple[str, ...]
    counts: np.ndarray  # (n_items, len(values)) int64

    @classmethod
    def from_pairs(cls, users, items, user_values, n_items, attribute=("attr",)):
        """Count unique ``(user, item)`` pairs, mapping users via ``user_values``."""
        values = tuple(sorted(set(user_values)))
        value_index = {z: i for i, z in enumerate(values)}
        group = np.array([value_index[z] for z in user_values], dtype=np.int64)
        pairs = np.unique(np.stack([np.asarray(users), np.asarray(items)]), axis=1)
        counts = kernels.adoption_counts(
            np.ascontiguousarray(pairs[1], dtype=np.int64),
            np.ascontiguousarray(group[pairs[0]], dtype=np.int64),
            int(n_items), len(values),
        )
        return cls(tuple(attribute), values, counts)

    @property
    def n_items(self):
        return self.counts.shape[0]

    def interactors(self, item) -> int:
        return int(self.counts[item].sum())

    def proportions(self) -> np.ndarray:
        """Adoption proportions for all items; rows of items without interactors are zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self.counts / totals
        p[totals[:, 0] == 0] = 0.0
        return p

    def equalities(self) -> np.ndarray:
        return entropy(self.proportions())


def entropy(p: np.ndarray) -> np.ndarray:
    """Natural-log entropy along the last axis with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=-1)


def adoption_proportion(stats: AdoptionStats, item: int) -> np.ndarray:
    """Probability vector over ``stats.values``; all zeros if nobody interacted."""
    counts = stats.counts[item].astype(np.float64)
    total = counts.sum()
    return counts / total if total else counts


def adoption_equality(stats: AdoptionStats, item: int) -> float:
    return float(entropy(adoption_proportion(stats, item)))


def interaction_fairness(stats: AdoptionStats, items, equalities=None) -> float:
    """Sum of adoption equalities over a list of items."""
    items = list(items)
    if not items:
        raise ValueError("interaction fairness needs a non-empty item list")
    eq = stats.equalities() if equalities is None else equalities
    unseen = [v for v in items if stats.interactors(v) == 0]
    if unseen:
        log.warning("%d item(s) have no training interactors and count as 0: %s",
                    len(unseen), unseen[:10])
    return float(sum(eq[v] for v in items))


def cdf_series(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values with their empirical cumulative probabilities."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    return x, np.arange(1, len(x) + 1) / max(len(x), 1)


@dataclass
class FairnessReport:
    if_recommended: np.ndarray  # per evaluation unit
    if_ground_truth: np.ndarray
    k: int

    @property
    def dif(self) -> np.ndarray:
        return self.if_recommended - self.if_ground_truth

    @property
    def mean_dif(self) -> float:
        return float(self.dif.mean()) if len(self.dif) else 0.0

    def cdf(self, which="recommended"):
        vals = self.if_recommended if which == "recommended" else self.if_ground_truth
        return cdf_series(vals)


def dif_at_k(stats: AdoptionStats, recommended, ground_truth, k: int) -> FairnessReport:
    """Per-unit IF of the top-k list minus IF of the ground truth, plus aggregates."""
    if k > stats.n_items:
        raise ValueError(f"k={k} exceeds catalogue size {stats.n_items}")
    eq = stats.equalities()
    has_interactors = stats.counts.sum(axis=1) > 0
    rec_if, gt_if = [], []
    missing = 0
    for rec, gt in zip(recommended, ground_truth):
        top = [v for v in list(rec)[:k] if v >= 0]
        if not len(gt):
            raise ValueError("every evaluation unit needs a non-empty ground truth")
        missing += sum(not has_interactors[v] for v in top) + sum(not has_interactors[v] for v in gt)
        rec_if.append(float(eq[top].sum()) if top else 0.0)
        gt_if.append(float(eq[list(gt)].sum()))
    if missing:
        log.warning("%d list entries had no training interactors and counted as 0", missing)
    return FairnessReport(np.array(rec_if), np.array(gt_if), k)
