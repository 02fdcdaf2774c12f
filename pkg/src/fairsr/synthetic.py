"""Small generated datasets with known structure, for tests and demos."""

from __future__ import annotations

import numpy as np

from .dataio import AttributeTable, Dataset, InteractionLog, PropertyTable

GENDERS = ("F", "M")
AGES = ("10-19", "20-29", "30-39")


def _dataset(sequences, genders, ages, categories):
    records = [
        (str(u), str(v), None, step)
        for u, seq in enumerate(sequences)
        for step, v in enumerate(seq)
    ]
    log = InteractionLog.from_records(records)
    attrs = AttributeTable(
        ("gender", "age"),
        {str(u): {"gender": genders[u], "age": ages[u]} for u in range(len(sequences))},
    )
    props = PropertyTable({str(v): {"category": {c}} for v, c in enumerate(categories)})
    return Dataset(log, attrs, props)


def toy_pattern(n_users=200, n_items=50, length=20, seed=0) -> Dataset:
    """Every user walks the catalogue in order: item i is always followed by i + 1.

    Each user starts at a random item and wraps around modulo ``n_items``,
    so no item repeats within a sequence as long as ``length <= n_items``.
    """
    if length > n_items:
        raise ValueError("length must not exceed the catalogue size")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, n_items, size=n_users)
    sequences = [[(s + i) % n_items for i in range(length)] for s in starts]
    genders = rng.choice(GENDERS, size=n_users).tolist()
    ages = rng.choice(AGES, size=n_users).tolist()
    categories = [f"c{v % 5}" for v in range(n_items)]
    return _dataset(sequences, genders, ages, categories)


def biased_catalogue(n_users=200, n_items=60, length=24, pure_share=0.8, seed=0) -> Dataset:
    """Half the catalogue is gender-pure, half is balanced.

    Items ``0 .. n/4-1`` are only consumed by F users, ``n/4 .. n/2-1`` only
    by M users, and the second half by both. Each step a user picks a pure
    item of their own gender with probability ``pure_share``, otherwise a
    balanced item; items are not repeated within a sequence. Sequences follow
    a per-group cyclic order so the next item is partly predictable.
    """
    rng = np.random.default_rng(seed)
    quarter = n_items // 4
    pools = {
        "F": np.arange(0, quarter),
        "M": np.arange(quarter, 2 * quarter),
    }
    balanced = np.arange(2 * quarter, n_items)
    genders = [GENDERS[u % 2] for u in range(n_users)]
    ages = rng.choice(AGES, size=n_users).tolist()
    sequences = []
    for u in range(n_users):
        pure = pools[genders[u]]
        p_pos = int(rng.integers(len(pure)))
        b_pos = int(rng.integers(len(balanced)))
        seq, seen = [], set()
        while len(seq) < length:
            if rng.random() < pure_share:
                v = int(pure[p_pos % len(pure)])
                p_pos += 1
            else:
                v = int(balanced[b_pos % len(balanced)])
                b_pos += 1
            if v not in seen:
                seen.add(v)
                seq.append(v)
            if len(seen) == len(pure) + len(balanced):
                break
        sequences.append(seq)
    categories = [f"c{v % 4}" for v in range(n_items)]
    return _dataset(sequences, genders, ages, categories)
