"""Pure Python/numpy implementations of the hot kernels.

Signatures mirror ``fairsr._kernels`` exactly; ``fairsr.kernels`` picks one
of the two at import time.
"""

import numpy as np


def unfold_windows(x, width):
    """Sliding windows over the last axis.

    ``x`` has shape (B, d, t). Returns (B, t - width + 1, d * width) with
    ``out[b, i, c * width + k] == x[b, c, i + k]``.
    """
    b, d, t = x.shape
    n_pos = t - width + 1
    out = np.empty((b, n_pos, d * width), dtype=x.dtype)
    for i in range(n_pos):
        out[:, i, :] = x[:, :, i:i + width].reshape(b, d * width)
    return out


def unfold_windows_backward(grad, t):
    b, n_pos, dw = grad.shape
    width = t - n_pos + 1
    d = dw // width
    out = np.zeros((b, d, t), dtype=grad.dtype)
    for i in range(n_pos):
        out[:, :, i:i + width] += grad[:, i, :].reshape(b, d, width)
    return out


def segment_softmax(scores, offsets):
    out = np.empty_like(scores)
    for s in range(len(offsets) - 1):
        lo, hi = offsets[s], offsets[s + 1]
        if lo == hi:
            continue
        z = scores[lo:hi] - scores[lo:hi].max()
        e = np.exp(z)
        out[lo:hi] = e / e.sum()
    return out


def segment_softmax_backward(grad, alpha, offsets):
    out = np.empty_like(grad)
    for s in range(len(offsets) - 1):
        lo, hi = offsets[s], offsets[s + 1]
        if lo == hi:
            continue
        a = alpha[lo:hi]
        g = grad[lo:hi]
        out[lo:hi] = a * (g - np.dot(a, g))
    return out


def segment_sum(values, offsets):
    n_seg = len(offsets) - 1
    out = np.zeros((n_seg, values.shape[1]), dtype=values.dtype)
    for s in range(n_seg):
        lo, hi = offsets[s], offsets[s + 1]
        if lo < hi:
            out[s] = values[lo:hi].sum(axis=0)
    return out


def segment_sum_backward(grad, offsets):
    counts = np.diff(offsets)
    return np.repeat(grad, counts, axis=0)


def topk_excluding(scores, k, excl_indptr, excl_indices):
    """Top-k column indices per row, descending score, ties by lower index.

    Columns listed in row ``r``'s exclusion slice are never returned. Rows
    with fewer than ``k`` eligible columns are padded with -1.
    """
    n_rows, n_cols = scores.shape
    out = np.full((n_rows, k), -1, dtype=np.int64)
    for r in range(n_rows):
        row = scores[r].astype(np.float64, copy=True)
        eligible = np.ones(n_cols, dtype=bool)
        eligible[excl_indices[excl_indptr[r]:excl_indptr[r + 1]]] = False
        cols = np.flatnonzero(eligible)
        # stable sort on the negated score keeps lower indices first on ties
        order = cols[np.argsort(-row[cols], kind="stable")][:k]
        out[r, :len(order)] = order
    return out


def adoption_counts(items, groups, n_items, n_groups):
    counts = np.zeros((n_items, n_groups), dtype=np.int64)
    np.add.at(counts, (items, groups), 1)
    return counts


def hits_and_dcg(ranked, target_indptr, target_indices):
    """Per row: number of ranked entries in the target set, and binary DCG."""
    n_rows, k = ranked.shape
    hits = np.zeros(n_rows, dtype=np.int64)
    dcg = np.zeros(n_rows, dtype=np.float64)
    for r in range(n_rows):
        targets = set(target_indices[target_indptr[r]:target_indptr[r + 1]].tolist())
        for pos in range(k):
            item = ranked[r, pos]
            if item >= 0 and item in targets:
                hits[r] += 1
                dcg[r] += 1.0 / np.log2(pos + 2.0)
    return hits, dcg
