# cython: language_level=3
"""Compiled hot kernels. See ``_fallback.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log2

cnp.import_array()

ctypedef fused real:
    float
    double


def unfold_windows(real[:, :, ::1] x, Py_ssize_t width):
    cdef Py_ssize_t b = x.shape[0], d = x.shape[1], t = x.shape[2]
    cdef Py_ssize_t n_pos = t - width + 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((b, n_pos, d * width), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, i, c, k
    with nogil:
        for n in range(b):
            for i in range(n_pos):
                for c in range(d):
                    for k in range(width):
                        out[n, i, c * width + k] = x[n, c, i + k]
    return out_arr


def unfold_windows_backward(real[:, :, ::1] grad, Py_ssize_t t):
    cdef Py_ssize_t b = grad.shape[0], n_pos = grad.shape[1]
    cdef Py_ssize_t width = t - n_pos + 1
    cdef Py_ssize_t d = grad.shape[2] // width
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((b, d, t), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, i, c, k
    with nogil:
        for n in range(b):
            for i in range(n_pos):
                for c in range(d):
                    for k in range(width):
                        out[n, c, i + k] += grad[n, i, c * width + k]
    return out_arr


def segment_softmax(real[::1] scores, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty(scores.shape[0], dtype=dtype)
    cdef real[::1] out = out_arr
    cdef Py_ssize_t s, j, lo, hi
    cdef double m, total
    with nogil:
        for s in range(n_seg):
            lo = offsets[s]
            hi = offsets[s + 1]
            if lo == hi:
                continue
            m = scores[lo]
            for j in range(lo + 1, hi):
                if scores[j] > m:
                    m = scores[j]
            total = 0.0
            for j in range(lo, hi):
                out[j] = <real>exp(scores[j] - m)
                total += out[j]
            for j in range(lo, hi):
                out[j] = <real>(out[j] / total)
    return out_arr


def segment_softmax_backward(real[::1] grad, real[::1] alpha,
                             const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty(grad.shape[0], dtype=dtype)
    cdef real[::1] out = out_arr
    cdef Py_ssize_t s, j, lo, hi
    cdef double dot
    with nogil:
        for s in range(n_seg):
            lo = offsets[s]
            hi = offsets[s + 1]
            dot = 0.0
            for j in range(lo, hi):
                dot += alpha[j] * grad[j]
            for j in range(lo, hi):
                out[j] = <real>(alpha[j] * (grad[j] - dot))
    return out_arr


def segment_sum(real[:, ::1] values, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1, d = values.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n_seg, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t s, j, c
    with nogil:
        for s in range(n_seg):
            for j in range(offsets[s], offsets[s + 1]):
                for c in range(d):
                    out[s, c] += values[j, c]
    return out_arr


def segment_sum_backward(real[:, ::1] grad, const cnp.int64_t[::1] offsets):
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1, d = grad.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((offsets[n_seg], d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t s, j, c
    with nogil:
        for s in range(n_seg):
            for j in range(offsets[s], offsets[s + 1]):
                for c in range(d):
                    out[j, c] = grad[s, c]
    return out_arr


def topk_excluding(real[:, ::1] scores, Py_ssize_t k,
                   const cnp.int64_t[::1] excl_indptr,
                   const cnp.int64_t[::1] excl_indices):
    cdef Py_ssize_t n_rows = scores.shape[0], n_cols = scores.shape[1]
    out_arr = np.full((n_rows, k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    best_arr = np.empty(max(k, 1), dtype=np.float64)
    cdef double[::1] best = best_arr
    mask_arr = np.zeros(n_cols, dtype=np.uint8)
    cdef unsigned char[::1] mask = mask_arr
    cdef Py_ssize_t r, c, j, filled, pos
    cdef double v
    if k == 0:
        return out_arr
    with nogil:
        for r in range(n_rows):
            for j in range(excl_indptr[r], excl_indptr[r + 1]):
                mask[excl_indices[j]] = 1
            filled = 0
            for c in range(n_cols):
                if mask[c]:
                    continue
                v = scores[r, c]
                # strict comparison: an earlier (lower) index wins ties
                if filled == k and not (v > best[k - 1]):
                    continue
                pos = filled if filled < k else k - 1
                while pos > 0 and v > best[pos - 1]:
                    if pos < k:
                        best[pos] = best[pos - 1]
                        out[r, pos] = out[r, pos - 1]
                    pos -= 1
                best[pos] = v
                out[r, pos] = c
                if filled < k:
                    filled += 1
            for j in range(excl_indptr[r], excl_indptr[r + 1]):
                mask[excl_indices[j]] = 0
    return out_arr


def adoption_counts(const cnp.int64_t[::1] items, const cnp.int64_t[::1] groups,
                    Py_ssize_t n_items, Py_ssize_t n_groups):
    out_arr = np.zeros((n_items, n_groups), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t j
    with nogil:
        for j in range(items.shape[0]):
            out[items[j], groups[j]] += 1
    return out_arr


def hits_and_dcg(const cnp.int64_t[:, ::1] ranked,
                 const cnp.int64_t[::1] target_indptr,
                 const cnp.int64_t[::1] target_indices):
    cdef Py_ssize_t n_rows = ranked.shape[0], k = ranked.shape[1]
    hits_arr = np.zeros(n_rows, dtype=np.int64)
    dcg_arr = np.zeros(n_rows, dtype=np.float64)
    cdef cnp.int64_t[::1] hits = hits_arr
    cdef double[::1] dcg = dcg_arr
    cdef Py_ssize_t r, pos, j
    cdef cnp.int64_t item
    with nogil:
        for r in range(n_rows):
            for pos in range(k):
                item = ranked[r, pos]
                if item < 0:
                    continue
                for j in range(target_indptr[r], target_indptr[r + 1]):
                    if target_indices[j] == item:
                        hits[r] += 1
                        dcg[r] += 1.0 / log2(pos + 2.0)
                        break
    return hits_arr, dcg_arr
