"""Time each hot kernel under the compiled and the fallback backend.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time for each backend
and the speed-up of the compiled one.
"""

import argparse
import timeit

import numpy as np

from fairsr import kernels


def workloads(rng):
    """(kernel name, argument tuple) pairs sized like a training or eval batch."""
    B, d, t, width = 256, 32, 5, 2
    windows = rng.normal(size=(B, d, t))
    unfolded = kernels.backends()["python"].unfold_windows(windows, width)

    n_heads = 256
    sizes = rng.integers(1, 12, size=n_heads)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    scores = rng.normal(size=offsets[-1])
    alpha = kernels.backends()["python"].segment_softmax(scores, offsets)
    values = rng.normal(size=(offsets[-1], d))

    n_users, n_items, k = 512, 3000, 10
    item_scores = rng.normal(size=(n_users, n_items))
    excl = [np.sort(rng.choice(n_items, size=60, replace=False)) for _ in range(n_users)]
    excl_ptr = np.concatenate([[0], np.cumsum([len(e) for e in excl])]).astype(np.int64)
    excl_idx = np.concatenate(excl).astype(np.int64)

    n_pairs = 200_000
    items = rng.integers(0, n_items, size=n_pairs).astype(np.int64)
    groups = rng.integers(0, 14, size=n_pairs).astype(np.int64)

    ranked = rng.integers(0, n_items, size=(n_users, k)).astype(np.int64)
    tgt_ptr = np.arange(0, 3 * n_users + 1, 3, dtype=np.int64)
    tgt_idx = rng.integers(0, n_items, size=3 * n_users).astype(np.int64)

    return [
        ("unfold_windows", (windows, width)),
        ("unfold_windows_backward", (unfolded, t)),
        ("segment_softmax", (scores, offsets)),
        ("segment_softmax_backward", (scores, alpha, offsets)),
        ("segment_sum", (values, offsets)),
        ("segment_sum_backward", (values[:n_heads], offsets)),
        ("topk_excluding", (item_scores, k, excl_ptr, excl_idx)),
        ("adoption_counts", (items, groups, n_items, 14)),
        ("hits_and_dcg", (ranked, tgt_ptr, tgt_idx)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    found = kernels.backends()
    names = sorted(found, key=lambda n: n != "cython")
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<26}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speed-up':>10}")
    for kernel, call_args in workloads(np.random.default_rng(0)):
        times = {}
        for backend in names:
            fn = getattr(found[backend], kernel)
            runs = timeit.repeat(lambda: fn(*call_args), repeat=args.repeat, number=1)
            times[backend] = min(runs) * 1e3
        ratio = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kernel:<26}" + "".join(f"{times[n]:>12.3f}" for n in names) + f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
