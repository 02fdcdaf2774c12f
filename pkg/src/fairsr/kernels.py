"""Hot-loop kernels, compiled when available.

The Cython extension ``fairsr._kernels`` is used when it imports cleanly;
otherwise the numpy/Python versions in ``fairsr._fallback`` are used. Set
``FAIRSR_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("FAIRSR_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

NAMES = (
    "unfold_windows",
    "unfold_windows_backward",
    "segment_softmax",
    "segment_softmax_backward",
    "segment_sum",
    "segment_sum_backward",
    "topk_excluding",
    "adoption_counts",
    "hits_and_dcg",
)

unfold_windows = _impl.unfold_windows
unfold_windows_backward = _impl.unfold_windows_backward
segment_softmax = _impl.segment_softmax
segment_softmax_backward = _impl.segment_softmax_backward
segment_sum = _impl.segment_sum
segment_sum_backward = _impl.segment_sum_backward
topk_excluding = _impl.topk_excluding
adoption_counts = _impl.adoption_counts
hits_and_dcg = _impl.hits_and_dcg


def backends():
    """Map backend name -> module for every backend importable here."""
    found = {"python": _fallback}
    try:
        from . import _kernels as compiled
    except ImportError:
        return found
    found["cython"] = compiled
    return found
