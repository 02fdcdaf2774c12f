"""Cross&compress units coupling item embeddings with their graph-entity embeddings.

A unit forms C = v e^T and projects it back to both spaces. The rank-one
identities C w = v (e.w) and C^T w = e (v.w) keep each layer O(d).
"""

from __future__ import annotations

import numpy as np

from .numerics import CompGraph, Node
from .seqmodel import xavier

WEIGHTS = ("w_vv", "w_ev", "w_ve", "w_ee")


def init_params(rng, d, layers, dtype=np.float64) -> dict[str, np.ndarray]:
    params = {}
    for layer in range(layers):
        for w in WEIGHTS:
            params[f"cipl{layer}_{w}"] = xavier(rng, d, 1, dtype=dtype)  # (d, 1)
        params[f"cipl{layer}_b_v"] = np.zeros(d, dtype)
        params[f"cipl{layer}_b_e"] = np.zeros(d, dtype)
    return params


def layer_params(P, layer) -> dict[str, Node]:
    return {k: P[f"cipl{layer}_{k}"] for k in (*WEIGHTS, "b_v", "b_e")}


def cross_compress(g: CompGraph, v: Node, e: Node, w) -> tuple[Node, Node]:
    """One unit over a batch of (v, e) rows, both (B, d)."""
    e_vv = g.matmul(e, w["w_vv"])  # (B, 1) = e . w_vv
    v_ev = g.matmul(v, w["w_ev"])
    e_ve = g.matmul(e, w["w_ve"])
    v_ee = g.matmul(v, w["w_ee"])
    v_next = g.add(g.add(g.mul(v, e_vv), g.mul(e, v_ev)), w["b_v"])
    e_next = g.add(g.add(g.mul(v, e_ve), g.mul(e, v_ee)), w["b_e"])
    return v_next, e_next


def final_embeddings(g: CompGraph, P, v: Node, e: Node, layers: int) -> tuple[Node, Node]:
    if layers < 1:
        raise ValueError("the cross&compress stack needs at least one layer")
    for layer in range(layers):
        v, e = cross_compress(g, v, e, layer_params(P, layer))
    return v, e
