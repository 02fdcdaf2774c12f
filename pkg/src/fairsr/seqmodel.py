"""Sequence encoder: feature gating, horizontal/vertical convolutions, scoring.

All functions operate on batches. A window of ``t`` item embeddings is held
as a ``(B, d, t)`` node so each column is one time step.
"""

from __future__ import annotations

import numpy as np

from .numerics import CompGraph, Node


def uniform(rng, shape, limit, dtype=np.float64):
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def xavier(rng, fan_in, fan_out, shape=None, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return uniform(rng, shape or (fan_in, fan_out), limit, dtype)


def init_params(rng, n_users, n_items, cfg, dtype=np.float64) -> dict[str, np.ndarray]:
    d, t, h = cfg.d, cfg.t, cfg.filter_width
    emb = cfg.init_scale / d
    params = {
        "user_emb": uniform(rng, (n_users, d), emb, dtype),
        "item_emb": uniform(rng, (n_items, d), emb, dtype),
        "gate_w1": xavier(rng, t, t, dtype=dtype),
        "gate_w2": xavier(rng, d, t, shape=(t,), dtype=dtype),
        "conv_h": xavier(rng, d * h, cfg.n_h, dtype=dtype),
        "conv_v": xavier(rng, t, cfg.n_v, dtype=dtype),
    }
    for layer in range(cfg.user_mlp_layers):
        params[f"user_w{layer}"] = xavier(rng, d, d, dtype=dtype)
        params[f"user_b{layer}"] = np.zeros(d, dtype)
    return params


def stack_window(g: CompGraph, item_emb: Node, windows) -> Node:
    """Gather window embeddings into a (B, d, t) node."""
    rows = g.gather(item_emb, windows)  # (B, t, d)
    return g.transpose(rows, (0, 2, 1))


def gate(g: CompGraph, S: Node, u: Node, w1: Node, w2: Node) -> Node:
    """S * sigmoid(S @ W1 + u w2^T), per sample. ``S`` is (B, d, t), ``u`` is (B, d)."""
    b, d = u.shape
    pre = g.add(g.matmul(S, w1), g.mul(g.reshape(u, (b, d, 1)), w2))
    return g.mul(S, g.sigmoid(pre))


def conv_horizontal(g: CompGraph, SF: Node, filters: Node, width: int) -> Node:
    """tanh responses of width-``width`` filters sliding over time, max-pooled.

    ``filters`` is (d * width, n_h); column j flattens a d x width filter
    row-major. Returns (B, n_h).
    """
    t = SF.shape[-1]
    if width > t:
        raise ValueError(f"filter width {width} exceeds window length {t}")
    patches = g.unfold(SF, width)  # (B, P, d * width)
    return g.max(g.tanh(g.matmul(patches, filters)), axis=1)


def conv_vertical(g: CompGraph, SF: Node, filters: Node) -> Node:
    """Weighted sums over time per embedding row, max-pooled over rows.

    ``filters`` is (t, n_v). Returns (B, n_v).
    """
    return g.max(g.matmul(SF, filters), axis=1)


def user_mlp(g: CompGraph, u: Node, layers) -> Node:
    out = u
    for w, b in layers:
        out = g.sigmoid(g.add(g.matmul(out, w), b))
    return out


def item_item_score(g: CompGraph, window_rows: Node, vbar: Node) -> Node:
    """Sum over window items of v_j . vbar. ``window_rows`` is (B, t, d), ``vbar`` (B, d)."""
    return g.sum(g.mul(g.sum(window_rows, axis=1), vbar), axis=-1)


def sequence_query(g: CompGraph, P, users, windows, cfg) -> Node:
    """The (B, d) vector q such that the score of candidate v is q . vbar_v.

    q = user_mlp(u) + [horizontal, vertical] + sum of window embeddings.
    """
    u = g.gather(P["user_emb"], users)
    rows = g.gather(P["item_emb"], windows)  # (B, t, d)
    layers = [(P[f"user_w{i}"], P[f"user_b{i}"]) for i in range(cfg.user_mlp_layers)]
    query = g.add(user_mlp(g, u, layers), g.sum(rows, axis=1))
    if cfg.no_conv:
        return query
    S = g.transpose(rows, (0, 2, 1))
    SF = gate(g, S, u, P["gate_w1"], P["gate_w2"]) if cfg.use_gate else S
    s = g.concat([conv_horizontal(g, SF, P["conv_h"], cfg.filter_width),
                  conv_vertical(g, SF, P["conv_v"])], axis=-1)
    return g.add(query, s)


def predict(g: CompGraph, query: Node, vbar: Node) -> Node:
    """Row-wise inner product of queries with candidate vectors: (B,)."""
    return g.sum(g.mul(query, vbar), axis=-1)
