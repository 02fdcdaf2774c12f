"""Preference-graph embedding task: relational attention, tail prediction, triplet loss."""

from __future__ import annotations

import numpy as np

from .numerics import CompGraph, Node
from .seqmodel import uniform, xavier


def init_params(rng, d, n_tails, n_relations, cfg, dtype=np.float64) -> dict[str, np.ndarray]:
    params = {
        "tail_emb": uniform(rng, (n_tails, d), cfg.init_scale / d, dtype),
        "rel_w0": xavier(rng, n_relations, d, dtype=dtype),
        "rel_b0": np.zeros(d, dtype),
    }
    for layer in range(1, cfg.relation_layers):
        params[f"rel_w{layer}"] = xavier(rng, d, d, dtype=dtype)
        params[f"rel_b{layer}"] = np.zeros(d, dtype)
    n_att = 1 if cfg.shared_attention else n_relations
    params["att_w"] = xavier(rng, d, d, shape=(n_att, d, d), dtype=dtype)
    for layer in range(cfg.tail_layers):
        params[f"tail_w{layer}"] = xavier(rng, 2 * d if layer == 0 else d, d, dtype=dtype)
        params[f"tail_b{layer}"] = np.zeros(d, dtype)
    return params


def relation_embed(g: CompGraph, P, relation_ids, layers: int) -> Node:
    """Sigmoid MLP over one-hot relation ids; the first layer is a row lookup."""
    ids = np.asarray(relation_ids, dtype=np.int64)
    n_rel = P["rel_w0"].shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rel):
        raise IndexError(f"relation id out of range 0..{n_rel - 1}")
    out = g.sigmoid(g.add(g.gather(P["rel_w0"], ids), P["rel_b0"]))
    for layer in range(1, layers):
        out = g.sigmoid(g.add(g.matmul(out, P[f"rel_w{layer}"]), P[f"rel_b{layer}"]))
    return out


def attention(g: CompGraph, W: Node, h: Node, r: Node, t: Node) -> Node:
    """(W t) . tanh(W h + r) for rows of ``h``, ``r``, ``t`` (each (n, d)); W is (d, d)."""
    Wt = g.transpose(W)
    return g.sum(g.mul(g.matmul(t, Wt), g.tanh(g.add(g.matmul(h, Wt), r))), axis=-1)


def neighbor_scores(g, P, head_rows, rels, tails, relation_vectors: Node):
    """Attention logits for every (head, relation, tail) neighbor triple.

    Rows are grouped by relation so each group uses one W_r, then restored to
    the original order.
    """
    n = len(rels)
    shared = P["att_w"].shape[0] == 1
    parts, order = [], []
    for rel in np.unique(rels):
        idx = np.flatnonzero(rels == rel)
        W = g.reshape(g.slice(P["att_w"], slice(0 if shared else rel, 1 if shared else rel + 1)),
                      P["att_w"].shape[1:])
        h = g.gather(head_rows, idx)
        t = g.gather(P["tail_emb"], tails[idx])
        r = g.gather(relation_vectors, np.full(len(idx), rel))
        parts.append(attention(g, W, h, r, t))
        order.append(idx)
    scores = g.concat(parts, axis=0) if len(parts) > 1 else parts[0]
    inverse = np.empty(n, dtype=np.int64)
    inverse[np.concatenate(order)] = np.arange(n)
    return g.gather(scores, inverse)


def pass_information(g: CompGraph, P, head_e: Node, neighborhoods, relation_vectors: Node,
                     uniform_attention=False) -> Node:
    """Attention-weighted sum of neighbor tail embeddings per head.

    ``neighborhoods`` is ``(offsets, relations, tails)`` for the batch of
    heads. Heads without neighbors keep their own vector ``head_e``.
    """
    offsets, rels, tails = (np.asarray(a, dtype=np.int64) for a in neighborhoods)
    if len(rels) == 0:
        return head_e
    sizes = np.diff(offsets)
    tail_rows = g.gather(P["tail_emb"], tails)
    if uniform_attention:
        weights = np.repeat(1.0 / np.maximum(sizes, 1), sizes)[:, None]
        agg = g.segment_sum(g.mul(tail_rows, weights), offsets)
    else:
        owner = np.repeat(np.arange(len(sizes)), sizes)
        scores = neighbor_scores(g, P, g.gather(head_e, owner), rels, tails, relation_vectors)
        alpha = g.segment_softmax(scores, offsets)
        agg = g.segment_sum(g.mul(tail_rows, g.reshape(alpha, (len(rels), 1))), offsets)
    isolated = sizes == 0
    if isolated.any():
        agg = g.add(agg, g.mul(head_e, isolated[:, None].astype(np.float64)))
    return agg


def predict_tail(g: CompGraph, P, h_agg: Node, r: Node, layers: int) -> Node:
    out = g.concat([h_agg, r], axis=-1)
    for layer in range(layers):
        out = g.sigmoid(g.add(g.matmul(out, P[f"tail_w{layer}"]), P[f"tail_b{layer}"]))
    return out


def triplet_score(g: CompGraph, t: Node, t_hat: Node) -> Node:
    """sigmoid(t . t_hat) per row."""
    return g.sigmoid(g.sum(g.mul(t, t_hat), axis=-1))


def fpge_loss(g: CompGraph, b_pos: Node, b_neg: Node, lambda1: float) -> Node:
    """-lambda1 * (sum of positive scores - sum of negative scores)."""
    if b_pos.value.size == 0 or b_neg.value.size == 0:
        raise ValueError("triplet loss needs non-empty positive and negative batches")
    return g.scale(g.sub(g.sum(b_pos), g.sum(b_neg)), -lambda1)
