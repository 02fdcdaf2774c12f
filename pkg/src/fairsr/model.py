"""The joint model: sequence encoder + cross&compress stack + graph-embedding task."""

from __future__ import annotations

import numpy as np

from . import cipl, fpge, seqmodel
from .config import TrainConfig
from .numerics import CompGraph, Node, ParamView
from .prefgraph import PreferenceGraph
from .seqmodel import uniform


class FairSR:
    """Parameter container plus loss and scoring builders.

    ``graph`` may be None, in which case every item uses the shared default
    entity row and the graph task is unavailable.
    """

    def __init__(self, cfg: TrainConfig, n_users: int, n_items: int,
                 graph: PreferenceGraph | None = None, rng=None):
        self.cfg = cfg
        self.n_users = n_users
        self.n_items = n_items
        self.graph = graph
        self.dtype = np.dtype(cfg.precision)
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        d = cfg.d
        params = seqmodel.init_params(rng, n_users, n_items, cfg, self.dtype)
        params.update(cipl.init_params(rng, d, cfg.cipl_layers, self.dtype))
        # one entity row per item plus a shared default for items outside the graph
        params["item_entity_emb"] = uniform(rng, (n_items + 1, d), cfg.init_scale / d, self.dtype)
        self.entity_row = np.full(n_items, n_items, dtype=np.int64)
        if graph is not None:
            if graph.n_items != n_items:
                raise ValueError(f"graph has {graph.n_items} items, model has {n_items}")
            params.update(fpge.init_params(rng, d, max(graph.n_tails, 1),
                                           max(len(graph.relations), 1), cfg, self.dtype))
            linked = np.diff(graph.neighbor_offsets) > 0
            self.entity_row[linked] = np.flatnonzero(linked)
        self.params: dict[str, np.ndarray] = params

    # -- building blocks

    def new_graph(self):
        g = CompGraph(self.dtype)
        return g, ParamView(g, self.params)

    def item_vectors(self, g, P, items) -> tuple[Node, Node]:
        """Cross&compressed (item, entity) vectors for an array of item ids."""
        items = np.asarray(items, dtype=np.int64)
        v = g.gather(P["item_emb"], items)
        e = g.gather(P["item_entity_emb"], self.entity_row[items])
        return cipl.final_embeddings(g, P, v, e, self.cfg.cipl_layers)

    def sr_scores(self, g, P, users, windows, items) -> Node:
        """Scores of one candidate item per (user, window) row."""
        query = seqmodel.sequence_query(g, P, users, windows, self.cfg)
        vbar, _ = self.item_vectors(g, P, items)
        return seqmodel.predict(g, query, vbar)

    def sr_pair_scores(self, g, P, users, windows, pos, neg) -> tuple[Node, Node]:
        """Scores of the positive and the negative item for each training row."""
        query = seqmodel.sequence_query(g, P, users, windows, self.cfg)
        vbar, _ = self.item_vectors(g, P, np.concatenate([pos, neg]))
        n = len(pos)
        pos_vec = g.slice(vbar, slice(0, n))
        neg_vec = g.slice(vbar, slice(n, 2 * n))
        return seqmodel.predict(g, query, pos_vec), seqmodel.predict(g, query, neg_vec)

    def triplet_scores(self, g, P, pos, neg) -> tuple[Node, Node]:
        """Scores b for positive and negative triplets sharing heads and relations."""
        if self.graph is None:
            raise ValueError("the graph task needs a preference graph")
        cfg = self.cfg
        heads = pos[:, 0]
        _, head_e = self.item_vectors(g, P, heads)
        relations = fpge.relation_embed(
            g, P, np.arange(len(self.graph.relations)), cfg.relation_layers)
        h_agg = fpge.pass_information(g, P, head_e, self.graph.neighborhoods(heads),
                                      relations, uniform_attention=cfg.no_ra)
        r = g.gather(relations, pos[:, 1])
        t_hat = fpge.predict_tail(g, P, h_agg, r, cfg.tail_layers)
        b_pos = fpge.triplet_score(g, g.gather(P["tail_emb"], pos[:, 2]), t_hat)
        b_neg = fpge.triplet_score(g, g.gather(P["tail_emb"], neg[:, 2]), t_hat)
        return b_pos, b_neg

    def regularizer(self, g, P) -> Node:
        """lambda2 times the squared norm of every parameter."""
        P.bind_all()
        total = None
        for name in sorted(self.params):
            term = g.square_sum(P[name])
            total = term if total is None else g.add(total, term)
        return g.scale(total, self.cfg.lambda2)

    # -- inference

    def catalogue_vectors(self) -> np.ndarray:
        g, P = self.new_graph()
        vbar, _ = self.item_vectors(g, P, np.arange(self.n_items))
        return vbar.value

    def score_all(self, users, windows, vbar=None) -> np.ndarray:
        """(B, n_items) score matrix for a batch of (user, window) rows."""
        if vbar is None:
            vbar = self.catalogue_vectors()
        g, P = self.new_graph()
        query = seqmodel.sequence_query(g, P, np.asarray(users, np.int64),
                                        np.asarray(windows, np.int64), self.cfg)
        return query.value.astype(np.float64) @ vbar.astype(np.float64).T
