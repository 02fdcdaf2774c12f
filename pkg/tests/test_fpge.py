import numpy as np
import pytest

from fairsr import fpge, prefgraph
from fairsr.config import TrainConfig
from fairsr.numerics import CompGraph, ParamView

from _gradcheck import max_rel_error


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _params(seed, d=4, n_tails=5, n_rel=3, **cfg):
    rng = np.random.default_rng(seed)
    params = fpge.init_params(rng, d, n_tails, n_rel, TrainConfig(d=d, t=3, n_h=d // 2, n_v=d // 2, **cfg))
    for k in params:
        params[k] = rng.normal(size=params[k].shape) * 0.7
    return params


def _relations(params, ids, layers=2):
    g = CompGraph()
    return fpge.relation_embed(g, ParamView(g, params), ids, layers).value


def test_zero_relation_mlp_gives_half():
    params = _params(0)
    for k in params:
        if k.startswith("rel_"):
            params[k][...] = 0.0
    np.testing.assert_array_equal(_relations(params, [0, 2]), np.full((2, 4), 0.5))


def test_distinct_relations_distinct_vectors():
    r = _relations(_params(1), [0, 1, 2])
    assert not np.allclose(r[0], r[1]) and not np.allclose(r[1], r[2])


def test_relation_mlp_matches_dense_oracle():
    params = _params(2)
    r = _relations(params, [0, 1, 2])
    for rel in range(3):
        x = np.eye(3)[rel]
        h = _sigmoid(x @ params["rel_w0"] + params["rel_b0"])
        h = _sigmoid(h @ params["rel_w1"] + params["rel_b1"])
        np.testing.assert_allclose(r[rel], h, rtol=1e-14)


def test_unknown_relation_rejected():
    with pytest.raises(IndexError):
        _relations(_params(3), [3])


def _attention(W, h, r, t):
    g = CompGraph()
    return fpge.attention(g, g.param("W", W), g.input("h", h), g.input("r", r), g.input("t", t)).value


def test_zero_projection_scores_zero():
    rng = np.random.default_rng(4)
    out = _attention(np.zeros((4, 4)), *rng.normal(size=(3, 2, 4)))
    np.testing.assert_array_equal(out, [0.0, 0.0])


def test_identity_projection_small_head():
    h = np.array([[1e-4, -2e-4, 3e-4, 5e-5]])
    out = _attention(np.eye(4), h, np.zeros((1, 4)), h)
    assert out[0] > 0
    assert out[0] == pytest.approx(float(h[0] @ h[0]), rel=1e-6)


def test_attention_matches_formula():
    rng = np.random.default_rng(5)
    W, h, r, t = rng.normal(size=(4, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    expected = [(W @ t[i]) @ np.tanh(W @ h[i] + r[i]) for i in range(3)]
    np.testing.assert_allclose(_attention(W, h, r, t), expected, rtol=1e-13)


def _aggregate(params, head_e, neighborhoods, rel_vectors, uniform=False):
    g = CompGraph()
    P = ParamView(g, params)
    out = fpge.pass_information(g, P, g.input("h", head_e), neighborhoods, g.input("r", rel_vectors),
                                uniform_attention=uniform)
    return out.value


def test_single_neighbor_returns_its_tail():
    params = _params(6)
    nb = (np.array([0, 1]), np.array([1]), np.array([3]))
    out = _aggregate(params, np.ones((1, 4)), nb, np.ones((3, 4)))
    np.testing.assert_allclose(out[0], params["tail_emb"][3], rtol=1e-15)


def test_equal_scores_average_tails():
    params = _params(7)
    params["att_w"][...] = 0.0
    nb = (np.array([0, 2]), np.array([0, 2]), np.array([1, 4]))
    out = _aggregate(params, np.ones((1, 4)), nb, np.ones((3, 4)))
    np.testing.assert_allclose(out[0], params["tail_emb"][[1, 4]].mean(axis=0), rtol=1e-14)


def test_isolated_head_keeps_its_vector():
    params = _params(8)
    head = np.random.default_rng(9).normal(size=(2, 4))
    nb = (np.array([0, 0, 1]), np.array([2]), np.array([0]))
    out = _aggregate(params, head, nb, np.ones((3, 4)))
    np.testing.assert_array_equal(out[0], head[0])
    np.testing.assert_allclose(out[1], params["tail_emb"][0])


def _softmax(x):
    z = np.exp(x - x.max())
    return z / z.sum()


def test_aggregation_matches_oracle_and_weights_sum_to_one():
    params = _params(10)
    rng = np.random.default_rng(11)
    head = rng.normal(size=(2, 4))
    rel_vec = rng.normal(size=(3, 4))
    offsets = np.array([0, 3, 5])
    rels = np.array([0, 2, 1, 1, 0])
    tails = np.array([0, 4, 2, 3, 1])
    out = _aggregate(params, head, (offsets, rels, tails), rel_vec)
    for b in range(2):
        idx = range(offsets[b], offsets[b + 1])
        scores = np.array([(params["att_w"][rels[i]] @ params["tail_emb"][tails[i]])
                           @ np.tanh(params["att_w"][rels[i]] @ head[b] + rel_vec[rels[i]]) for i in idx])
        alpha = _softmax(scores)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12)
        expected = sum(a * params["tail_emb"][tails[i]] for a, i in zip(alpha, idx))
        np.testing.assert_allclose(out[b], expected, rtol=1e-12)


def test_shared_attention_matrix():
    params = _params(12, shared_attention=True)
    assert params["att_w"].shape == (1, 4, 4)
    rng = np.random.default_rng(13)
    head, rel_vec = rng.normal(size=(1, 4)), rng.normal(size=(3, 4))
    nb = (np.array([0, 2]), np.array([0, 2]), np.array([1, 3]))
    out = _aggregate(params, head, nb, rel_vec)
    W = params["att_w"][0]
    scores = [(W @ params["tail_emb"][t]) @ np.tanh(W @ head[0] + rel_vec[r]) for r, t in [(0, 1), (2, 3)]]
    alpha = _softmax(np.array(scores))
    np.testing.assert_allclose(out[0], alpha @ params["tail_emb"][[1, 3]], rtol=1e-12)


def test_uniform_attention_ablation():
    params = _params(14)
    nb = (np.array([0, 3]), np.array([0, 1, 2]), np.array([0, 1, 2]))
    out = _aggregate(params, np.ones((1, 4)), nb, np.ones((3, 4)), uniform=True)
    np.testing.assert_allclose(out[0], params["tail_emb"][:3].mean(axis=0), rtol=1e-14)


def test_frozen_aggregates_over_four_neighbors():
    user_attrs = [{"gender": "Female", "age": "20-29"}, {"gender": "Female", "age": "20-29"}]
    props = [{"C": {"Animation"}, "D": {"C. Buck"}}]
    graph = prefgraph.build_graph(1, [0, 1], [0, 0], user_attrs, ("gender", "age"), props)
    offsets, rels, tails = graph.neighborhoods([0])
    assert offsets.tolist() == [0, 4]
    names = {graph.entity_name(graph.n_items + t) for t in tails.tolist()}
    assert names == {"prop:C=Animation", "prop:D=C. Buck", "attr:gender=Female", "attr:age=20-29"}
    params = _params(15, n_tails=graph.n_tails, n_rel=len(graph.relations))
    params["att_w"][...] = 0.0
    out = _aggregate(params, np.ones((1, 4)), (offsets, rels, tails), np.ones((len(graph.relations), 4)))
    np.testing.assert_allclose(out[0], params["tail_emb"][tails].mean(axis=0), rtol=1e-14)


def _score(t, t_hat):
    g = CompGraph()
    return fpge.triplet_score(g, g.input("t", t), g.input("th", t_hat)).value


def test_triplet_score_examples():
    assert _score(np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]]))[0] == 0.5
    assert _score(np.array([[50.0, 0.0]]), np.array([[50.0, 0.0]]))[0] == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(16)
    t, t_hat = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    out = _score(t, t_hat)
    np.testing.assert_allclose(out, _sigmoid((t * t_hat).sum(axis=1)), rtol=1e-14)
    assert np.all((out > 0) & (out < 1))


def test_tail_prediction_matches_composed_oracle():
    params = _params(17)
    rng = np.random.default_rng(18)
    h, r, t = rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    g = CompGraph()
    t_hat = fpge.predict_tail(g, ParamView(g, params), g.input("h", h), g.input("r", r), 1)
    b = fpge.triplet_score(g, g.input("t", t), t_hat).value
    for i in range(2):
        expected_hat = _sigmoid(np.concatenate([h[i], r[i]]) @ params["tail_w0"] + params["tail_b0"])
        assert b[i] == pytest.approx(_sigmoid(t[i] @ expected_hat), rel=1e-14)


def _loss(pos, neg, lam=1.0):
    g = CompGraph()
    return float(fpge.fpge_loss(g, g.input("p", np.asarray(pos, float)), g.input("n", np.asarray(neg, float)),
                                lam).value)


def test_triplet_loss_examples():
    assert _loss([1.0], [0.0]) == -1.0
    assert _loss([0.3, 0.8], [0.3, 0.8]) == 0.0
    with pytest.raises(ValueError):
        _loss([], [])


def test_triplet_loss_gradients():
    params = _params(19)
    rng = np.random.default_rng(20)
    g = CompGraph()
    P = ParamView(g, params)
    head = g.param("head", rng.normal(size=(2, 4)))
    relations = fpge.relation_embed(g, P, np.arange(3), 2)
    nb = (np.array([0, 2, 3]), np.array([0, 1, 2]), np.array([0, 3, 4]))
    h_agg = fpge.pass_information(g, P, head, nb, relations)
    r = g.gather(relations, np.array([0, 2]))
    t_hat = fpge.predict_tail(g, P, h_agg, r, 1)
    b_pos = fpge.triplet_score(g, g.gather(P["tail_emb"], np.array([0, 4])), t_hat)
    b_neg = fpge.triplet_score(g, g.gather(P["tail_emb"], np.array([1, 2])), t_hat)
    loss = fpge.fpge_loss(g, b_pos, b_neg, 1.0)
    errors = max_rel_error(g, loss)
    assert max(errors.values()) < 1e-6, errors
