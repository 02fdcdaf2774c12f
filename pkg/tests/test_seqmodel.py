import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairsr import seqmodel
from fairsr.config import TrainConfig
from fairsr.numerics import CompGraph, ParamView

from _gradcheck import max_rel_error, numeric_grads, rel_error


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _gate_oracle(S, u, w1, w2):
    d, t = S.shape
    out = np.empty_like(S)
    for i in range(d):
        for j in range(t):
            pre = sum(S[i, k] * w1[k, j] for k in range(t)) + u[i] * w2[j]
            out[i, j] = S[i, j] * _sigmoid(pre)
    return out


def _run_gate(S, u, w1, w2):
    g = CompGraph()
    return seqmodel.gate(g, g.input("S", S[None]), g.input("u", u[None]), g.param("w1", w1),
                         g.param("w2", w2)).value[0]


def test_zero_gate_halves():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(4, 3))
    out = _run_gate(S, rng.normal(size=4), np.zeros((3, 3)), np.zeros(3))
    np.testing.assert_array_equal(out, S / 2)


def test_saturated_gate_passes_through():
    S = np.full((2, 3), 1.0)
    out = _run_gate(S, np.full(2, 1.0), np.full((3, 3), 100.0), np.full(3, 100.0))
    np.testing.assert_allclose(out, S, atol=1e-12)


def test_gate_matches_elementwise_oracle():
    rng = np.random.default_rng(1)
    S, u, w1, w2 = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(3, 3)), rng.normal(size=3)
    np.testing.assert_allclose(_run_gate(S, u, w1, w2), _gate_oracle(S, u, w1, w2), rtol=1e-13, atol=1e-14)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gate_never_amplifies(seed):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(5, 4)) * 3
    out = _run_gate(S, rng.normal(size=5), rng.normal(size=(4, 4)), rng.normal(size=4))
    assert np.all(np.abs(out) <= np.abs(S))


def _filters(kernels):
    """Stack d x h filters into the (d * h, n) layout used by the model."""
    return np.stack([k.reshape(-1) for k in kernels], axis=1)


def _horizontal(SF, filters, width):
    g = CompGraph()
    return seqmodel.conv_horizontal(g, g.input("S", SF[None]), g.param("f", filters), width).value[0]


def test_zero_filter_pools_to_zero():
    SF = np.random.default_rng(2).normal(size=(2, 3))
    assert _horizontal(SF, np.zeros((4, 1)), 2).tolist() == [0.0]


def test_full_width_filter_has_single_position():
    rng = np.random.default_rng(3)
    SF, k = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    out = _horizontal(SF, _filters([k]), 3)
    assert out[0] == pytest.approx(np.tanh(np.sum(SF * k)), abs=1e-15)


def test_horizontal_matches_sliding_window_oracle():
    rng = np.random.default_rng(4)
    d, t, h = 2, 3, 2
    SF = rng.normal(size=(d, t))
    kernels = [rng.normal(size=(d, h)) for _ in range(3)]
    expected = [max(np.tanh(np.sum(SF[:, i:i + h] * k)) for i in range(t - h + 1)) for k in kernels]
    np.testing.assert_allclose(_horizontal(SF, _filters(kernels), h), expected, rtol=1e-14)


def test_horizontal_rejects_wide_filter():
    g = CompGraph()
    with pytest.raises(ValueError, match="exceeds"):
        seqmodel.conv_horizontal(g, g.input("S", np.zeros((1, 2, 3))), g.param("f", np.zeros((8, 1))), 4)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_horizontal_range(seed):
    rng = np.random.default_rng(seed)
    out = _horizontal(rng.normal(size=(4, 5)) * 5, rng.normal(size=(8, 6)) * 5, 2)
    assert np.all(np.abs(out) <= 1.0)


def _vertical(SF, filters):
    g = CompGraph()
    return seqmodel.conv_vertical(g, g.input("S", SF[None]), g.param("f", filters)).value[0]


def test_one_hot_vertical_filter_selects_column():
    rng = np.random.default_rng(5)
    SF = rng.normal(size=(4, 3))
    assert _vertical(SF, np.eye(3)[:, [1]])[0] == SF[:, 1].max()


def test_uniform_vertical_filter_averages():
    rng = np.random.default_rng(6)
    SF = rng.normal(size=(4, 3))
    assert _vertical(SF, np.full((3, 1), 1 / 3))[0] == pytest.approx(SF.mean(axis=1).max(), abs=1e-15)


def test_vertical_matches_weighted_sum_oracle():
    rng = np.random.default_rng(7)
    SF, lam = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    expected = [max(sum(lam[i, j] * SF[row, i] for i in range(3)) for row in range(4)) for j in range(2)]
    np.testing.assert_allclose(_vertical(SF, lam), expected, rtol=1e-14)


def _item_item(rows, vbar):
    g = CompGraph()
    return float(seqmodel.item_item_score(g, g.input("r", rows[None]), g.input("v", vbar[None])).value[0])


def test_item_item_examples():
    assert _item_item(np.array([[1.0, 0.0], [2.0, 0.0]]), np.array([0.0, 1.0])) == 0.0
    unit = np.array([0.6, 0.8])
    assert _item_item(unit[None], unit) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(8)
    rows, vbar = rng.normal(size=(3, 4)), rng.normal(size=4)
    assert _item_item(rows, vbar) == pytest.approx(sum(r @ vbar for r in rows), abs=1e-13)


def _micro(seed=0, **overrides):
    cfg = TrainConfig(d=4, t=3, n_h=2, n_v=2, **overrides)
    rng = np.random.default_rng(seed)
    params = seqmodel.init_params(rng, 3, 6, cfg)
    for k in params:
        params[k] = rng.normal(size=params[k].shape) * 0.5
    return cfg, params


def _query(cfg, params, users, windows):
    g = CompGraph()
    return g, seqmodel.sequence_query(g, ParamView(g, params), users, windows, cfg)


def _composed_oracle(cfg, p, user, window, vbar):
    u = p["user_emb"][user]
    rows = p["item_emb"][list(window)]
    S = rows.T
    SF = _gate_oracle(S, u, p["gate_w1"], p["gate_w2"])
    h = cfg.filter_width
    hor = [max(np.tanh(SF[:, i:i + h].reshape(-1) @ p["conv_h"][:, j]) for i in range(cfg.t - h + 1))
           for j in range(cfg.n_h)]
    ver = [max(SF @ p["conv_v"][:, j]) for j in range(cfg.n_v)]
    ubar = u
    for layer in range(cfg.user_mlp_layers):
        ubar = _sigmoid(ubar @ p[f"user_w{layer}"] + p[f"user_b{layer}"])
    s = np.concatenate([hor, ver])
    return ubar @ vbar + s @ vbar + sum(r @ vbar for r in rows)


def test_prediction_matches_composed_oracle():
    cfg, params = _micro()
    windows = np.array([[0, 1, 2], [3, 4, 5]])
    users = np.array([0, 2])
    vbar = np.random.default_rng(9).normal(size=(2, 4))
    g, q = _query(cfg, params, users, windows)
    y = seqmodel.predict(g, q, g.input("vbar", vbar)).value
    for i in range(2):
        assert y[i] == pytest.approx(_composed_oracle(cfg, params, users[i], windows[i], vbar[i]), abs=1e-12)


def test_all_zero_parameters_score_zero():
    cfg, params = _micro()
    for v in params.values():
        v[...] = 0.0
    g, q = _query(cfg, params, np.array([0]), np.array([[0, 1, 2]]))
    assert seqmodel.predict(g, q, g.input("v", np.zeros((1, 4)))).value[0] == 0.0


def test_only_item_item_term_nonzero():
    cfg, params = _micro(no_conv=True)
    for k in params:
        if k.startswith("user_"):
            params[k][...] = 0.0
    # a zero user vector gives ubar = 0.5 everywhere; cancel it with a zero-sum candidate
    vbar = np.array([[1.0, -1.0, 2.0, -2.0]])
    g, q = _query(cfg, params, np.array([1]), np.array([[0, 2, 4]]))
    y = seqmodel.predict(g, q, g.input("v", vbar)).value[0]
    assert y == pytest.approx(_item_item(params["item_emb"][[0, 2, 4]], vbar[0]), abs=1e-14)


@given(st.floats(-5, 5, allow_nan=False))
@settings(max_examples=25, deadline=None)
def test_prediction_is_linear_in_candidate(alpha):
    cfg, params = _micro(seed=1)
    vbar = np.random.default_rng(2).normal(size=(1, 4))
    g, q = _query(cfg, params, np.array([0]), np.array([[1, 2, 3]]))
    base = seqmodel.predict(g, q, g.input("a", vbar)).value[0]
    scaled = seqmodel.predict(g, q, g.input("b", alpha * vbar)).value[0]
    assert scaled == pytest.approx(alpha * base, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("flags", [{}, {"no_pfg": True}, {"no_conv": True}])
def test_query_gradients(flags):
    cfg, params = _micro(seed=3, **flags)
    g = CompGraph()
    P = ParamView(g, params)
    q = seqmodel.sequence_query(g, P, np.array([0, 1, 2]), np.array([[0, 1, 2], [2, 3, 4], [5, 0, 1]]), cfg)
    vbar = g.param("vbar", np.random.default_rng(4).normal(size=(3, 4)))
    loss = g.sum(g.tanh(seqmodel.predict(g, q, vbar)))
    errors = max_rel_error(g, loss)
    assert max(errors.values()) < 1e-6, errors


def test_float32_gradients_match_float64_differences():
    cfg, params = _micro(seed=5)
    users, windows = np.array([0, 1]), np.array([[0, 1, 2], [3, 4, 5]])

    def build(dtype):
        g = CompGraph(dtype)
        q = seqmodel.sequence_query(g, ParamView(g, {k: v.astype(dtype) for k, v in params.items()}),
                                    users, windows, cfg)
        return g, g.sum(g.tanh(g.sum(q, axis=-1)))

    g32, loss32 = build(np.float32)
    g64, loss64 = build(np.float64)
    analytic = g32.backward(loss32)
    numeric = numeric_grads(g64, loss64)
    errors = {k: rel_error(analytic[k], numeric[k]) for k in analytic}
    assert max(errors.values()) < 1e-4, errors
