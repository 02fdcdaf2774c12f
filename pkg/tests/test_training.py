import math

import numpy as np
import pytest

from fairsr import harness, synthetic, training
from fairsr.config import TrainConfig
from fairsr.model import FairSR
from fairsr.numerics import CompGraph
from fairsr.training import CheckpointError, Trainer

from _gradcheck import max_rel_error


def _bpr(pos, neg):
    g = CompGraph()
    return float(training.bpr_loss(g, g.input("p", np.asarray(pos, float)), g.input("n", np.asarray(neg, float))).value)


def test_bpr_examples():
    assert _bpr([0.3, -1.0], [0.3, -1.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert _bpr([60.0], [-60.0]) < 1e-40
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=7), rng.normal(size=7)
    oracle = np.mean([-math.log(1 / (1 + math.exp(-(p - n)))) for p, n in zip(pos, neg)])
    assert _bpr(pos, neg) == pytest.approx(oracle, abs=1e-14)


def _experiment(n_users=20, length=12, seed=0):
    data = synthetic.toy_pattern(n_users=n_users, n_items=15, length=length, seed=seed)
    return harness.Experiment.prepare(data, 3, 2)


def _micro_cfg(**kw):
    base = dict(d=8, t=3, g=2, n_h=4, n_v=4, batch_size=16, fpge_batch_size=8, lambda2=1e-2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def _trainer(exp, cfg):
    graph = exp.graph(cfg.protected)
    model = FairSR(cfg, exp.data.log.n_users, exp.data.log.n_items, graph)
    # move away from the tiny initial scale so every path carries signal
    rng = np.random.default_rng(cfg.seed + 100)
    for name, value in model.params.items():
        value[...] = rng.normal(size=value.shape) * 0.3
    return Trainer(model, exp.train, graph)


def _batches(trainer, n_sr=4, seed=0):
    rng = np.random.default_rng(seed)
    users, windows, pos = (a[:n_sr] for a in trainer.rows)
    neg = trainer.negatives.sample(users, rng)
    triplets = trainer.triplets.batch(3, rng)
    return (users, windows, pos, neg), triplets


def test_joint_loss_matches_term_by_term():
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg())
    sr_batch, triplets = _batches(trainer)
    _, terms = trainer.joint_objective(sr_batch, triplets)
    model = trainer.model
    g, P = model.new_graph()
    sr = training.bpr_loss(g, *model.sr_pair_scores(g, P, *sr_batch)).value
    g, P = model.new_graph()
    b_pos, b_neg = model.triplet_scores(g, P, *triplets)
    fp = -model.cfg.lambda1 * (b_pos.value.sum() - b_neg.value.sum())
    reg = model.cfg.lambda2 * sum(float((v ** 2).sum()) for v in model.params.values())
    assert float(terms["total"].value) == pytest.approx(float(sr) + float(fp) + reg, abs=1e-10)


def test_gradient_suite_covers_every_parameter_group():
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg())
    sr_batch, triplets = _batches(trainer, n_sr=3)
    g, terms = trainer.joint_objective(sr_batch, triplets)
    errors = max_rel_error(g, terms["total"])
    groups = {"gate_w1", "gate_w2", "conv_h", "conv_v", "cipl0_w_vv", "att_w", "rel_w0", "tail_w0",
              "user_w0", "user_emb", "item_emb", "item_entity_emb", "tail_emb"}
    assert groups <= set(errors)
    assert max(errors.values()) < 1e-6, errors


def test_regularizer_adds_exactly_two_lambda_theta():
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg(lambda2=0.05))
    sr_batch, _ = _batches(trainer)
    g, _, total = trainer.sr_objective(*sr_batch)
    with_reg = g.backward(total)
    trainer.model.cfg = trainer.cfg = trainer.cfg.replace(lambda2=0.0)
    g, _, total = trainer.sr_objective(*sr_batch)
    without = g.backward(total)
    for name, value in trainer.model.params.items():
        np.testing.assert_allclose(with_reg[name] - without[name], 2 * 0.05 * value, atol=1e-12)


def test_epsilon_ratio_in_trace():
    exp = _experiment(n_users=40)
    cfg = _micro_cfg(batch_size=8)
    trainer = _trainer(exp, cfg)
    trainer.run_epoch()
    phases = [r.phase for r in trainer.trace]
    n_sr = phases.count("sr")
    assert phases.count("fpge") == math.ceil(n_sr / 3)
    assert phases[:4] == ["sr", "sr", "sr", "fpge"]


def test_no_fpge_trace_has_sr_only():
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg(no_fpge=True))
    trainer.run_epoch()
    assert {r.phase for r in trainer.trace} == {"sr"}


def test_sr_loss_moving_average_decreases():
    exp = _experiment(n_users=20)
    cfg = _micro_cfg(d=16, n_h=8, n_v=8, batch_size=16, lambda2=1e-6, lr=1e-2)
    graph = exp.graph(cfg.protected)
    trainer = Trainer(FairSR(cfg, exp.data.log.n_users, exp.data.log.n_items, graph), exp.train, graph)
    while sum(r.phase == "sr" for r in trainer.trace) < 150:
        trainer.run_epoch()
    sr = np.array([r.loss for r in trainer.trace if r.phase == "sr"][:150])
    # 50 outer iterations of three SR batches, averaged per ten iterations
    blocks = sr.reshape(5, 30).mean(axis=1)
    assert np.all(np.diff(blocks) < 0), blocks


def test_identical_seeds_give_identical_traces(tmp_path):
    traces = []
    for name in ("a", "b"):
        exp = _experiment()
        cfg = _micro_cfg(epochs=3)
        graph = exp.graph(cfg.protected)
        trainer = Trainer(FairSR(cfg, exp.data.log.n_users, exp.data.log.n_items, graph), exp.train, graph)
        trainer.fit(exp.val, rundir=tmp_path / name)
        traces.append((tmp_path / name / "loss_trace.tsv").read_bytes())
    assert traces[0] == traces[1]
    assert (tmp_path / "a" / "checkpoint.bin").read_bytes() == (tmp_path / "b" / "checkpoint.bin").read_bytes()


def test_checkpoint_round_trip(tmp_path):
    exp = _experiment()
    cfg = _micro_cfg()
    trainer = _trainer(exp, cfg)
    trainer.run_epoch()
    model = trainer.model
    first = training.save_checkpoint(model, tmp_path / "a.bin")
    before = harness.evaluate(model, exp.test, exp.train_pairs, 5)
    other = FairSR(cfg.replace(seed=9), model.n_users, model.n_items, model.graph)
    training.restore(other, first)
    second = training.save_checkpoint(other, tmp_path / "b.bin")
    assert first.read_bytes() == second.read_bytes()
    for name in model.params:
        assert model.params[name].tobytes() == other.params[name].tobytes()
    after = harness.evaluate(other, exp.test, exp.train_pairs, 5)
    assert before.metrics == after.metrics
    np.testing.assert_array_equal(before.ranked, after.ranked)


def test_restore_rejects_other_dimension(tmp_path):
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg())
    path = training.save_checkpoint(trainer.model, tmp_path / "c.bin")
    wider = FairSR(_micro_cfg(d=12, n_h=6, n_v=6), trainer.model.n_users, trainer.model.n_items)
    with pytest.raises(CheckpointError, match="different configuration"):
        training.restore(wider, path)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_last_good_parameters(tmp_path):
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg(epochs=2))
    trainer.fit(epochs=1)
    good = {k: v.copy() for k, v in trainer.model.params.items()}
    trainer.model.params["conv_v"][...] = np.inf
    with pytest.raises(FloatingPointError):
        trainer.fit(epochs=1, rundir=tmp_path / "run")
    for name, value in good.items():
        if name != "conv_v":
            np.testing.assert_array_equal(trainer.model.params[name], value)
    assert (tmp_path / "run" / "checkpoint.bin").exists()


def test_negatives_avoid_training_items():
    exp = _experiment()
    trainer = _trainer(exp, _micro_cfg())
    users = np.repeat(np.arange(exp.data.log.n_users), 50)
    neg = trainer.negatives.sample(users, np.random.default_rng(1))
    seen = set(zip(*trainer.train_pairs))
    assert not any((u, v) in seen for u, v in zip(users.tolist(), neg.tolist()))
