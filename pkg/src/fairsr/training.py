"""Joint training: BPR for recommendation, triplet loss for the graph task, Adam updates."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, harness
from .config import TrainConfig
from .fpge import fpge_loss
from .model import FairSR
from .numerics import CompGraph, Node, adam_step, init_adam
from .prefgraph import PreferenceGraph, TripletSampler

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "fairsr-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def bpr_loss(g: CompGraph, pos_scores: Node, neg_scores: Node) -> Node:
    """Mean of -log sigmoid(pos - neg)."""
    n = pos_scores.shape[0]
    if n == 0:
        raise ValueError("BPR loss needs at least one pair")
    return g.scale(g.sum(g.log_sigmoid(g.sub(pos_scores, neg_scores))), -1.0 / n)


def training_rows(samples):
    """One row per (window, target): arrays (users, windows, positives)."""
    users, inputs, targets = dataio.stack(samples)
    g = targets.shape[1] if targets.ndim == 2 else 0
    return np.repeat(users, g), np.repeat(inputs, g, axis=0), targets.reshape(-1)


class NegativeSampler:
    """Uniform items the user never interacted with in training."""

    def __init__(self, users, items, n_items: int):
        self.n_items = n_items
        self.keys = np.unique(np.asarray(users, np.int64) * n_items + np.asarray(items, np.int64))

    def seen(self, users, items):
        keys = users * self.n_items + items
        idx = np.searchsorted(self.keys, keys)
        idx = np.minimum(idx, len(self.keys) - 1)
        return self.keys[idx] == keys if len(self.keys) else np.zeros(len(keys), bool)

    def sample(self, users, rng, max_rounds=1000):
        users = np.asarray(users, np.int64)
        out = rng.integers(0, self.n_items, size=len(users))
        bad = self.seen(users, out)
        rounds = 0
        while bad.any():
            rounds += 1
            if rounds > max_rounds:
                raise RuntimeError("could not find unseen negatives; a user may have consumed every item")
            out[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
            bad[bad] = self.seen(users[bad], out[bad])
        return out


@dataclass
class TraceRow:
    step: int
    epoch: int
    phase: str
    loss: float


@dataclass
class TrainResult:
    trace: list[TraceRow]
    val_ndcg: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def write_trace(trace, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tepoch\tphase\tloss\n")
        for row in trace:
            fh.write(f"{row.step}\t{row.epoch}\t{row.phase}\t{row.loss!r}\n")
    return path


class Trainer:
    """Alternates ``epsilon`` recommendation batches with one graph batch.

    One outer iteration is epsilon SR mini-batches followed by a single
    graph mini-batch, all sharing one Adam state.
    """

    def __init__(self, model: FairSR, train_samples, graph: PreferenceGraph | None = None):
        self.model = model
        self.cfg = cfg = model.cfg
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.rows = training_rows(train_samples)
        tu, ti = dataio.interacted_pairs(train_samples)
        self.negatives = NegativeSampler(tu, ti, model.n_items)
        self.train_pairs = (tu, ti)
        self.graph = graph
        self.triplets = None
        if cfg.use_fpge and graph is not None and len(graph.triplets):
            self.triplets = TripletSampler(graph, cfg.sampling_mode)
        self.adam = init_adam(model.params)
        self.trace: list[TraceRow] = []
        self.step = 0
        self.epoch = 0

    # -- losses on explicit batches (also used by tests)

    def sr_objective(self, users, windows, pos, neg):
        g, P = self.model.new_graph()
        pos_s, neg_s = self.model.sr_pair_scores(g, P, users, windows, pos, neg)
        data = bpr_loss(g, pos_s, neg_s)
        return g, data, g.add(data, self.model.regularizer(g, P))

    def fpge_objective(self, pos, neg):
        g, P = self.model.new_graph()
        b_pos, b_neg = self.model.triplet_scores(g, P, pos, neg)
        data = fpge_loss(g, b_pos, b_neg, self.cfg.lambda1)
        return g, data, g.add(data, self.model.regularizer(g, P))

    def joint_objective(self, sr_batch, triplet_batch):
        """SR loss + graph loss + regularizer on one tape, for inspection.

        Returns ``(graph, {"sr", "fpge", "reg", "total"})``.
        """
        g, P = self.model.new_graph()
        pos_s, neg_s = self.model.sr_pair_scores(g, P, *sr_batch)
        terms = {"sr": bpr_loss(g, pos_s, neg_s)}
        b_pos, b_neg = self.model.triplet_scores(g, P, *triplet_batch)
        terms["fpge"] = fpge_loss(g, b_pos, b_neg, self.cfg.lambda1)
        terms["reg"] = self.model.regularizer(g, P)
        terms["total"] = g.add(g.add(terms["sr"], terms["fpge"]), terms["reg"])
        return g, terms

    def _apply(self, g, data, total, phase):
        value = float(total.value)
        if not math.isfinite(value):
            raise FloatingPointError(f"{phase} loss became {value} at step {self.step + 1}")
        grads = g.backward(total)
        adam_step(self.model.params, grads, self.adam, self.cfg.lr)
        self.step += 1
        self.trace.append(TraceRow(self.step, self.epoch, phase, value))
        return value

    def sr_step(self, users, windows, pos, neg=None):
        if neg is None:
            neg = self.negatives.sample(users, self.rng)
        return self._apply(*self.sr_objective(users, windows, pos, neg), "sr")

    def fpge_step(self):
        if self.triplets is None or len(self.triplets.heads) == 0:
            return None
        pos, neg = self.triplets.batch(self.cfg.fpge_batch_size, self.rng)
        if len(pos) == 0:
            return None
        return self._apply(*self.fpge_objective(pos, neg), "fpge")

    def joint_step(self, sr_batches):
        """Run up to epsilon SR batches from the iterator, then one graph batch.

        Returns the number of SR batches consumed.
        """
        used = 0
        for users, windows, pos in sr_batches:
            self.sr_step(users, windows, pos)
            used += 1
            if used == self.cfg.epsilon:
                break
        if used and self.cfg.use_fpge:
            self.fpge_step()
        return used

    def epoch_batches(self):
        users, windows, pos = self.rows
        order = self.rng.permutation(len(users))
        size = self.cfg.batch_size
        for start in range(0, len(order), size):
            idx = order[start:start + size]
            yield users[idx], windows[idx], pos[idx]

    def run_epoch(self):
        self.epoch += 1
        batches = self.epoch_batches()
        while self.joint_step(batches):
            pass

    def fit(self, val_samples=None, epochs=None, rundir=None, progress=None) -> TrainResult:
        """Train with early stopping on validation NDCG@k when ``val_samples`` is given."""
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        if rundir is not None:
            Path(rundir).mkdir(parents=True, exist_ok=True)
        result = TrainResult(self.trace)
        best, best_params, waited = -np.inf, None, 0
        last_good = _copy(self.model.params)
        for _ in range(epochs):
            try:
                self.run_epoch()
            except FloatingPointError:
                self.model.params.update(last_good)
                if rundir is not None:
                    save_checkpoint(self.model, Path(rundir) / "checkpoint.bin")
                raise
            last_good = _copy(self.model.params)
            if val_samples:
                ndcg = harness.evaluate(self.model, val_samples, self.train_pairs, cfg.eval_k).metrics["N"]
                result.val_ndcg.append(ndcg)
                if ndcg > best:
                    best, best_params, waited = ndcg, _copy(self.model.params), 0
                    result.best_epoch = self.epoch
                else:
                    waited += 1
                if progress:
                    progress(self.epoch, ndcg)
                if waited >= cfg.patience:
                    result.stopped_early = True
                    break
        if self.triplets is not None and self.triplets.skipped:
            log.warning("dropped %d sampled positive triplet(s) whose tail family had no "
                        "unconnected tail left", self.triplets.skipped)
        if best_params is not None:
            self.model.params.update(best_params)
        if rundir is not None:
            rundir = Path(rundir)
            rundir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(self.model, rundir / "checkpoint.bin")
            write_trace(self.trace, rundir / "loss_trace.tsv")
            cfg.save(rundir / "config.txt")
        return result


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


# --- checkpoints

def checkpoint_bytes(params: dict[str, np.ndarray], cfg: TrainConfig) -> bytes:
    names = sorted(params)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg.shape_hash(),
        "tensors": [[n, params[n].dtype.str, list(params[n].shape)] for n in names],
    }
    body = b"".join(np.ascontiguousarray(params[n]).tobytes() for n in names)
    return json.dumps(header, sort_keys=True).encode() + b"\n" + body


def save_checkpoint(model: FairSR, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model.params, model.cfg))
    return path


def read_checkpoint(path, cfg: TrainConfig) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    try:
        header = json.loads(head)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint header") from exc
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format")
    if header["config_hash"] != cfg.shape_hash():
        raise CheckpointError(
            f"{path}: checkpoint was written for a different configuration "
            f"(hash {header['config_hash']} != {cfg.shape_hash()})"
        )
    params, offset = {}, 0
    for name, dtype, shape in header["tensors"]:
        dt = np.dtype(dtype)
        n = int(np.prod(shape)) * dt.itemsize
        if offset + n > len(body):
            raise CheckpointError(f"{path}: truncated at tensor {name!r}")
        params[name] = np.frombuffer(body[offset:offset + n], dtype=dt).reshape(shape).copy()
        offset += n
    if offset != len(body):
        raise CheckpointError(f"{path}: {len(body) - offset} trailing bytes")
    return params


def restore(model: FairSR, path) -> FairSR:
    params = read_checkpoint(path, model.cfg)
    if set(params) != set(model.params):
        raise CheckpointError("checkpoint tensors do not match the model")
    for name, value in params.items():
        if value.shape != model.params[name].shape:
            raise CheckpointError(f"tensor {name!r} has shape {value.shape}, model expects "
                                  f"{model.params[name].shape}")
        model.params[name] = value
    return model
