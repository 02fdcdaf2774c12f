"""Top-k ranking, accuracy and fairness evaluation, baselines and sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, kernels, training
from .config import ABLATIONS, TrainConfig
from .fairness import AdoptionStats, FairnessReport, dif_at_k

log = logging.getLogger(__name__)

LENGTH_GRID = [(t, g) for t in (3, 5, 8) for g in (1, 2, 3)]
REPORT_COLUMNS = ("system", "P@10", "R@10", "N@10", "DIF@10")


def csr(rows, cols, n_rows):
    """Group ``cols`` by ``rows`` into (indptr, indices), both int64."""
    rows = np.asarray(rows, np.int64)
    cols = np.asarray(cols, np.int64)
    order = np.argsort(rows, kind="stable")
    indptr = np.zeros(n_rows + 1, np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, np.ascontiguousarray(cols[order])


def rank_topk(scores, k, exclude=None) -> np.ndarray:
    """Top-k per row by descending score, lower index first on ties.

    ``exclude`` is an optional CSR pair over rows listing columns to skip.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    n_rows, n_cols = scores.shape
    if exclude is None:
        exclude = (np.zeros(n_rows + 1, np.int64), np.zeros(0, np.int64))
    return kernels.topk_excluding(scores, int(k), *exclude)


def accuracy_metrics(ranked, targets, k) -> dict[str, float]:
    """Macro-averaged P@k, R@k and N@k with binary relevance.

    ``targets`` is a list of ground-truth collections, one per ranked row.
    IDCG is taken over min(k, |targets|) positions.
    """
    ranked = np.ascontiguousarray(np.asarray(ranked, np.int64)[:, :k])
    sizes = np.array([len(t) for t in targets], np.int64)
    if (sizes == 0).any():
        raise ValueError("every evaluation unit needs a non-empty ground truth")
    indptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    indices = np.ascontiguousarray(np.concatenate([np.asarray(t, np.int64) for t in targets]))
    hits, dcg = kernels.hits_and_dcg(ranked, indptr, indices)
    discounts = np.cumsum(1.0 / np.log2(np.arange(2, k + 2)))
    idcg = discounts[np.minimum(sizes, k) - 1]
    return {
        "P": float(np.mean(hits / k)),
        "R": float(np.mean(hits / sizes)),
        "N": float(np.mean(dcg / idcg)),
    }


@dataclass
class EvalRun:
    users: np.ndarray
    ranked: np.ndarray  # (units, k)
    targets: list
    k: int
    metrics: dict = field(default_factory=dict)


def recommend(model, samples, train_pairs, k, batch=512) -> np.ndarray:
    """Top-k lists for each window, excluding the user's training items."""
    users, inputs, _ = dataio.stack(samples)
    excl_ptr, excl_idx = csr(*train_pairs, model.n_users)
    vbar = model.catalogue_vectors()
    out = []
    for start in range(0, len(users), batch):
        u = users[start:start + batch]
        scores = model.score_all(u, inputs[start:start + batch], vbar)
        # slice the user-level CSR down to this batch's rows
        lo, hi = excl_ptr[u], excl_ptr[u + 1]
        ptr = np.concatenate([[0], np.cumsum(hi - lo)]).astype(np.int64)
        idx = np.concatenate([excl_idx[a:b] for a, b in zip(lo, hi)] or [np.zeros(0, np.int64)])
        out.append(rank_topk(scores, k, (ptr, np.ascontiguousarray(idx, dtype=np.int64))))
    return np.concatenate(out) if out else np.zeros((0, k), np.int64)


def evaluate(model, samples, train_pairs, k=10) -> EvalRun:
    ranked = recommend(model, samples, train_pairs, k)
    users, _, _ = dataio.stack(samples)
    targets = [s.targets for s in samples]
    return EvalRun(users, ranked, targets, k, accuracy_metrics(ranked, targets, k))


def popularity_baseline(train_pairs, n_items, k) -> np.ndarray:
    """The k most-interacted training items, ties by lower item index."""
    counts = np.bincount(np.asarray(train_pairs[1], np.int64), minlength=n_items).astype(np.float64)
    return rank_topk(counts[None, :], k)[0]


def evaluate_popularity(samples, train_pairs, n_items, n_users, k=10) -> EvalRun:
    """Popularity ranking with each user's training items removed."""
    counts = np.bincount(np.asarray(train_pairs[1], np.int64), minlength=n_items).astype(np.float64)
    users, _, _ = dataio.stack(samples)
    excl_ptr, excl_idx = csr(*train_pairs, n_users)
    lo, hi = excl_ptr[users], excl_ptr[users + 1]
    ptr = np.concatenate([[0], np.cumsum(hi - lo)]).astype(np.int64)
    idx = np.concatenate([excl_idx[a:b] for a, b in zip(lo, hi)] or [np.zeros(0, np.int64)])
    scores = np.broadcast_to(counts, (len(users), n_items))
    ranked = rank_topk(scores, k, (ptr, np.ascontiguousarray(idx, dtype=np.int64)))
    targets = [s.targets for s in samples]
    return EvalRun(users, ranked, targets, k, accuracy_metrics(ranked, targets, k))


def adoption_stats(data: dataio.Dataset, train_samples, attribute) -> AdoptionStats:
    """Adoption counts from training-window interactions only."""
    names = tuple(attribute)
    users, items = dataio.interacted_pairs(train_samples)
    values = data.user_attribute(names)
    return AdoptionStats.from_pairs(users, items, values, data.log.n_items, names)


def fairness_report(run: EvalRun, stats: AdoptionStats) -> FairnessReport:
    return dif_at_k(stats, run.ranked, run.targets, run.k)


# --- experiments

@dataclass
class Experiment:
    """A dataset with its window split, ready to train models on."""

    data: dataio.Dataset
    t: int
    g: int
    train: list
    val: list
    test: list

    @classmethod
    def prepare(cls, data: dataio.Dataset, t: int, g: int):
        samples = dataio.make_windows(data.log, t, g)
        train, val, test = dataio.split(samples)
        if not train or not test:
            raise ValueError(f"too few windows for t={t}, g={g}")
        return cls(data, t, g, train, val, test)

    @property
    def train_pairs(self):
        return dataio.interacted_pairs(self.train)

    def graph(self, protected):
        from .prefgraph import graph_from_dataset
        return graph_from_dataset(self.data, self.train, protected)


def train_and_evaluate(exp: Experiment, cfg: TrainConfig, graph=None, rundir=None, k=10,
                       fairness_attribute=None):
    """Train one model and return (model, result, test EvalRun, fairness report or None)."""
    from .model import FairSR

    if graph is None:
        graph = exp.graph(cfg.protected)
    model = FairSR(cfg, exp.data.log.n_users, exp.data.log.n_items, graph)
    trainer = training.Trainer(model, exp.train, graph)
    result = trainer.fit(exp.val, rundir=rundir)
    run = evaluate(model, exp.test, exp.train_pairs, k)
    report = None
    if fairness_attribute:
        report = fairness_report(run, adoption_stats(exp.data, exp.train, fairness_attribute))
    return model, result, run, report


def report_row(system, run: EvalRun, report: FairnessReport | None):
    m = run.metrics
    dif = report.mean_dif if report is not None else float("nan")
    return (system, m["P"], m["R"], m["N"], dif)


def write_report(rows, path, columns=REPORT_COLUMNS) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(c if isinstance(c, str) else f"{c:.6f}" for c in row) + "\n")
    return path


def sweep(data: dataio.Dataset, base: TrainConfig, axis: str, k=10, out_dir=None,
          fairness_attribute=None):
    """One training + evaluation per grid cell.

    ``axis="length"`` walks the (t, g) grid; ``axis="ablation"`` runs the
    full model and each ablation variant. Returns the report rows.
    """
    attribute = fairness_attribute or base.protected
    rows = []
    if axis == "length":
        for t, g in LENGTH_GRID:
            cfg = base.replace(t=t, g=g, filter_width=min(base.filter_width, t))
            exp = Experiment.prepare(data, t, g)
            _, _, run, report = train_and_evaluate(exp, cfg, k=k, fairness_attribute=attribute)
            rows.append(report_row(f"t={t},g={g}", run, report))
            log.info("length sweep t=%d g=%d: %s", t, g, run.metrics)
    elif axis == "ablation":
        exp = Experiment.prepare(data, base.t, base.g)
        graph = exp.graph(base.protected)
        for name, flags in ABLATIONS.items():
            cfg = base.replace(**flags)
            _, _, run, report = train_and_evaluate(exp, cfg, graph=graph, k=k, fairness_attribute=attribute)
            rows.append(report_row(name, run, report))
            log.info("ablation %s: %s", name, run.metrics)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}; use 'length' or 'ablation'")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_report(rows, Path(out_dir) / f"sweep_{axis}.tsv")
    return rows
