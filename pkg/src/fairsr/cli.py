"""Command-line entry point: ``fairsr <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, harness, prefgraph, synthetic, training
from .config import ABLATIONS, TrainConfig
from .fairness import cdf_series
from .model import FairSR

log = logging.getLogger("fairsr")


def _csv(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


def system_name(cfg: TrainConfig) -> str:
    for name, flags in reversed(ABLATIONS.items()):
        if flags and all(getattr(cfg, k) == v for k, v in flags.items()):
            return name
    return "FairSR"


def cmd_convert_movielens(args):
    out = dataio.convert_movielens(args.src, args.out)
    print(f"wrote {out}")


def cmd_ingest(args):
    data = dataio.ingest(args.interactions, args.attributes, args.properties, args.threshold,
                         args.min_interactions, _csv(args.required) if args.required else None)
    out = dataio.write_snapshot(data, args.out)
    print(f"{data.log.n_users} users, {data.log.n_items} items, {len(data.log)} interactions -> {out}")


def cmd_synthetic(args):
    make = synthetic.toy_pattern if args.kind == "toy" else synthetic.biased_catalogue
    data = make(n_users=args.users, n_items=args.items, seed=args.seed)
    out = dataio.write_snapshot(data, args.out)
    print(f"{data.log.n_users} users, {data.log.n_items} items -> {out}")


def cmd_build_graph(args):
    data = dataio.load_snapshot(args.data)
    exp = harness.Experiment.prepare(data, args.t, args.g)
    graph = exp.graph(_csv(args.protected))
    path = prefgraph.write_graph(graph, args.out)
    print(f"{len(graph.triplets)} triplets over {graph.n_items} items -> {path}")


def _load_config(path, **overrides) -> TrainConfig:
    cfg = TrainConfig.load(path) if path else TrainConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def cmd_train(args):
    cfg = _load_config(args.config, data_dir=str(Path(args.data).resolve()),
                       graph_path=str(Path(args.graph).resolve()) if args.graph else None,
                       epochs=args.epochs, seed=args.seed)
    data = dataio.load_snapshot(cfg.data_dir)
    exp = harness.Experiment.prepare(data, cfg.t, cfg.g)
    graph = prefgraph.read_graph(cfg.graph_path) if cfg.graph_path else exp.graph(cfg.protected)
    model = FairSR(cfg, data.log.n_users, data.log.n_items, graph)
    trainer = training.Trainer(model, exp.train, graph)

    def progress(epoch, ndcg):
        log.info("epoch %d  val N@%d = %.4f", epoch, cfg.eval_k, ndcg)

    result = trainer.fit(exp.val, rundir=args.out, progress=progress)
    print(f"trained {trainer.epoch} epochs (best {result.best_epoch}) -> {args.out}")


def _load_run(rundir):
    rundir = Path(rundir)
    cfg = TrainConfig.load(rundir / "config.txt")
    data = dataio.load_snapshot(cfg.data_dir)
    exp = harness.Experiment.prepare(data, cfg.t, cfg.g)
    graph = prefgraph.read_graph(cfg.graph_path) if cfg.graph_path else exp.graph(cfg.protected)
    model = FairSR(cfg, data.log.n_users, data.log.n_items, graph)
    training.restore(model, rundir / "checkpoint.bin")
    return cfg, exp, model


def _systems(cfg, exp, model, k):
    """(name, EvalRun) for the trained model and the popularity baseline."""
    run = harness.evaluate(model, exp.test, exp.train_pairs, k)
    pop = harness.evaluate_popularity(exp.test, exp.train_pairs, model.n_items, model.n_users, k)
    return [(system_name(cfg), run), ("Popularity", pop)]


def cmd_eval(args):
    cfg, exp, model = _load_run(args.run)
    stats = harness.adoption_stats(exp.data, exp.train, cfg.protected)
    rows = []
    for name, run in _systems(cfg, exp, model, args.k):
        rows.append(harness.report_row(name, run, harness.fairness_report(run, stats)))
    columns = ("system", f"P@{args.k}", f"R@{args.k}", f"N@{args.k}", f"DIF@{args.k}")
    out = harness.write_report(rows, args.out, columns)
    print(out.read_text(), end="")


def cmd_fairness_report(args):
    cfg, exp, model = _load_run(args.run)
    attribute = _csv(args.attribute) if args.attribute else cfg.protected
    stats = harness.adoption_stats(exp.data, exp.train, attribute)
    out_dir = Path(args.out or args.run)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, run in _systems(cfg, exp, model, args.k):
        report = harness.fairness_report(run, stats)
        slug = name.replace("&", "and").lstrip("-") or name
        with open(out_dir / f"fairness_{slug}.tsv", "w", encoding="utf-8") as fh:
            fh.write("user\twindow\tIF_recommended\tIF_ground_truth\tDIF\n")
            for sample, a, b in zip(exp.test, report.if_recommended, report.if_ground_truth):
                user_id = exp.data.log.user_ids[sample.user]
                fh.write(f"{user_id}\t{sample.window_id}\t{a:.6f}\t{b:.6f}\t{a - b:.6f}\n")
        for which in ("recommended", "ground_truth"):
            x, p = cdf_series(report.if_recommended if which == "recommended" else report.if_ground_truth)
            np.savetxt(out_dir / f"cdf_{slug}_{which}.tsv", np.column_stack([x, p]), fmt="%.6f",
                       delimiter="\t", header="if_value\tcumulative_probability", comments="")
        print(f"{name}: mean DIF@{args.k} = {report.mean_dif:.4f}")


def cmd_sweep(args):
    cfg = _load_config(args.config, epochs=args.epochs, seed=args.seed)
    data = dataio.load_snapshot(args.data)
    rows = harness.sweep(data, cfg, args.axis, k=args.k, out_dir=args.out)
    for row in rows:
        print("\t".join(c if isinstance(c, str) else f"{c:.4f}" for c in row))


def build_parser():
    parser = argparse.ArgumentParser(prog="fairsr", description="Fairness-aware sequential recommendation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert-movielens", help="turn MovieLens-1M .dat files into TSV inputs")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_movielens)

    p = sub.add_parser("ingest", help="build a dense-indexed dataset snapshot")
    p.add_argument("--interactions", required=True)
    p.add_argument("--attributes", required=True)
    p.add_argument("--properties")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--min-interactions", type=int, default=4)
    p.add_argument("--required", help="attributes a user must have, comma separated")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synthetic", help="write a generated dataset snapshot")
    p.add_argument("--kind", choices=("toy", "biased"), default="toy")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("build-graph", help="build the preference graph from training windows")
    p.add_argument("--data", required=True)
    p.add_argument("--protected", default="gender,age")
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--g", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train a model into a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--graph")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and DIF report for a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default="report.tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fairness-report", help="per-window IF/DIF tables and CDF files")
    p.add_argument("--run", required=True)
    p.add_argument("--attribute")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fairness_report)

    p = sub.add_parser("sweep", help="sequence-length grid or ablation table")
    p.add_argument("--axis", choices=("length", "ablation"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"fairsr: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
