"""Command-line driver: simulate, featurize, graph, train, eval, report,
and the end-to-end pipeline.

Every stage materializes its artifacts as files so stages can be rerun
independently; every invocation prints its config fingerprint to stderr.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 internal
error.  Diagnostics go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import BankTraceError
from . import encode as enc
from . import graph as graph_mod
from . import harness, nn, sim, trace


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise UsageError(f"{self.prog}: {message}")


def _fingerprint(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _announce(args: argparse.Namespace) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config fingerprint: {_fingerprint(payload)}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Pipeline configuration

_PIPELINE_KEYS = {
    "n_customers": int,
    "split_seed": int,
    "n_h": int,
    "stride": int,
    "vocab_min_count": int,
    "graph_min_count": int,
    "lr": float,
    "max_epochs": int,
    "patience": int,
    "batch_size": int,
    "hidden": int,
    "gnn_dim": int,
    "gnn_rounds": int,
    "train_seed": int,
    "n_seeds": int,
    "max_train_windows": int,
    "max_val_windows": int,
    "max_eval_windows": int,
}


@dataclass(frozen=True)
class PipelineConfig:
    sim: sim.SimConfig = field(default_factory=sim.SimConfig)
    n_customers: int = 2000
    split_seed: int = 11
    n_h: int = 20
    stride: int = 20
    vocab_min_count: int = 1
    graph_min_count: int = 10
    lr: float = 0.01
    max_epochs: int = 5000
    patience: int = 50
    batch_size: int = 32
    hidden: int = 64
    gnn_dim: int = 16
    gnn_rounds: int = 2
    train_seed: int = 101
    n_seeds: int = 1
    max_train_windows: int = 0
    max_val_windows: int = 0
    max_eval_windows: int = 0

    def fingerprint(self, dataset_hash: str = "") -> str:
        payload = asdict(self)
        payload["dataset_hash"] = dataset_hash
        return _fingerprint(payload)


def load_pipeline_config(path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg, extras = sim.parse_config_text(fh.read(), extra_keys=_PIPELINE_KEYS)
    return PipelineConfig(sim=cfg, **extras)


# ---------------------------------------------------------------------------
# Shared stage helpers

def _load_corpus(traces_path, profiles_path):
    trajectories = sim.read_trace_file(traces_path)
    profiles = sim.read_profile_file(profiles_path)
    return trajectories, profiles


def _prepare_tables(trajectories, profiles, split, vocab, g, n_h, stride):
    pairs = harness.featurize(trajectories)
    tables = {}
    for name, ids in (("train", split.train), ("validation", split.validation),
                      ("test", split.test)):
        tables[name] = harness.build_window_table(
            trajectories, profiles, pairs, ids, vocab, g, n_h=n_h, stride=stride)
    return pairs, tables


def _build_vocab_and_graph(trajectories, split, vocab_min_count, graph_min_count,
                           need_graph: bool):
    pairs = harness.featurize(trajectories)
    train_pairs = [p for cid in split.train for p in pairs[cid]]
    vocab = enc.build_vocab(train_pairs, min_count=vocab_min_count)
    g = None
    if need_graph:
        g = graph_mod.build_state_graph(
            (pairs[cid] for cid in split.train), min_count=graph_min_count)
    return pairs, vocab, g


# ---------------------------------------------------------------------------
# Subcommands

def cmd_simulate(args) -> int:
    cfg = sim.load_config(args.config) if args.config else sim.SimConfig()
    if args.seed is not None:
        cfg = sim.SimConfig(**{**_simconfig_kwargs(cfg), "seed": args.seed})
    ds = sim.simulate_dataset(args.customers, cfg, trace_path=args.out_traces,
                              profile_path=args.out_profiles, jobs=args.jobs)
    counts = ds.counts()
    print(f"wrote {args.out_traces} and {args.out_profiles}: "
          f"{counts['customers']} customers, {counts['sessions']} sessions, "
          f"{counts['events']} events", file=sys.stderr)
    return 0


def _simconfig_kwargs(cfg: sim.SimConfig) -> dict:
    return {
        "channel_probs": cfg.channel_probs, "failure_probs": cfg.failure_probs,
        "goal_probs": cfg.goal_probs, "profile_probs": cfg.profile_probs,
        "session_count_range": cfg.session_count_range,
        "events_per_customer_target": cfg.events_per_customer_target,
        "base_tick_seconds": cfg.base_tick_seconds,
        "extra_goal_prob": cfg.extra_goal_prob, "wander_prob": cfg.wander_prob,
        "seed": cfg.seed,
    }


def cmd_featurize(args) -> int:
    trajectories = sim.read_trace_file(args.traces)
    pairs = harness.featurize(trajectories)
    trace.write_pairs_file(args.out, pairs)
    n = sum(len(v) for v in pairs.values())
    print(f"wrote {args.out}: {n} state-action pairs", file=sys.stderr)
    return 0


def cmd_split(args) -> int:
    trajectories = sim.read_trace_file(args.traces)
    split = harness.split_dataset(sorted(trajectories), seed=args.seed,
                                  fractions=tuple(args.fractions))
    harness.save_split(args.out, split)
    print(f"wrote {args.out}: {len(split.train)}/{len(split.validation)}/"
          f"{len(split.test)} customers", file=sys.stderr)
    return 0


def cmd_graph(args) -> int:
    trajectories = sim.read_trace_file(args.traces)
    split = harness.load_split(args.split)
    pairs = harness.featurize(trajectories)
    g = graph_mod.build_state_graph((pairs[cid] for cid in split.train),
                                    min_count=args.min_count)
    graph_mod.save_graph(args.out, g)
    stats = graph_mod.graph_stats(g)
    print(f"wrote {args.out}: {stats.node_count} nodes, {stats.edge_count} edges",
          file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    trajectories, profiles = _load_corpus(args.traces, args.profiles)
    split = harness.load_split(args.split)
    need_graph = args.mode == "graph"
    _, vocab, g = _build_vocab_and_graph(trajectories, split,
                                         args.vocab_min_count,
                                         args.graph_min_count, need_graph)
    if args.graph and need_graph:
        g = graph_mod.load_graph(args.graph)
    _, tables = _prepare_tables(trajectories, profiles, split, vocab, g,
                                args.nh, args.stride)
    spec = nn.TaskSpec(task=args.task, n_h=args.nh, n_f=args.nf)
    cfg = harness.TrainConfig(
        task=spec, mode=args.mode, lr=args.lr, max_epochs=args.max_epochs,
        patience=args.patience, batch_size=args.batch_size, seed=args.seed,
        hidden=args.hidden, gnn_dim=args.gnn_dim, gnn_rounds=args.gnn_rounds,
        max_train_windows=args.max_train_windows,
        max_val_windows=args.max_val_windows,
    )
    dataset_hash = sim.file_sha256(args.traces)
    fp = cfg.fingerprint(dataset_hash)
    print(f"config fingerprint: {fp}", file=sys.stderr)
    params, records = harness.train(tables["train"], tables["validation"], cfg,
                                    vocab, g)
    nn.save_checkpoint(args.out_checkpoint, params, vocab, g,
                       meta={"fingerprint": fp, "task": args.task,
                             "mode": args.mode, "seed": args.seed,
                             "n_h": args.nh, "n_f": args.nf})
    harness.write_loss_csv(args.out_loss, records, args.task)
    best = min(records, key=lambda r: r.val_loss)
    print(f"trained {len(records)} epochs; best val loss {best.val_loss:.6f} "
          f"at epoch {best.epoch}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params, vocab, g, meta = nn.load_checkpoint(args.checkpoint)
    trajectories, profiles = _load_corpus(args.traces, args.profiles)
    split = harness.load_split(args.split)
    ids = getattr(split, args.partition)
    pairs = harness.featurize(trajectories)
    table = harness.build_window_table(trajectories, profiles, pairs, ids, vocab,
                                       g, n_h=int(meta.get("n_h", 20)),
                                       stride=args.stride)
    fp = meta.get("fingerprint", "")
    task = params.dims.task
    if task == "goal":
        report = harness.evaluate_goal(params, table, g, fingerprint=fp,
                                       seed=int(meta.get("seed", 0)))
    elif task == "type":
        report = harness.evaluate_type(params, table, g,
                                       majority_per_customer=args.majority,
                                       fingerprint=fp,
                                       seed=int(meta.get("seed", 0)))
    else:
        horizons = tuple(int(h) for h in args.horizons.split(","))
        report = harness.evaluate_trajectory(params, table, vocab, g,
                                             horizons=horizons,
                                             max_windows=args.max_windows,
                                             fingerprint=fp,
                                             seed=int(meta.get("seed", 0)),
                                             jobs=args.jobs)
    text = harness.render_report(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_report(args) -> int:
    reports = [_parse_metrics_file(p) for p in args.metrics]
    text = render_consolidated_table(reports)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    out = pipeline_all(cfg, Path(args.out_dir), jobs=args.jobs)
    print(f"wrote consolidated report {out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Consolidated reporting

def _parse_metrics_file(path) -> harness.MetricsReport:
    fields = {"accuracies": {}, "sample_counts": {}}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(": ")
            if key == "task":
                fields["task"] = value
            elif key == "mode":
                fields["mode"] = value
            elif key == "seed":
                fields["seed"] = int(value)
            elif key == "config_fingerprint":
                fields["config_fingerprint"] = value
            elif key.startswith("samples "):
                fields["sample_counts"][key[len("samples "):]] = int(value)
            elif key.startswith("accuracy "):
                fields["accuracies"][key[len("accuracy "):]] = float(value)
    return harness.MetricsReport(**fields)


def render_consolidated_table(reports, header_lines=()) -> str:
    """One table per task comparing modes (and seeds) side by side."""
    lines = ["# banktrace consolidated report"]
    lines.extend(header_lines)
    for task in ("goal", "type", "trajectory"):
        rows = [r for r in reports if r.task == task]
        if not rows:
            continue
        heads = sorted({name for r in rows for name in r.accuracies})
        lines.append("")
        lines.append(f"[{task}]")
        lines.append("mode seed " + " ".join(heads))
        for mode in ("bow", "graph"):
            mode_rows = sorted((r for r in rows if r.mode == mode),
                               key=lambda r: r.seed)
            if not mode_rows:
                continue
            for r in mode_rows:
                accs = " ".join(f"{r.accuracies[h]:.4f}" for h in heads)
                lines.append(f"{mode} {r.seed} {accs}")
            means = " ".join(
                f"{np.mean([r.accuracies[h] for r in mode_rows]):.4f}"
                for h in heads)
            lines.append(f"{mode} mean {means}")
    return "\n".join(lines) + "\n"


def pipeline_all(cfg: PipelineConfig, out_dir: Path, jobs: int = 1) -> Path:
    """Run simulate -> split -> featurize -> graph -> train -> eval -> report.

    Deterministic: rerunning with the same config reproduces every artifact
    byte for byte.  Aborts on the first failing stage.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = "simulate"
    try:
        traces_path = out_dir / "traces.tsv"
        profiles_path = out_dir / "profiles.tsv"
        ds = sim.simulate_dataset(cfg.n_customers, cfg.sim,
                                  trace_path=traces_path,
                                  profile_path=profiles_path, jobs=jobs)
        dataset_hash = sim.file_sha256(traces_path)

        stage = "split"
        split = harness.split_dataset(sorted(ds.trajectories), seed=cfg.split_seed)
        harness.save_split(out_dir / "split.tsv", split)

        stage = "featurize"
        pairs = harness.featurize(ds.trajectories)
        trace.write_pairs_file(out_dir / "pairs.tsv", pairs)
        train_pairs = [p for cid in split.train for p in pairs[cid]]
        vocab = enc.build_vocab(train_pairs, min_count=cfg.vocab_min_count)

        stage = "graph"
        g = graph_mod.build_state_graph((pairs[cid] for cid in split.train),
                                        min_count=cfg.graph_min_count)
        graph_mod.save_graph(out_dir / "graph.txt", g)

        stage = "windows"
        tables = {}
        for name, ids in (("train", split.train),
                          ("validation", split.validation),
                          ("test", split.test)):
            tables[name] = harness.build_window_table(
                ds.trajectories, ds.profiles, pairs, ids, vocab, g,
                n_h=cfg.n_h, stride=cfg.stride)
        n_windows = sum(len(t) for t in tables.values())

        reports = []
        loss_files = []
        for task in ("goal", "type", "trajectory"):
            seeds = ([cfg.train_seed] if task == "type" else
                     [cfg.train_seed + i for i in range(cfg.n_seeds)])
            for mode in ("bow", "graph"):
                for seed in seeds:
                    stage = f"train {task}/{mode}/seed{seed}"
                    spec = nn.TaskSpec(task=task, n_h=cfg.n_h)
                    tconf = harness.TrainConfig(
                        task=spec, mode=mode, lr=cfg.lr,
                        max_epochs=cfg.max_epochs, patience=cfg.patience,
                        batch_size=cfg.batch_size, seed=seed,
                        hidden=cfg.hidden, gnn_dim=cfg.gnn_dim,
                        gnn_rounds=cfg.gnn_rounds,
                        max_train_windows=cfg.max_train_windows,
                        max_val_windows=cfg.max_val_windows,
                    )
                    fp = tconf.fingerprint(dataset_hash)
                    params, records = harness.train(
                        tables["train"], tables["validation"], tconf, vocab,
                        g if mode == "graph" else None)
                    tag = f"{task}_{mode}_{seed}"
                    nn.save_checkpoint(out_dir / f"ckpt_{tag}.bin", params, vocab,
                                       g if mode == "graph" else None,
                                       meta={"fingerprint": fp, "task": task,
                                             "mode": mode, "seed": seed,
                                             "n_h": cfg.n_h})
                    harness.write_loss_csv(out_dir / f"loss_{tag}.csv", records,
                                           task)
                    loss_files.append(f"loss_{tag}.csv")

                    stage = f"eval {task}/{mode}/seed{seed}"
                    gg = g if mode == "graph" else None
                    if task == "goal":
                        rep = harness.evaluate_goal(params, tables["test"], gg,
                                                    fingerprint=fp, seed=seed)
                    elif task == "type":
                        rep = harness.evaluate_type(params, tables["test"], gg,
                                                    fingerprint=fp, seed=seed)
                    else:
                        rep = harness.evaluate_trajectory(
                            params, tables["test"], vocab, gg,
                            horizons=(1, 5, 15),
                            max_windows=cfg.max_eval_windows,
                            fingerprint=fp, seed=seed, jobs=jobs)
                    with open(out_dir / f"metrics_{tag}.txt", "w",
                              encoding="utf-8", newline="\n") as fh:
                        fh.write(harness.render_report(rep))
                    reports.append(rep)

        stage = "report"
        counts = ds.counts()
        header = [
            f"config_fingerprint: {cfg.fingerprint(dataset_hash)}",
            f"dataset_hash: {dataset_hash}",
            f"counts: customers={counts['customers']} "
            f"sessions={counts['sessions']} events={counts['events']} "
            f"windows={n_windows}",
            f"vocab_size: {len(vocab)}",
            f"graph_nodes: {len(g)} graph_edges: {len(g.edges)}",
            "loss_curves: " + " ".join(loss_files),
        ]
        report_path = out_dir / "report.txt"
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_consolidated_table(reports, header))
        return report_path
    except Exception as e:
        raise BankTraceError(f"pipeline failed at stage {stage!r}: {e}") from e


# ---------------------------------------------------------------------------
# Argument parsing and dispatch

def build_parser() -> _Parser:
    parser = _Parser(prog="banktrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace dataset")
    p.add_argument("--customers", type=int, required=True)
    p.add_argument("--config", help="simulator config file (key = value lines)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-traces", required=True)
    p.add_argument("--out-profiles", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="export state-action pairs")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("split", help="write a customer-level split file")
    p.add_argument("--traces", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", type=float, nargs=3, default=[0.70, 0.15, 0.15])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("graph", help="build the train-split state graph")
    p.add_argument("--traces", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--min-count", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train one task/mode model")
    p.add_argument("--traces", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--task", choices=nn.TASKS, required=True)
    p.add_argument("--mode", choices=nn.MODES, default="bow")
    p.add_argument("--graph", help="load a prebuilt graph file")
    p.add_argument("--nh", type=int, default=20)
    p.add_argument("--nf", type=int, default=1)
    p.add_argument("--stride", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=5000)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--gnn-dim", type=int, default=16)
    p.add_argument("--gnn-rounds", type=int, default=2)
    p.add_argument("--vocab-min-count", type=int, default=1)
    p.add_argument("--graph-min-count", type=int, default=10)
    p.add_argument("--max-train-windows", type=int, default=0)
    p.add_argument("--max-val-windows", type=int, default=0)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-loss", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traces", required=True)
    p.add_argument("--profiles", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=("train", "validation", "test"),
                   default="test")
    p.add_argument("--stride", type=int, default=20)
    p.add_argument("--horizons", default="1,5,15")
    p.add_argument("--max-windows", type=int, default=0)
    p.add_argument("--majority", action="store_true",
                   help="aggregate type predictions per customer")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="consolidate metric files into one table")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="full reproduction run from one config")
    p.add_argument("--config", help="pipeline config file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pipeline)
    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _announce(args)
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except (BankTraceError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal errors map to 3
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
