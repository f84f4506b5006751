"""Dataset splitting, window preparation, training with early stopping,
and evaluation of the goal / type / trajectory tasks.

The split is always by customer.  Vocabulary and state graph are built
from the training partition only; encoding validation or test data can
never change them (unknown tokens fall into the OOV slot, pruned states
simply vanish from annotations).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Iterable, Sequence

import numpy as np

from .errors import BadFractions, ConfigError, EmptyData
from . import encode as enc
from . import nn, trace
from .encode import Vocab
from .graph import StateGraph
from .nn import ModelDims, ModelParams, TaskSpec
from .sim import (
    CustomerProfile,
    DIGITAL_BEHAVIORS,
    FAIL_BEHAVIORS,
    INCOMES,
    Trajectory,
)

MAX_HORIZON = 15

# Deterministic stream used to subsample windows when training caps are set,
# kept apart from the model seed so varying the seed varies only the model.
_SUBSAMPLE_SEED = 1729


@dataclass(frozen=True)
class Split:
    train: tuple
    validation: tuple
    test: tuple
    fractions: tuple = (0.70, 0.15, 0.15)
    seed: int = 0


def split_dataset(customer_ids: Iterable[int],
                  fractions: Sequence[float] = (0.70, 0.15, 0.15),
                  seed: int = 0) -> Split:
    """Partition customers by a seeded shuffle; deterministic and exhaustive."""
    if len(fractions) != 3:
        raise BadFractions("expected three fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions sum to {sum(fractions)}, not 1")
    ids = sorted(customer_ids)
    if not ids:
        raise EmptyData("no customers to split")
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return Split(
        train=tuple(sorted(shuffled[:n_train])),
        validation=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val:])),
        fractions=tuple(fractions),
        seed=seed,
    )


def save_split(path, split: Split) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# fractions {split.fractions[0]} {split.fractions[1]} "
                 f"{split.fractions[2]} seed {split.seed}\n")
        for name, ids in (("train", split.train), ("validation", split.validation),
                          ("test", split.test)):
            for cid in ids:
                fh.write(f"{cid}\t{name}\n")


def load_split(path) -> Split:
    parts = {"train": [], "validation": [], "test": []}
    fractions, seed = (0.70, 0.15, 0.15), 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                bits = line.split()
                fractions = (float(bits[2]), float(bits[3]), float(bits[4]))
                seed = int(bits[6])
                continue
            if not line:
                continue
            cid, name = line.split("\t")
            parts[name].append(int(cid))
    return Split(train=tuple(parts["train"]), validation=tuple(parts["validation"]),
                 test=tuple(parts["test"]), fractions=fractions, seed=seed)


# ---------------------------------------------------------------------------
# Window tables: compact per-window arrays shared by all tasks

@dataclass
class WindowTable:
    """Stacked history windows with every task's labels."""

    tokens: np.ndarray        # (M, n_H) vocab indices
    nodes: np.ndarray         # (M, n_H) graph node indices, -1 when pruned
    info: np.ndarray          # (M, n_H) info action taken at step
    mod: np.ndarray           # (M, n_H) modification taken at step
    goal: np.ndarray          # (M, 2) check/change bits of the final session
    ctype: np.ndarray         # (M, 3) income / fail / digital indices
    next_token: np.ndarray    # (M,) next-token vocab index, -1 at trajectory end
    continuations: list       # per row: tuple of up to MAX_HORIZON token strings
    final_states: list        # per row: interface state after the final pair
    customer: np.ndarray      # (M,)
    n_h: int

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def subset(self, idx: np.ndarray) -> "WindowTable":
        idx = np.asarray(idx)
        return WindowTable(
            tokens=self.tokens[idx], nodes=self.nodes[idx], info=self.info[idx],
            mod=self.mod[idx], goal=self.goal[idx], ctype=self.ctype[idx],
            next_token=self.next_token[idx],
            continuations=[self.continuations[int(i)] for i in idx],
            final_states=[self.final_states[int(i)] for i in idx],
            customer=self.customer[idx], n_h=self.n_h,
        )


def featurize(trajectories: dict[int, Trajectory]) -> dict[int, list]:
    return {cid: trace.trajectory_to_pairs(trajectories[cid].events)
            for cid in sorted(trajectories)}


def type_label(profile: CustomerProfile) -> tuple[int, int, int]:
    return (INCOMES.index(profile.income),
            FAIL_BEHAVIORS.index(profile.fail_behavior),
            DIGITAL_BEHAVIORS.index(profile.digital_behavior))


def build_window_table(trajectories: dict[int, Trajectory],
                       profiles: dict[int, CustomerProfile],
                       pairs_by_cid: dict[int, list],
                       customer_ids: Sequence[int],
                       vocab: Vocab, g: StateGraph | None,
                       n_h: int = 20, stride: int = 20) -> WindowTable:
    rows_tok, rows_node, rows_info, rows_mod = [], [], [], []
    goals, ctypes, nexts, conts, finals, cids = [], [], [], [], [], []
    for cid in sorted(customer_ids):
        pairs = pairs_by_cid[cid]
        traj = trajectories[cid]
        label3 = type_label(profiles[cid])
        for start in range(0, len(pairs) - n_h + 1, stride):
            win = pairs[start:start + n_h]
            cont = pairs[start + n_h:]
            rows_tok.append([vocab.index_of(enc.token_of(p)) for p in win])
            rows_node.append([g.node_of(p.state) if g is not None else -1
                              for p in win])
            rows_info.append([p.action.kind == trace.INFO for p in win])
            rows_mod.append([p.action.kind == trace.MODIFICATION for p in win])
            sid = traj.session_ids[start + n_h - 1]
            gl = traj.goals[sid]
            goals.append((int(gl.check_info), int(gl.change_info)))
            ctypes.append(label3)
            if cont:
                nexts.append(vocab.index_of(enc.token_of(cont[0])))
                finals.append(cont[0].state)
            else:
                nexts.append(-1)
                last = win[-1]
                finals.append(trace.apply_action_lenient(last.state, last.channel,
                                                         last.action))
            conts.append(tuple(enc.token_of(p) for p in cont[:MAX_HORIZON]))
            cids.append(cid)
    if not rows_tok:
        raise EmptyData("no windows produced; trajectories shorter than n_h?")
    return WindowTable(
        tokens=np.array(rows_tok, dtype=np.int64),
        nodes=np.array(rows_node, dtype=np.int64),
        info=np.array(rows_info, dtype=bool),
        mod=np.array(rows_mod, dtype=bool),
        goal=np.array(goals, dtype=np.int64),
        ctype=np.array(ctypes, dtype=np.int64),
        next_token=np.array(nexts, dtype=np.int64),
        continuations=conts,
        final_states=finals,
        customer=np.array(cids, dtype=np.int64),
        n_h=n_h,
    )


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class TrainConfig:
    task: TaskSpec
    mode: str = "bow"
    lr: float = 0.01
    max_epochs: int = 5000
    patience: int = 50
    batch_size: int = 32
    seed: int = 0
    hidden: int = 64
    gnn_dim: int = 16
    gnn_rounds: int = 2
    fusion: str = "step"
    grad_clip: float = 5.0
    max_train_windows: int = 0   # 0 means uncapped
    max_val_windows: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience, batch_size must be >= 1")
        if self.mode not in nn.MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")

    def fingerprint(self, dataset_hash: str = "") -> str:
        payload = {k: (asdict(v) if hasattr(v, "__dataclass_fields__") else v)
                   for k, v in asdict(self).items()}
        payload["dataset_hash"] = dataset_hash
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: dict


class EarlyStopper:
    """Stops after ``patience`` epochs without a validation-loss improvement;
    remembers the payload of the best epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.best_payload = None
        self.bad = 0

    def update(self, epoch: int, val_loss: float, payload) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.best_payload = payload
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


def task_rows(table: WindowTable, task: str) -> np.ndarray:
    """Row indices usable for a task (trajectory needs a continuation)."""
    if task == "trajectory":
        return np.nonzero(table.next_token >= 0)[0]
    return np.arange(len(table))


def _labels_for(table: WindowTable, task: str) -> np.ndarray:
    if task == "goal":
        return table.goal
    if task == "type":
        return table.ctype
    return table.next_token


def _cap(idx: np.ndarray, cap: int) -> np.ndarray:
    if cap and len(idx) > cap:
        pick = np.random.default_rng(_SUBSAMPLE_SEED).permutation(len(idx))[:cap]
        return np.sort(idx[pick])
    return idx


def head_names(task: str) -> tuple:
    if task == "goal":
        return ("check_info", "change_info")
    if task == "type":
        return ("income", "fail_behavior", "digital_behavior")
    return ("next_token",)


def _head_accuracies(task: str, logits: np.ndarray, labels: np.ndarray) -> dict:
    accs = {}
    if task == "goal":
        pred = (nn._sigmoid(logits) > 0.5).astype(np.int64)
        accs["check_info"] = float((pred[:, 0] == labels[:, 0]).mean())
        accs["change_info"] = float((pred[:, 1] == labels[:, 1]).mean())
    elif task == "type":
        for name, gi, (lo, hi) in zip(head_names(task), range(3),
                                      nn.TYPE_GROUP_SLICES):
            pred = logits[:, lo:hi].argmax(axis=1)
            accs[name] = float((pred == labels[:, gi]).mean())
    else:
        pred = logits.argmax(axis=1)
        accs["next_token"] = float((pred == labels).mean())
    return accs


def _batched_logits(p: ModelParams, table: WindowTable, rows: np.ndarray,
                    g: StateGraph | None, chunk: int = 512) -> np.ndarray:
    nbr = g.neighbor_matrix if g is not None else None
    out = []
    for s in range(0, len(rows), chunk):
        r = rows[s:s + chunk]
        steps, ann = nn.enc_batch(table.tokens[r], table.nodes[r], table.info[r],
                                  table.mod[r], p.dims.vocab_size, p.dims.mode,
                                  p.dims.n_nodes)
        out.append(nn.logits_batch(p, steps, ann, nbr))
    return np.concatenate(out, axis=0)


def train(train_table: WindowTable, val_table: WindowTable, cfg: TrainConfig,
          vocab: Vocab, g: StateGraph | None = None
          ) -> tuple[ModelParams, list[EpochRecord]]:
    """Mini-batch Adam with early stopping on validation loss.

    Returns the parameters of the best validation epoch and the per-epoch
    records.  Fully deterministic for a fixed config and data.
    """
    task = cfg.task.task
    if cfg.mode == "graph" and g is None:
        raise ConfigError("graph mode requires a state graph")
    tr_rows = _cap(task_rows(train_table, task), cfg.max_train_windows)
    va_rows = _cap(task_rows(val_table, task), cfg.max_val_windows)
    if len(tr_rows) == 0 or len(va_rows) == 0:
        raise EmptyData("empty train or validation partition")
    dims = ModelDims(task=task, mode=cfg.mode, vocab_size=len(vocab),
                     hidden=cfg.hidden, gnn_dim=cfg.gnn_dim,
                     gnn_rounds=cfg.gnn_rounds,
                     n_nodes=len(g) if g is not None else 0, fusion=cfg.fusion)
    params = nn.init_params(cfg.seed, dims)
    adam = nn.init_adam(params)
    nbr = g.neighbor_matrix if g is not None else None
    labels_all = _labels_for(train_table, task)
    val_labels = _labels_for(val_table, task)[va_rows]
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopper(cfg.patience)
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = tr_rows[rng.permutation(len(tr_rows))]
        batch_losses = []
        for s in range(0, len(order), cfg.batch_size):
            r = order[s:s + cfg.batch_size]
            steps, ann = nn.enc_batch(train_table.tokens[r], train_table.nodes[r],
                                      train_table.info[r], train_table.mod[r],
                                      dims.vocab_size, dims.mode, dims.n_nodes)
            value, grads = nn.loss_and_grads_batch(params, steps, ann,
                                                   labels_all[r], nbr)
            grads = nn.clip_gradients(grads, cfg.grad_clip)
            params, adam = nn.adam_step(params, grads, adam, lr=cfg.lr)
            batch_losses.append(value)
        val_logits = _batched_logits(params, val_table, va_rows, g)
        val_loss, _ = nn._loss_batch(task, val_logits, val_labels)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=float(val_loss),
            val_acc=_head_accuracies(task, val_logits, val_labels),
        )
        records.append(record)
        if stopper.update(epoch, record.val_loss, params.copy()):
            break
    return stopper.best_payload, records


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class MetricsReport:
    task: str
    mode: str
    accuracies: dict
    sample_counts: dict
    config_fingerprint: str = ""
    seed: int = 0


def evaluate_goal(p: ModelParams, table: WindowTable, g: StateGraph | None = None,
                  fingerprint: str = "", seed: int = 0) -> MetricsReport:
    rows = np.arange(len(table))
    if len(rows) == 0:
        raise EmptyData("no test windows")
    logits = _batched_logits(p, table, rows, g)
    accs = _head_accuracies("goal", logits, table.goal)
    return MetricsReport(task="goal", mode=p.dims.mode, accuracies=accs,
                         sample_counts={"windows": len(rows)},
                         config_fingerprint=fingerprint, seed=seed)


def evaluate_type(p: ModelParams, table: WindowTable, g: StateGraph | None = None,
                  majority_per_customer: bool = False, fingerprint: str = "",
                  seed: int = 0) -> MetricsReport:
    rows = np.arange(len(table))
    if len(rows) == 0:
        raise EmptyData("no test windows")
    logits = _batched_logits(p, table, rows, g)
    if not majority_per_customer:
        accs = _head_accuracies("type", logits, table.ctype)
        counts = {"windows": len(rows)}
    else:
        accs = {}
        customers = np.unique(table.customer)
        for name, gi, (lo, hi) in zip(head_names("type"), range(3),
                                      nn.TYPE_GROUP_SLICES):
            pred = logits[:, lo:hi].argmax(axis=1)
            hits = 0
            for cid in customers:
                m = table.customer == cid
                votes = np.bincount(pred[m], minlength=hi - lo)
                if votes.argmax() == table.ctype[m][0, gi]:
                    hits += 1
            accs[name] = float(hits / len(customers))
        counts = {"windows": len(rows), "customers": int(len(customers))}
    return MetricsReport(task="type", mode=p.dims.mode, accuracies=accs,
                         sample_counts=counts, config_fingerprint=fingerprint,
                         seed=seed)


def _rollout_hits(p: ModelParams, sub: WindowTable, k: int, vocab: Vocab,
                  g: StateGraph | None) -> np.ndarray:
    state = nn._RolloutState(
        tokens=sub.tokens.copy(), nodes=sub.nodes.copy(),
        info=sub.info.copy(), mod=sub.mod.copy(),
        fold_states=list(sub.final_states),
    )
    preds = nn.rollout_batch(p, state, k, vocab, g)
    hits = np.zeros(len(sub))
    for r in range(len(sub)):
        truth = sub.continuations[r][:k]
        hits[r] = np.mean([preds[r][j] == truth[j] for j in range(k)])
    return hits


def _rollout_chunk(args) -> np.ndarray:
    return _rollout_hits(*args)


def evaluate_trajectory(p: ModelParams, table: WindowTable, vocab: Vocab,
                        g: StateGraph | None = None,
                        horizons: Sequence[int] = (1, 5, 15),
                        max_windows: int = 0, fingerprint: str = "",
                        seed: int = 0, jobs: int = 1) -> MetricsReport:
    """Greedy-rollout accuracy per horizon: mean over windows of the
    per-position match fraction.  Windows with continuations shorter than a
    horizon are skipped for that horizon.  ``jobs`` fans the rollout out
    over processes; chunks are merged in order so results are identical."""
    accs, counts = {}, {}
    for k in sorted(horizons):
        rows = np.nonzero(np.array([len(c) >= k for c in table.continuations]))[0]
        rows = _cap(rows, max_windows)
        if len(rows) == 0:
            raise EmptyData(f"no windows with continuation >= {k}")
        sub = table.subset(rows)
        if jobs > 1 and len(rows) >= jobs * 8:
            import multiprocessing as mp

            bounds = np.linspace(0, len(rows), jobs + 1).astype(int)
            chunks = [(p, sub.subset(np.arange(lo, hi)), k, vocab, g)
                      for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
            with mp.get_context("spawn").Pool(jobs) as pool:
                pieces = pool.map(_rollout_chunk, chunks)
            hits = np.concatenate(pieces)
        else:
            hits = _rollout_hits(p, sub, k, vocab, g)
        accs[f"k{k}"] = float(hits.mean())
        counts[f"k{k}"] = int(len(rows))
    return MetricsReport(task="trajectory", mode=p.dims.mode, accuracies=accs,
                         sample_counts=counts, config_fingerprint=fingerprint,
                         seed=seed)


# ---------------------------------------------------------------------------
# Output files

def write_loss_csv(path, records: Sequence[EpochRecord], task: str) -> None:
    heads = head_names(task)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cols = ",".join(f"acc_{h}" for h in heads)
        fh.write(f"epoch,split,loss,{cols}\n")
        for r in records:
            blank = "," * len(heads)
            fh.write(f"{r.epoch},train,{r.train_loss:.10g}{blank}\n")
            accs = ",".join(f"{r.val_acc[h]:.6f}" for h in heads)
            fh.write(f"{r.epoch},val,{r.val_loss:.10g},{accs}\n")


def render_report(report: MetricsReport) -> str:
    lines = [
        "# banktrace metrics report",
        f"task: {report.task}",
        f"mode: {report.mode}",
        f"seed: {report.seed}",
        f"config_fingerprint: {report.config_fingerprint}",
    ]
    for name, count in sorted(report.sample_counts.items()):
        lines.append(f"samples {name}: {count}")
    for name, acc in sorted(report.accuracies.items()):
        lines.append(f"accuracy {name}: {acc:.6f}")
    return "\n".join(lines) + "\n"


def write_outputs(report: MetricsReport, records: Sequence[EpochRecord],
                  report_path, loss_csv_path) -> None:
    """Persist one run's metrics report and its loss curve."""
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_report(report))
    write_loss_csv(loss_csv_path, records, report.task)
