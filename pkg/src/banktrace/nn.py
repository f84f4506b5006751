"""From-scratch differentiable models for the three prediction tasks.

Two model families share one code path: an LSTM over per-step encodings
(bag-of-words mode) and the same LSTM whose step inputs are augmented with
a graph-network embedding of the history-so-far annotation (graph mode).
Forward, reverse-mode gradients (backprop through time and through the
message-passing rounds), losses, Adam, greedy rollout, and a binary
checkpoint format all live here.  Only numpy is used; gradients are
derived by hand and are checked against finite differences in the tests.

Everything is float64.  Forward/backward are pure given immutable params;
training loops own all mutation.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, DimError, EmptyGraph
from . import encode as enc
from . import trace
from .encode import EncodedWindow, Vocab, encode_window
from .graph import StateGraph

TASKS = ("goal", "type", "trajectory")
MODES = ("bow", "graph")
FUSIONS = ("step", "final")

# income(4), fail behavior(3), digital behavior(3)
TYPE_GROUP_SLICES = ((0, 4), (4, 7), (7, 10))
TYPE_HEAD_SIZE = 10
GOAL_HEAD_SIZE = 2

LOGIT_CLIP = 30.0  # cross-entropy clamps logits to +/- this to avoid overflow


@dataclass(frozen=True)
class TaskSpec:
    task: str
    n_h: int = 20
    n_f: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.n_h < 1:
            raise ConfigError("n_h must be >= 1")
        if self.n_f < 1:
            raise ConfigError("n_f must be >= 1")


@dataclass(frozen=True)
class ModelDims:
    """Every dimension needed to shape parameters consistently."""

    task: str
    mode: str
    vocab_size: int           # includes the OOV slot
    hidden: int = 64
    gnn_dim: int = 16
    gnn_rounds: int = 2
    n_nodes: int = 0          # graph node count (graph mode only)
    fusion: str = "step"

    def __post_init__(self):
        if self.task not in TASKS:
            raise DimError(f"unknown task {self.task!r}")
        if self.mode not in MODES:
            raise DimError(f"unknown mode {self.mode!r}")
        if self.fusion not in FUSIONS:
            raise DimError(f"unknown fusion {self.fusion!r}")
        if self.vocab_size < 2:
            raise DimError("vocab_size must be >= 2")
        if self.hidden < 1 or self.gnn_dim < 1 or self.gnn_rounds < 1:
            raise DimError("hidden, gnn_dim, gnn_rounds must be >= 1")
        if self.mode == "graph" and self.n_nodes < 1:
            raise DimError("graph mode needs n_nodes >= 1")

    @property
    def input_dim(self) -> int:
        if self.mode == "bow":
            return 2 * self.vocab_size
        if self.fusion == "step":
            return self.vocab_size + self.gnn_dim
        return self.vocab_size

    @property
    def head_input_dim(self) -> int:
        if self.mode == "graph" and self.fusion == "final":
            return self.hidden + self.gnn_dim
        return self.hidden

    @property
    def head_size(self) -> int:
        if self.task == "goal":
            return GOAL_HEAD_SIZE
        if self.task == "type":
            return TYPE_HEAD_SIZE
        return self.vocab_size


_LSTM_NAMES = ("lstm_wx", "lstm_wh", "lstm_b")
_GNN_NAMES = ("gnn_w1", "gnn_u1", "gnn_b1", "gnn_w2", "gnn_u2", "gnn_b2",
              "gnn_r", "gnn_c")
_HEAD_NAMES = ("head_w", "head_b")


def param_order(dims: ModelDims) -> tuple:
    names = list(_LSTM_NAMES)
    if dims.mode == "graph":
        names.extend(_GNN_NAMES)
    names.extend(_HEAD_NAMES)
    return tuple(names)


def param_shapes(dims: ModelDims) -> dict:
    h, g = dims.hidden, dims.gnn_dim
    shapes = {
        "lstm_wx": (4 * h, dims.input_dim),
        "lstm_wh": (4 * h, h),
        "lstm_b": (4 * h,),
    }
    if dims.mode == "graph":
        shapes.update({
            "gnn_w1": (g, 4), "gnn_u1": (g, 4), "gnn_b1": (g,),
            "gnn_w2": (g, g), "gnn_u2": (g, g), "gnn_b2": (g,),
            "gnn_r": (g, g), "gnn_c": (g,),
        })
    shapes.update({
        "head_w": (dims.head_size, dims.head_input_dim),
        "head_b": (dims.head_size,),
    })
    return shapes


@dataclass
class ModelParams:
    dims: ModelDims
    arrays: dict

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.arrays.items()})


Gradients = dict  # name -> array, shape-identical to ModelParams.arrays


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_params(seed: int, dims: ModelDims) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; forget bias 1."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name in param_order(dims):
        shape = param_shapes(dims)[name]
        if len(shape) == 1:
            arrays[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    h = dims.hidden
    arrays["lstm_b"][h:2 * h] = 1.0
    return ModelParams(dims=dims, arrays=arrays)


def zero_grads(p: ModelParams) -> Gradients:
    return {k: np.zeros_like(v) for k, v in p.arrays.items()}


def init_adam(p: ModelParams) -> AdamState:
    return AdamState(m={k: np.zeros_like(v) for k, v in p.arrays.items()},
                     v={k: np.zeros_like(v) for k, v in p.arrays.items()},
                     t=0)


def adam_step(p: ModelParams, g: Gradients, s: AdamState, lr: float = 0.01,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if set(g) != set(p.arrays):
        raise DimError("gradient tree does not match parameter tree")
    t = s.t + 1
    new_arrays, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, theta in p.arrays.items():
        if g[name].shape != theta.shape:
            raise DimError(f"gradient shape mismatch for {name}")
        m = beta1 * s.m[name] + (1.0 - beta1) * g[name]
        v = beta2 * s.v[name] + (1.0 - beta2) * g[name] ** 2
        new_arrays[name] = theta - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[name] = m
        new_v[name] = v
    return ModelParams(p.dims, new_arrays), AdamState(m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# Numerics

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_step(p: ModelParams, x_t: np.ndarray, h: np.ndarray,
              c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single gated recurrence step: returns (h', c')."""
    hdim = p.dims.hidden
    if x_t.shape != (p.dims.input_dim,) or h.shape != (hdim,) or c.shape != (hdim,):
        raise DimError("lstm_step input shapes do not match model dims")
    z = p.arrays["lstm_wx"] @ x_t + p.arrays["lstm_wh"] @ h + p.arrays["lstm_b"]
    i = _sigmoid(z[:hdim])
    f = _sigmoid(z[hdim:2 * hdim])
    o = _sigmoid(z[2 * hdim:3 * hdim])
    g = np.tanh(z[3 * hdim:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


# ---------------------------------------------------------------------------
# Graph network

def _gnn_forward(p: ModelParams, nbr: np.ndarray, feats: np.ndarray) -> tuple:
    """Message passing over node features.

    ``feats`` is (M, N, 4) — a flat batch of annotation matrices; ``nbr``
    the (N, N) row-normalized neighbor-mean matrix.  Returns the (M, G)
    readout and a cache for the backward pass.
    """
    a = p.arrays
    hs = [feats]
    ahs = []
    for r in range(p.dims.gnn_rounds):
        w, u, b = (("gnn_w1", "gnn_u1", "gnn_b1") if r == 0
                   else ("gnn_w2", "gnn_u2", "gnn_b2"))
        ah = np.matmul(nbr, hs[-1])
        z = hs[-1] @ a[w].T + ah @ a[u].T + a[b]
        ahs.append(ah)
        hs.append(np.tanh(z))
    mean = hs[-1].mean(axis=1)
    out = mean @ a["gnn_r"].T + a["gnn_c"]
    return out, (hs, ahs, mean)


def _gnn_backward(p: ModelParams, nbr: np.ndarray, cache: tuple,
                  dout: np.ndarray, grads: Gradients) -> None:
    a = p.arrays
    hs, ahs, mean = cache
    n_nodes = hs[0].shape[1]
    grads["gnn_r"] += dout.T @ mean
    grads["gnn_c"] += dout.sum(axis=0)
    dh = (dout @ a["gnn_r"])[:, None, :] / n_nodes
    dh = np.broadcast_to(dh, hs[-1].shape).copy()
    for r in range(p.dims.gnn_rounds - 1, -1, -1):
        w, u, b = (("gnn_w1", "gnn_u1", "gnn_b1") if r == 0
                   else ("gnn_w2", "gnn_u2", "gnn_b2"))
        dz = dh * (1.0 - hs[r + 1] ** 2)
        grads[w] += np.einsum("mng,mnf->gf", dz, hs[r])
        grads[u] += np.einsum("mng,mnf->gf", dz, ahs[r])
        grads[b] += dz.sum(axis=(0, 1))
        if r > 0:
            dh = dz @ a[w] + np.matmul(nbr.T, dz @ a[u])


def gnn_encode(p: ModelParams, g: StateGraph, feats: np.ndarray,
               rounds: int | None = None) -> np.ndarray:
    """Encode one (N, 4) node-feature matrix to a G-dim embedding."""
    if len(g) == 0:
        raise EmptyGraph("cannot encode an empty graph")
    if feats.shape != (len(g), 4):
        raise DimError(f"expected feats of shape ({len(g)}, 4), got {feats.shape}")
    q = p if rounds is None or rounds == p.dims.gnn_rounds else \
        ModelParams(replace(p.dims, gnn_rounds=rounds), p.arrays)
    out, _ = _gnn_forward(q, g.neighbor_matrix, feats[None, :, :])
    return out[0]


# ---------------------------------------------------------------------------
# Forward / loss / backward over batches

def _forward_batch(p: ModelParams, steps: np.ndarray,
                   annotations: np.ndarray | None,
                   nbr: np.ndarray | None) -> tuple[np.ndarray, dict]:
    """Run the model on a batch.

    ``steps``: (B, T, D_pre) where D_pre is 2V for bow mode and V for graph
    mode.  ``annotations``: (B, T, N, 4) in graph mode.  Returns logits
    (B, K) and the forward cache.
    """
    dims = p.dims
    b, t_len = steps.shape[0], steps.shape[1]
    cache: dict = {"steps": steps}
    if dims.mode == "graph":
        if annotations is None or nbr is None:
            raise DimError("graph mode requires annotations and a neighbor matrix")
        if dims.fusion == "step":
            flat = annotations.reshape(b * t_len, dims.n_nodes, 4)
            gnn_out, gnn_cache = _gnn_forward(p, nbr, flat)
            cache["gnn_cache"] = gnn_cache
            x = np.concatenate([steps, gnn_out.reshape(b, t_len, dims.gnn_dim)], axis=2)
        else:
            final_ann = annotations[:, -1]
            gnn_out, gnn_cache = _gnn_forward(p, nbr, final_ann)
            cache["gnn_cache"] = gnn_cache
            cache["gnn_final"] = gnn_out
            x = steps
    else:
        x = steps
    if x.shape[2] != dims.input_dim:
        raise DimError(f"input dim {x.shape[2]} != expected {dims.input_dim}")

    hdim = dims.hidden
    wx, wh, bias = p.arrays["lstm_wx"], p.arrays["lstm_wh"], p.arrays["lstm_b"]
    h = np.zeros((b, hdim))
    c = np.zeros((b, hdim))
    gates, cells, tanhs, hs, cprevs = [], [], [], [np.zeros((b, hdim))], []
    for t in range(t_len):
        z = x[:, t] @ wx.T + h @ wh.T + bias
        i = _sigmoid(z[:, :hdim])
        f = _sigmoid(z[:, hdim:2 * hdim])
        o = _sigmoid(z[:, 2 * hdim:3 * hdim])
        g = np.tanh(z[:, 3 * hdim:])
        cprevs.append(c)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates.append((i, f, o, g))
        cells.append(c)
        tanhs.append(tc)
        hs.append(h)
    cache.update(x=x, gates=gates, cells=cells, tanhs=tanhs, hs=hs, cprevs=cprevs)

    if dims.mode == "graph" and dims.fusion == "final":
        feat = np.concatenate([h, cache["gnn_final"]], axis=1)
    else:
        feat = h
    cache["head_in"] = feat
    logits = feat @ p.arrays["head_w"].T + p.arrays["head_b"]
    return logits, cache


def forward(p: ModelParams, w: EncodedWindow, spec: TaskSpec,
            mode: str | None = None, graph: StateGraph | None = None) -> np.ndarray:
    """Logits for one encoded window."""
    if mode is not None and mode != p.dims.mode:
        raise DimError(f"window mode {mode!r} does not match model mode {p.dims.mode!r}")
    if w.mode != p.dims.mode:
        raise DimError(f"window encoded in {w.mode!r}, model expects {p.dims.mode!r}")
    if spec.task != p.dims.task:
        raise DimError(f"task {spec.task!r} does not match model task {p.dims.task!r}")
    nbr = graph.neighbor_matrix if graph is not None else None
    ann = w.annotations[None] if w.annotations is not None else None
    if p.dims.mode == "graph" and nbr is None:
        raise DimError("graph-mode forward needs the state graph")
    logits, _ = _forward_batch(p, w.steps[None], ann, nbr)
    return logits[0]


def _bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _loss_batch(task: str, logits: np.ndarray,
                labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and gradient w.r.t. the (unclamped) logits."""
    b = logits.shape[0]
    mask = (np.abs(logits) < LOGIT_CLIP).astype(np.float64)
    z = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
    dlogits = np.zeros_like(logits)
    if task == "goal":
        y = labels.astype(np.float64)
        loss = _bce_with_logits(z, y).sum(axis=1).mean()
        dlogits = (_sigmoid(z) - y) / b
    elif task == "type":
        total = 0.0
        for gi, (lo, hi) in enumerate(TYPE_GROUP_SLICES):
            zg = z[:, lo:hi]
            probs = _softmax(zg)
            idx = labels[:, gi]
            rows = np.arange(b)
            total += -np.log(np.maximum(probs[rows, idx], 1e-300)).mean()
            dz = probs.copy()
            dz[rows, idx] -= 1.0
            dlogits[:, lo:hi] = dz / b
        loss = total
    elif task == "trajectory":
        probs = _softmax(z)
        rows = np.arange(b)
        idx = labels.reshape(-1)
        loss = -np.log(np.maximum(probs[rows, idx], 1e-300)).mean()
        dlogits = probs
        dlogits[rows, idx] -= 1.0
        dlogits /= b
    else:
        raise DimError(f"unknown task {task!r}")
    return float(loss), dlogits * mask


def loss(logits: np.ndarray, label, spec: TaskSpec) -> float:
    """Loss of a single prediction; labels per task as in :func:`backward`."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise DimError("loss expects a 1-d logits vector")
    value, _ = _loss_batch(spec.task, logits[None], _label_array(spec.task, [label]))
    return value


def _label_array(task: str, labels: Sequence) -> np.ndarray:
    if task == "goal":
        return np.array([[int(l[0]), int(l[1])] for l in labels], dtype=np.int64)
    if task == "type":
        return np.array([[int(l[0]), int(l[1]), int(l[2])] for l in labels],
                        dtype=np.int64)
    return np.array([int(l) for l in labels], dtype=np.int64)


def _backward_batch(p: ModelParams, cache: dict, dlogits: np.ndarray,
                    nbr: np.ndarray | None) -> Gradients:
    dims = p.dims
    grads = zero_grads(p)
    feat = cache["head_in"]
    grads["head_w"] += dlogits.T @ feat
    grads["head_b"] += dlogits.sum(axis=0)
    dfeat = dlogits @ p.arrays["head_w"]

    if dims.mode == "graph" and dims.fusion == "final":
        dh = dfeat[:, :dims.hidden]
        dgnn_final = dfeat[:, dims.hidden:]
        _gnn_backward(p, nbr, cache["gnn_cache"], dgnn_final, grads)
    else:
        dh = dfeat

    x = cache["x"]
    b, t_len = x.shape[0], x.shape[1]
    hdim = dims.hidden
    wx, wh = p.arrays["lstm_wx"], p.arrays["lstm_wh"]
    dc = np.zeros((b, hdim))
    dh = dh.copy()
    dx = np.zeros_like(x)
    for t in range(t_len - 1, -1, -1):
        i, f, o, g = cache["gates"][t]
        tc = cache["tanhs"][t]
        c_prev = cache["cprevs"][t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc = dc * f
        dzi = di * i * (1.0 - i)
        dzf = df * f * (1.0 - f)
        dzo = do * o * (1.0 - o)
        dzg = dg * (1.0 - g ** 2)
        dz = np.concatenate([dzi, dzf, dzo, dzg], axis=1)
        grads["lstm_wx"] += dz.T @ x[:, t]
        grads["lstm_wh"] += dz.T @ cache["hs"][t]
        grads["lstm_b"] += dz.sum(axis=0)
        dx[:, t] = dz @ wx
        dh = dz @ wh

    if dims.mode == "graph" and dims.fusion == "step":
        dgnn = dx[:, :, dims.vocab_size:].reshape(b * t_len, dims.gnn_dim)
        _gnn_backward(p, nbr, cache["gnn_cache"], dgnn, grads)
    return grads


def backward(p: ModelParams, w: EncodedWindow, label, spec: TaskSpec,
             mode: str | None = None,
             graph: StateGraph | None = None) -> tuple[float, Gradients]:
    """Loss and exact parameter gradients for one window."""
    if mode is not None and mode != p.dims.mode:
        raise DimError(f"window mode {mode!r} does not match model mode {p.dims.mode!r}")
    nbr = graph.neighbor_matrix if graph is not None else None
    if p.dims.mode == "graph" and nbr is None:
        raise DimError("graph-mode backward needs the state graph")
    ann = w.annotations[None] if w.annotations is not None else None
    logits, cache = _forward_batch(p, w.steps[None], ann, nbr)
    value, dlogits = _loss_batch(spec.task, logits, _label_array(spec.task, [label]))
    grads = _backward_batch(p, cache, dlogits, nbr)
    return value, grads


def loss_and_grads_batch(p: ModelParams, steps: np.ndarray,
                         annotations: np.ndarray | None, labels: np.ndarray,
                         nbr: np.ndarray | None) -> tuple[float, Gradients]:
    """Batched training objective; mean loss over the batch."""
    logits, cache = _forward_batch(p, steps, annotations, nbr)
    value, dlogits = _loss_batch(p.dims.task, logits, labels)
    return value, _backward_batch(p, cache, dlogits, nbr)


def logits_batch(p: ModelParams, steps: np.ndarray,
                 annotations: np.ndarray | None,
                 nbr: np.ndarray | None) -> np.ndarray:
    out, _ = _forward_batch(p, steps, annotations, nbr)
    return out


def global_norm(grads: Gradients) -> float:
    total = 0.0
    for a in grads.values():
        total += float(np.sum(a * a))
    return float(np.sqrt(total))


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return {k: v * scale for k, v in grads.items()}
    return grads


# ---------------------------------------------------------------------------
# Greedy autoregressive rollout

def rollout(p: ModelParams, window: Sequence[trace.StateActionPair], k: int,
            v: Vocab, g: StateGraph | None = None) -> list[str]:
    """Predict the next ``k`` tokens greedily, feeding predictions back.

    Ties in the argmax resolve to the lowest index.  In graph mode each
    predicted action is folded into an explicit interface state so the
    annotation's ego/past indicators stay current during decoding.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if p.dims.task != "trajectory":
        raise DimError("rollout requires a trajectory-task model")
    state = _RolloutState.from_pairs([list(window)], v, g)
    preds = rollout_batch(p, state, k, v, g)
    return [row[0] for row in preds]


class _RolloutState:
    """Mutable sliding-window arrays for batched greedy decoding."""

    def __init__(self, tokens, nodes, info, mod, fold_states):
        self.tokens = tokens      # (B, T) int vocab indices
        self.nodes = nodes        # (B, T) int graph node indices, -1 if absent
        self.info = info          # (B, T) bool
        self.mod = mod            # (B, T) bool
        self.fold_states = fold_states  # per-row SessionState after last pair

    @classmethod
    def from_pairs(cls, windows: Sequence[Sequence[trace.StateActionPair]],
                   v: Vocab, g: StateGraph | None) -> "_RolloutState":
        b = len(windows)
        t_len = len(windows[0])
        tokens = np.zeros((b, t_len), dtype=np.int64)
        nodes = np.full((b, t_len), -1, dtype=np.int64)
        info = np.zeros((b, t_len), dtype=bool)
        mod = np.zeros((b, t_len), dtype=bool)
        fold_states = []
        for r, win in enumerate(windows):
            if len(win) != t_len:
                raise DimError("all rollout windows must share one length")
            for t, pair in enumerate(win):
                tokens[r, t] = v.index_of(enc.token_of(pair))
                if g is not None:
                    nodes[r, t] = g.node_of(pair.state)
                info[r, t] = pair.action.kind == trace.INFO
                mod[r, t] = pair.action.kind == trace.MODIFICATION
            last = win[-1]
            fold_states.append(
                trace.apply_action_lenient(last.state, last.channel, last.action))
        return cls(tokens, nodes, info, mod, fold_states)

    def advance(self, pred_idx: np.ndarray, v: Vocab, g: StateGraph | None) -> None:
        b = self.tokens.shape[0]
        new_nodes = np.full(b, -1, dtype=np.int64)
        new_info = np.zeros(b, dtype=bool)
        new_mod = np.zeros(b, dtype=bool)
        for r in range(b):
            state = self.fold_states[r]
            if g is not None:
                new_nodes[r] = g.node_of(state)
            decoded = enc.action_of_token(v.token_at(int(pred_idx[r])))
            if decoded is not None:
                channel, action = decoded
                new_info[r] = action.kind == trace.INFO
                new_mod[r] = action.kind == trace.MODIFICATION
                self.fold_states[r] = trace.apply_action_lenient(state, channel, action)
        self.tokens = np.concatenate([self.tokens[:, 1:], pred_idx[:, None]], axis=1)
        self.nodes = np.concatenate([self.nodes[:, 1:], new_nodes[:, None]], axis=1)
        self.info = np.concatenate([self.info[:, 1:], new_info[:, None]], axis=1)
        self.mod = np.concatenate([self.mod[:, 1:], new_mod[:, None]], axis=1)


def rollout_batch(p: ModelParams, state: _RolloutState, k: int, v: Vocab,
                  g: StateGraph | None = None) -> list[list[str]]:
    """Greedy decode ``k`` steps for every row; returns token strings per row."""
    nbr = g.neighbor_matrix if g is not None else None
    if p.dims.mode == "graph" and nbr is None:
        raise DimError("graph-mode rollout needs the state graph")
    b = state.tokens.shape[0]
    out: list[list[str]] = [[] for _ in range(b)]
    for _ in range(k):
        steps, ann = enc_batch(state.tokens, state.nodes, state.info, state.mod,
                               len(v), p.dims.mode,
                               p.dims.n_nodes if p.dims.mode == "graph" else 0)
        logits = logits_batch(p, steps, ann, nbr)
        pred = logits.argmax(axis=1)
        for r in range(b):
            out[r].append(v.token_at(int(pred[r])))
        state.advance(pred, v, g)
    return out


def enc_batch(tokens: np.ndarray, nodes: np.ndarray, info: np.ndarray,
              mod: np.ndarray, vocab_size: int, mode: str,
              n_nodes: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Vectorized batch encoding from compact per-window arrays.

    Produces exactly what :func:`banktrace.encode.encode_window` produces,
    stacked over a batch (verified by tests).
    """
    b, t_len = tokens.shape
    hot = np.zeros((b, t_len, vocab_size), dtype=np.float64)
    rows = np.arange(b)[:, None]
    cols = np.arange(t_len)[None, :]
    hot[rows, cols, tokens] = 1.0
    if mode == "bow":
        return np.concatenate([hot, np.cumsum(hot, axis=1)], axis=2), None
    ann = np.zeros((b, t_len, n_nodes, 4), dtype=np.float64)
    past = np.zeros((b, n_nodes), dtype=np.float64)
    infoc = np.zeros((b, n_nodes), dtype=np.float64)
    modc = np.zeros((b, n_nodes), dtype=np.float64)
    rr = np.arange(b)
    for t in range(t_len):
        nd = nodes[:, t]
        ok = nd >= 0
        past[rr[ok], nd[ok]] = 1.0
        i_ok = ok & info[:, t]
        infoc[rr[i_ok], nd[i_ok]] = 1.0
        m_ok = ok & mod[:, t]
        modc[rr[m_ok], nd[m_ok]] = 1.0
        ann[:, t, :, 0] = past
        ann[:, t, :, 2] = infoc
        ann[:, t, :, 3] = modc
        ann[rr[ok], t, nd[ok], 1] = 1.0
    return hot, ann


# ---------------------------------------------------------------------------
# Checkpoints: magic, json header, row-major float64 arrays, sha256 trailer

_MAGIC = b"BTCHKPT1"


def save_checkpoint(path, p: ModelParams, vocab: Vocab,
                    g: StateGraph | None = None, meta: dict | None = None) -> None:
    from . import graph as graph_mod

    dims = p.dims
    header = {
        "dims": {
            "task": dims.task, "mode": dims.mode, "vocab_size": dims.vocab_size,
            "hidden": dims.hidden, "gnn_dim": dims.gnn_dim,
            "gnn_rounds": dims.gnn_rounds, "n_nodes": dims.n_nodes,
            "fusion": dims.fusion,
        },
        "param_order": list(param_order(dims)),
        "shapes": {k: list(p.arrays[k].shape) for k in param_order(dims)},
        "vocab": list(vocab.tokens[1:]),
        "graph": graph_mod.render_graph(g) if g is not None else None,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", len(blob)), blob]
    for name in param_order(dims):
        parts.append(np.ascontiguousarray(p.arrays[name], dtype="<f8").tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path) -> tuple[ModelParams, Vocab, StateGraph | None, dict]:
    from . import graph as graph_mod

    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 44 or data[:8] != _MAGIC:
        raise ConfigError(f"{path}: not a checkpoint file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ConfigError(f"{path}: checkpoint checksum mismatch")
    hlen = struct.unpack("<I", body[8:12])[0]
    header = json.loads(body[12:12 + hlen].decode("utf-8"))
    dims = ModelDims(**header["dims"])
    offset = 12 + hlen
    arrays = {}
    for name in header["param_order"]:
        shape = tuple(header["shapes"][name])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape)
        arrays[name] = arr.astype(np.float64, copy=True)
        offset += n * 8
    vocab = Vocab(header["vocab"])
    g = graph_mod.parse_graph(header["graph"]) if header["graph"] else None
    return ModelParams(dims, arrays), vocab, g, header.get("meta", {})
