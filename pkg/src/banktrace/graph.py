"""State-space graph over interface states, with per-window binary annotations.

Nodes are (primary, secondary) states observed in training trajectories;
directed edges are transition actions between them.  Both survive only if
observed strictly more than ``min_count`` times.  A history window is
projected onto the graph as four binary indicators per node: visited in
the window, current location, info action taken there, modification taken
there.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyGraph
from . import trace
from .trace import INFO, MODIFICATION, SessionState, StateActionPair, TRANSITION

# Annotation column layout.
PAST, EGO, INFO_GAIN, MODIFIED = 0, 1, 2, 3
N_NODE_FEATURES = 4


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    action: str  # transition detail, e.g. "enter-menu:settings"
    count: int


class StateGraph:
    """Immutable thresholded state-transition graph.

    Node indices are dense ``0..N-1`` in lexicographic (primary, secondary)
    order, so they are stable for a fixed training set regardless of input
    order.
    """

    def __init__(self, nodes: Sequence[SessionState], node_counts: Sequence[int],
                 edges: Sequence[Edge]):
        self.nodes = tuple(nodes)
        self.node_counts = tuple(int(c) for c in node_counts)
        self.edges = tuple(edges)
        self.index = {s: i for i, s in enumerate(self.nodes)}
        self._neighbor_matrix = _mean_neighbor_matrix(len(self.nodes), self.edges)

    def __len__(self) -> int:
        return len(self.nodes)

    def node_of(self, state: SessionState) -> int:
        """Dense index of a state, or -1 when pruned from the graph."""
        return self.index.get(state, -1)

    @property
    def neighbor_matrix(self) -> np.ndarray:
        """Row-normalized adjacency over the union of in- and out-neighbors."""
        return self._neighbor_matrix

    def fingerprint(self) -> str:
        return hashlib.sha256(render_graph(self).encode("utf-8")).hexdigest()


def _mean_neighbor_matrix(n: int, edges: Sequence[Edge]) -> np.ndarray:
    nbrs = [set() for _ in range(n)]
    for e in edges:
        nbrs[e.src].add(e.dst)
        nbrs[e.dst].add(e.src)
    a = np.zeros((n, n), dtype=np.float64)
    for i, js in enumerate(nbrs):
        if js:
            w = 1.0 / len(js)
            for j in js:
                a[i, j] = w
    return a


def build_state_graph(trajectories_pairs: Iterable[Sequence[StateActionPair]],
                      min_count: int = 10) -> StateGraph:
    """Count states and transition edges, keep those seen > ``min_count`` times.

    ``trajectories_pairs`` is an iterable of per-customer pair sequences.
    Counts are global across the corpus and order-invariant.  An edge whose
    endpoint was pruned is dropped.  Raises EmptyGraph when nothing
    survives.
    """
    if min_count < 0:
        raise ConfigError("min_count must be >= 0")
    state_counts: Counter = Counter()
    edge_counts: Counter = Counter()
    for pairs in trajectories_pairs:
        for p in pairs:
            state_counts[p.state] += 1
            if p.action.kind == TRANSITION:
                nxt = trace.apply_action(p.state, p.channel, p.action)
                edge_counts[(p.state, nxt, p.action.detail())] += 1
    kept_states = sorted(
        (s for s, c in state_counts.items() if c > min_count),
        key=lambda s: (s.primary, s.secondary),
    )
    if not kept_states:
        raise EmptyGraph(f"no state appeared more than {min_count} times")
    index = {s: i for i, s in enumerate(kept_states)}
    edges = []
    for (src, dst, action), c in edge_counts.items():
        if c > min_count and src in index and dst in index:
            edges.append(Edge(index[src], index[dst], action, c))
    edges.sort(key=lambda e: (e.src, e.dst, e.action))
    return StateGraph(kept_states, [state_counts[s] for s in kept_states], edges)


def annotate(g: StateGraph, history: Sequence[StateActionPair]) -> np.ndarray:
    """Project a history window onto the graph as an (N, 4) indicator matrix.

    States absent from the graph are skipped; if the current state was
    pruned the ego column is all zero.
    """
    feats = np.zeros((len(g.nodes), N_NODE_FEATURES), dtype=np.float64)
    for p in history:
        i = g.node_of(p.state)
        if i < 0:
            continue
        feats[i, PAST] = 1.0
        if p.action.kind == INFO:
            feats[i, INFO_GAIN] = 1.0
        elif p.action.kind == MODIFICATION:
            feats[i, MODIFIED] = 1.0
    if history:
        i = g.node_of(history[-1].state)
        if i >= 0:
            feats[i, EGO] = 1.0
    return feats


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    degree_histogram: dict


def graph_stats(g: StateGraph) -> GraphStats:
    """Node/edge counts and a histogram of total (in+out) node degree."""
    degree = Counter()
    for n in range(len(g.nodes)):
        degree[n] = 0
    for e in g.edges:
        degree[e.src] += 1
        degree[e.dst] += 1
    hist = Counter(degree.values())
    return GraphStats(node_count=len(g.nodes), edge_count=len(g.edges),
                      degree_histogram=dict(sorted(hist.items())))


# ---------------------------------------------------------------------------
# Text persistence (diff-friendly, deterministic ordering)

def render_graph(g: StateGraph) -> str:
    lines = [f"nodes {len(g.nodes)}"]
    for i, s in enumerate(g.nodes):
        lines.append(f"{i} {s.primary} {s.secondary} {g.node_counts[i]}")
    lines.append(f"edges {len(g.edges)}")
    for e in g.edges:
        lines.append(f"{e.src} {e.dst} {e.action} {e.count}")
    return "\n".join(lines) + "\n"


def save_graph(path, g: StateGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_graph(g))


def load_graph(path) -> StateGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def parse_graph(text: str) -> StateGraph:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("nodes "):
        raise ConfigError("not a graph file")
    n_nodes = int(lines[0].split()[1])
    nodes, counts = [], []
    for ln in lines[1:1 + n_nodes]:
        _, primary, secondary, count = ln.split()
        nodes.append(SessionState(primary=primary, secondary=secondary))
        counts.append(int(count))
    edge_header = lines[1 + n_nodes]
    if not edge_header.startswith("edges "):
        raise ConfigError("malformed graph file: missing edge header")
    edges = []
    for ln in lines[2 + n_nodes:]:
        src, dst, action, count = ln.split()
        edges.append(Edge(int(src), int(dst), action, int(count)))
    return StateGraph(nodes, counts, edges)
