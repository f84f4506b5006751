"""Model-ready encodings: token vocabulary, one-hot steps, bag-of-words,
and graph-annotated windows.

A state-action pair is tokenized as ``channel|class|detail`` (for example
``web|info|balance`` or ``mobile|transition|enter-menu:settings``).  The
token deliberately omits the secondary location: recovering "where am I"
from token history is exactly what the graph annotation short-circuits.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyVocab
from .graph import StateGraph, annotate
from .trace import Action, INFO, MODIFICATION, OPERATION, StateActionPair, TRANSITION

OOV_INDEX = 0
OOV_TOKEN = "<oov>"

MODES = ("bow", "graph")


def token_of(pair: StateActionPair) -> str:
    return f"{pair.channel}|{pair.action.kind}|{pair.action.detail()}"


def action_of_token(token: str) -> tuple[str, Action] | None:
    """Invert :func:`token_of`; returns None for the OOV token."""
    if token == OOV_TOKEN:
        return None
    channel, kind, detail = token.split("|")
    if kind == TRANSITION:
        verb, sep, target = detail.partition(":")
        return channel, Action(TRANSITION, verb=verb, target=target if sep else None)
    return channel, Action(kind, target=detail)


class Vocab:
    """Bijection between tokens and indices ``1..|V|``; index 0 is OOV.

    Built only from training-split data; encoding anything else maps
    unknown tokens to OOV and never mutates the vocabulary.
    """

    def __init__(self, tokens: Sequence[str]):
        self.tokens = (OOV_TOKEN,) + tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        # Size includes the reserved OOV slot.
        return len(self.tokens)

    def index_of(self, token: str) -> int:
        return self.index.get(token, OOV_INDEX)

    def token_at(self, i: int) -> str:
        return self.tokens[i]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocab(train_pairs: Iterable[StateActionPair], min_count: int = 1) -> Vocab:
    """Tokens with count >= min_count, sorted lexicographically, indexed from 1."""
    counts = Counter(token_of(p) for p in train_pairs)
    kept = sorted(t for t, c in counts.items() if c >= min_count)
    if not kept:
        raise EmptyVocab(f"no token reached count {min_count}")
    return Vocab(kept)


def one_hot(pair: StateActionPair, v: Vocab) -> np.ndarray:
    vec = np.zeros(len(v), dtype=np.float64)
    vec[v.index_of(token_of(pair))] = 1.0
    return vec


def bag_of_words(prefix: Sequence[StateActionPair], v: Vocab) -> np.ndarray:
    counts = np.zeros(len(v), dtype=np.float64)
    for p in prefix:
        counts[v.index_of(token_of(p))] += 1.0
    return counts


@dataclass
class EncodedWindow:
    """One model input: per-step vectors plus optional graph annotations.

    ``steps`` has shape (n_H, 2|V|) in bow mode (one-hot block then prefix
    bag-of-words block) and (n_H, |V|) in graph mode, where the per-step
    (N, 4) ``annotations`` feed the graph network.
    """

    mode: str
    steps: np.ndarray
    annotations: np.ndarray | None = None
    label: Any = None


def encode_window(window: Sequence[StateActionPair], v: Vocab,
                  g: StateGraph | None = None, mode: str = "bow",
                  label: Any = None) -> EncodedWindow:
    """Encode one history window for the models.

    bow mode: step t = one_hot(pair_t) concatenated with bag-of-words counts
    of pairs 1..t.  graph mode: step t = one_hot(pair_t) plus the annotation
    matrix of the prefix 1..t (ego at pair_t).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    n = len(window)
    hot = np.zeros((n, len(v)), dtype=np.float64)
    for t, p in enumerate(window):
        hot[t, v.index_of(token_of(p))] = 1.0
    if mode == "bow":
        bow = np.cumsum(hot, axis=0)
        return EncodedWindow(mode=mode, steps=np.concatenate([hot, bow], axis=1),
                             label=label)
    if g is None:
        raise ConfigError("graph mode requires a state graph")
    ann = np.zeros((n, len(g), 4), dtype=np.float64)
    for t in range(n):
        ann[t] = annotate(g, window[:t + 1])
    return EncodedWindow(mode=mode, steps=hot, annotations=ann, label=label)
