"""Event grammar, interface state tracking, and state-action featurization.

Raw events look like ``"web: enter menu credit-card"`` — a channel prefix
followed by a verb phrase.  This module parses them into typed actions,
folds them through the interface state machine to recover the customer's
(primary, secondary) location, and turns whole trajectories into the
state-action pair sequences every downstream stage consumes.

All functions here are pure; parsed values are immutable and safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .errors import IllegalTransition, ParseError
from . import interface
from .interface import CHANNELS, LOGGED_OUT, MENU_CHANNELS, MENUS, ROOT

# Action classes.
TRANSITION = "transition"
INFO = "info"
MODIFICATION = "modification"
OPERATION = "operation"

# Transition verbs.
LOGIN = "login"
LOGOFF = "log-off"
ENTER_MENU = "enter-menu"
EXIT_MENU = "exit-menu"

# Placeholder target produced by lenient parsing for unseen nouns.
OOV_TARGET = "<oov>"

_EXIT_TARGETS = (ROOT,) + MENUS


@dataclass(frozen=True)
class Action:
    """One customer action: a transition, info gain, modification, or operation.

    ``verb`` is set only for transitions; ``target`` is the menu, info
    subject, modification subject, or operation name.
    """

    kind: str
    verb: str | None = None
    target: str | None = None

    def detail(self) -> str:
        """Canonical compact rendering, e.g. ``enter-menu:settings``."""
        if self.kind == TRANSITION:
            if self.target is None:
                return self.verb
            return f"{self.verb}:{self.target}"
        return self.target


@dataclass(frozen=True)
class SessionState:
    """Where the customer currently is: channel (or logged out) and menu."""

    primary: str = LOGGED_OUT
    secondary: str = ROOT

    def logged_in(self) -> bool:
        return self.primary != LOGGED_OUT


INITIAL_STATE = SessionState()


@dataclass(frozen=True)
class Event:
    """A timestamped interface interaction.

    ``ts`` counts seconds since the dataset epoch.  ``raw`` preserves the
    exact surface string when the event came from a parse, so formatting
    round-trips byte for byte even through alias spellings.
    """

    ts: int
    channel: str
    action: Action
    raw: str | None = None


@dataclass(frozen=True)
class StateActionPair:
    """The state the customer was in and the action they took there."""

    state: SessionState
    channel: str
    action: Action


def parse_event(ts: int, raw: str, strict: bool = True) -> Event:
    """Parse a raw event string into a typed :class:`Event`.

    In strict mode (the default) unknown channels, verbs, or targets raise
    :class:`ParseError`.  With ``strict=False`` a well-formed phrase with an
    unseen noun parses to the distinguished ``<oov>`` target instead, so the
    pipeline tolerates vocabulary growth in the feed.
    """
    head, sep, rest = raw.partition(": ")
    if not sep:
        raise ParseError(0, "expected '<channel>: <action>'")
    if head not in CHANNELS:
        raise ParseError(0, f"unknown channel {head!r}")
    pos = len(head) + 2
    action = _parse_phrase(rest, pos, strict)
    return Event(ts=ts, channel=head, action=action, raw=raw)


def _parse_phrase(rest: str, pos: int, strict: bool) -> Action:
    if rest == LOGIN:
        return Action(TRANSITION, verb=LOGIN)
    if rest == LOGOFF:
        return Action(TRANSITION, verb=LOGOFF)
    for prefix, verb in (("enter menu ", ENTER_MENU), ("enter ", ENTER_MENU),
                         ("exit menu ", EXIT_MENU), ("exit ", EXIT_MENU)):
        if rest.startswith(prefix):
            target = rest[len(prefix):]
            allowed = MENUS if verb == ENTER_MENU else _EXIT_TARGETS
            if target not in allowed:
                if not strict:
                    target = OOV_TARGET
                else:
                    raise ParseError(pos + len(prefix), f"unknown menu {target!r}")
            return Action(TRANSITION, verb=verb, target=target)
    if rest.startswith("get information on "):
        target = rest[len("get information on "):]
        target = interface.INFO_ALIASES.get(target, target)
        if target not in interface.INFO_TARGETS:
            if not strict:
                target = OOV_TARGET
            else:
                raise ParseError(pos + 19, f"unknown info target {target!r}")
        return Action(INFO, target=target)
    if rest.startswith("change information on "):
        target = rest[len("change information on "):]
        if target not in interface.MOD_TARGETS:
            if not strict:
                target = OOV_TARGET
            else:
                raise ParseError(pos + 22, f"unknown modification target {target!r}")
        return Action(MODIFICATION, target=target)
    if rest in interface.OPERATIONS:
        return Action(OPERATION, target=rest)
    if not strict and rest and " " not in rest:
        return Action(OPERATION, target=OOV_TARGET)
    raise ParseError(pos, f"unrecognized action phrase {rest!r}")


def format_event(e: Event) -> str:
    """Render an event back to its raw string form.

    Parsed events reproduce their original surface spelling exactly;
    programmatically built events get the canonical spelling.
    """
    if e.raw is not None:
        return e.raw
    a = e.action
    if a.kind == TRANSITION:
        if a.verb in (LOGIN, LOGOFF):
            phrase = a.verb
        elif a.verb == ENTER_MENU:
            phrase = f"enter menu {a.target}"
        else:
            phrase = f"exit menu {a.target if a.target is not None else ROOT}"
    elif a.kind == INFO:
        phrase = f"get information on {a.target}"
    elif a.kind == MODIFICATION:
        phrase = f"change information on {a.target}"
    else:
        phrase = a.target
    return f"{e.channel}: {phrase}"


def apply_action(state: SessionState, channel: str, action: Action) -> SessionState:
    """Fold one action into the state; raises IllegalTransition if not legal.

    Transitions move the customer; info, modification, and operation
    actions leave the state unchanged but must be available at it.
    """
    if action.kind == TRANSITION:
        if action.verb == LOGIN:
            if state.logged_in():
                raise IllegalTransition(state, action, "already logged in")
            return SessionState(primary=channel, secondary=ROOT)
        if not state.logged_in():
            raise IllegalTransition(state, action, "not logged in")
        if channel != state.primary:
            raise IllegalTransition(state, action, f"wrong channel {channel!r}")
        if action.verb == LOGOFF:
            return INITIAL_STATE
        if state.primary not in MENU_CHANNELS:
            raise IllegalTransition(state, action, "channel has no menus")
        if action.verb == ENTER_MENU:
            return SessionState(primary=state.primary, secondary=action.target)
        # exit-menu always returns to the root section.
        if state.secondary == ROOT:
            raise IllegalTransition(state, action, "already at root")
        return SessionState(primary=state.primary, secondary=ROOT)

    if not state.logged_in():
        raise IllegalTransition(state, action, "not logged in")
    if channel != state.primary:
        raise IllegalTransition(state, action, f"wrong channel {channel!r}")
    if action.target == OOV_TARGET:
        return state
    if action.kind == INFO:
        available = interface.info_targets_at(state.primary, state.secondary)
    elif action.kind == MODIFICATION:
        available = interface.mod_targets_at(state.primary, state.secondary)
    else:
        available = interface.ops_at(state.primary, state.secondary)
    if action.target not in available:
        raise IllegalTransition(state, action, "action not available here")
    return state


def apply_action_lenient(state: SessionState, channel: str, action: Action) -> SessionState:
    """Like :func:`apply_action` but leaves the state unchanged when illegal.

    Used when folding model-predicted actions, which carry no legality
    guarantee.
    """
    try:
        return apply_action(state, channel, action)
    except IllegalTransition:
        return state


def fold_state(state: SessionState, e: Event) -> SessionState:
    return apply_action(state, e.channel, e.action)


def trajectory_to_pairs(events: Sequence[Event]) -> list[StateActionPair]:
    """Convert an event sequence into state-action pairs.

    Pair ``i`` holds the state *before* event ``i`` together with the
    event's action.  Parse or legality failures are re-raised with the
    offending event index attached.
    """
    pairs = []
    state = INITIAL_STATE
    for i, e in enumerate(events):
        pairs.append(StateActionPair(state=state, channel=e.channel, action=e.action))
        try:
            state = fold_state(state, e)
        except IllegalTransition as err:
            raise IllegalTransition(state, e, f"at event index {i}") from err
    return pairs


def windows(
    pairs: Sequence[StateActionPair], n_h: int, stride: int = 1
) -> list[tuple[Sequence[StateActionPair], Sequence[StateActionPair]]]:
    """Slide a length-``n_h`` history window over one customer's pairs.

    Each window is paired with the remaining continuation of the same
    trajectory (possibly empty).  Sequences shorter than ``n_h`` yield no
    windows; windows never cross customer boundaries because the input is
    a single customer's pairs.
    """
    if n_h < 1 or stride < 1:
        raise ValueError("n_h and stride must be >= 1")
    out = []
    for start in range(0, len(pairs) - n_h + 1, stride):
        out.append((pairs[start:start + n_h], pairs[start + n_h:]))
    return out


def write_pairs_file(path, pairs_by_customer: dict[int, Sequence[StateActionPair]]) -> None:
    """Export featurized pairs, one per line, tab-separated.

    Columns: customer_id, index, primary, secondary, action class, action
    detail.  Deterministic ordering by customer id then index.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("customer_id\tindex\tprimary\tsecondary\tclass\tdetail\n")
        for cid in sorted(pairs_by_customer):
            for i, p in enumerate(pairs_by_customer[cid]):
                fh.write(
                    f"{cid}\t{i}\t{p.state.primary}\t{p.state.secondary}\t"
                    f"{p.action.kind}\t{p.action.detail()}\n"
                )


def iter_session_slices(events: Sequence[Event]) -> Iterator[tuple[int, int]]:
    """Yield (start, end) half-open index ranges of login..log-off sessions."""
    start = None
    for i, e in enumerate(events):
        if e.action.kind == TRANSITION and e.action.verb == LOGIN:
            start = i
        elif e.action.kind == TRANSITION and e.action.verb == LOGOFF and start is not None:
            yield (start, i + 1)
            start = None
