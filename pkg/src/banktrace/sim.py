"""Semi-synthetic generator of banking customer interaction trajectories.

Customers are typed by income, failure behavior, and digital behavior.
Each simulated session draws goals conditioned on income, draws a channel
conditioned on digital behavior (restricted to channels that can satisfy
the goals), and then walks the interface state machine goal-directedly:
login, navigation, one action per goal target, optional aimless menu
wandering, optional failure detours, log-off.

Determinism contract: every customer's event stream is derived purely from
(config.seed, customer_id), so a dataset's bytes are independent of
generation order and of how work is scheduled across processes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from . import interface, trace
from .interface import CHANNELS, MENU_CHANNELS, MENUS, OPERATIONS, ROOT, SETTINGS_CHILDREN
from .trace import (
    Action,
    Event,
    INFO,
    LOGIN,
    LOGOFF,
    ENTER_MENU,
    EXIT_MENU,
    MODIFICATION,
    OPERATION,
    TRANSITION,
)

INCOMES = ("high", "medium", "low", "standard")
FAIL_BEHAVIORS = ("rarely", "often", "no-failure")
DIGITAL_BEHAVIORS = ("traditional", "digital", "mixed")
GOAL_CATEGORIES = ("check", "change", "operational")

# Calendar origin for formatted timestamps; Event.ts counts seconds from here.
SIM_EPOCH = datetime(2022, 1, 3, 0, 0, 0)

_PROB_TOL = 1e-9


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: int
    income: str
    fail_behavior: str
    digital_behavior: str

    def __post_init__(self):
        if self.customer_id < 0:
            raise ConfigError("customer_id must be non-negative")
        if self.income not in INCOMES:
            raise ConfigError(f"unknown income {self.income!r}")
        if self.fail_behavior not in FAIL_BEHAVIORS:
            raise ConfigError(f"unknown fail behavior {self.fail_behavior!r}")
        if self.digital_behavior not in DIGITAL_BEHAVIORS:
            raise ConfigError(f"unknown digital behavior {self.digital_behavior!r}")


@dataclass(frozen=True)
class GoalLabel:
    """Active goal categories of one session; at least one must be active."""

    check_info: bool = False
    change_info: bool = False
    operational: frozenset = frozenset()

    def __post_init__(self):
        if not (self.check_info or self.change_info or self.operational):
            raise ConfigError("a session needs at least one active goal")
        unknown = set(self.operational) - set(OPERATIONS)
        if unknown:
            raise ConfigError(f"unknown operations {sorted(unknown)}")

    def categories(self) -> tuple:
        cats = []
        if self.check_info:
            cats.append("check")
        if self.change_info:
            cats.append("change")
        if self.operational:
            cats.append("operational")
        return tuple(cats)


# ---------------------------------------------------------------------------
# Configuration

DEFAULT_CHANNEL_PROBS = {
    "digital": {"web": 0.45, "mobile": 0.45, "teller": 0.03, "banker": 0.02, "atm": 0.05},
    "traditional": {"web": 0.05, "mobile": 0.05, "teller": 0.40, "banker": 0.25, "atm": 0.25},
    "mixed": {"web": 0.25, "mobile": 0.25, "teller": 0.20, "banker": 0.10, "atm": 0.20},
}

DEFAULT_FAILURE_PROBS = {"rarely": 0.05, "often": 0.30, "no-failure": 0.0}

# Income shapes the goal mix: lower incomes check and transact, higher
# incomes maintain their information and credit products.
DEFAULT_GOAL_PROBS = {
    "standard": {"check": 0.45, "change": 0.15, "operational": 0.40},
    "low": {"check": 0.50, "change": 0.12, "operational": 0.38},
    "medium": {"check": 0.38, "change": 0.32, "operational": 0.30},
    "high": {"check": 0.33, "change": 0.40, "operational": 0.27},
}

DEFAULT_PROFILE_PROBS = {
    "income": {v: 0.25 for v in INCOMES},
    "fail_behavior": {v: 1.0 / 3.0 for v in FAIL_BEHAVIORS},
    "digital_behavior": {v: 1.0 / 3.0 for v in DIGITAL_BEHAVIORS},
}

# Relative weights over the operations drawn for operational goals.  Cash
# handling is kept rare so channel statistics stay close to the configured
# channel preference even though cash forces teller/atm sessions.
OP_WEIGHTS = {
    "pay-bill": 0.30,
    "make-payment": 0.30,
    "deposit-check": 0.22,
    "exchange": 0.10,
    "deposit-cash": 0.04,
    "withdrawal": 0.04,
}

# How many info targets a check-information session looks at.
INFO_COUNT_PROBS = (0.55, 0.30, 0.15)

# Income flavor: relative weights over info targets (left) and modification
# targets (right).  Unlisted targets get the base weight.  The flavors are
# deliberately mild; income should be the hardest attribute to read back
# out of a trajectory.
_INFO_FLAVOR_BASE = 0.4
INFO_FLAVORS = {
    "high": {
        "credit-score-history": 3.0, "credit-score-summary": 2.5,
        "rewards-activity": 2.5, "rewards-use-points": 2.0, "benefits": 2.0,
        "credit-card-trans-history": 1.5, "credit-card-trans-summary": 1.5,
        "offers": 1.2, "balance": 1.0, "trans-summary": 0.8,
    },
    "medium": {
        "credit-card-trans-history": 3.0, "credit-card-trans-summary": 2.5,
        "limit-credit-card": 2.0, "benefits": 1.8, "credit-score-summary": 1.5,
        "offers": 1.2, "balance": 1.2, "trans-history": 1.0,
    },
    "low": {
        "balance": 3.0, "atm-branches": 2.0, "help-call": 1.5, "help-email": 1.2,
        "faq": 1.2, "messages": 1.2, "trans-history": 1.8, "offers": 1.0,
    },
    "standard": {
        "balance": 3.0, "trans-history": 2.5, "trans-summary": 2.0,
        "documents": 1.5, "messages": 1.2, "faq": 0.8, "offers": 0.8,
    },
}
_MOD_FLAVOR_BASE = 0.5
MOD_FLAVORS = {
    "high": {"limit-credit-card": 2.5, "alerts-definition": 2.0, "demographic": 1.0},
    "medium": {"limit-credit-card": 3.0, "alerts-definition": 1.5, "demographic": 1.2},
    "low": {"password": 2.5, "demographic": 2.0, "user-id": 1.2},
    "standard": {"demographic": 2.5, "password": 2.0, "user-id": 1.0},
}


@dataclass(frozen=True)
class SimConfig:
    """All probability tables and scale knobs of the generator."""

    channel_probs: dict = field(default_factory=lambda: _copy2(DEFAULT_CHANNEL_PROBS))
    failure_probs: dict = field(default_factory=lambda: dict(DEFAULT_FAILURE_PROBS))
    goal_probs: dict = field(default_factory=lambda: _copy2(DEFAULT_GOAL_PROBS))
    profile_probs: dict = field(default_factory=lambda: _copy2(DEFAULT_PROFILE_PROBS))
    session_count_range: tuple = (1, 100_000)
    events_per_customer_target: int = 300
    base_tick_seconds: int = 256
    extra_goal_prob: float = 0.20
    wander_prob: float = 0.30
    seed: int = 0

    def __post_init__(self):
        validate_config(self)


def _copy2(d: dict) -> dict:
    return {k: dict(v) for k, v in d.items()}


def _check_prob_vector(name: str, vec: dict, keys: tuple) -> None:
    if set(vec) != set(keys):
        raise ConfigError(f"{name}: expected keys {sorted(keys)}, got {sorted(vec)}")
    for k, p in vec.items():
        if not (0.0 <= p <= 1.0):
            raise ConfigError(f"{name}[{k}]: probability {p} outside [0, 1]")
    total = sum(vec.values())
    if abs(total - 1.0) > _PROB_TOL:
        raise ConfigError(f"{name}: probabilities sum to {total}, not 1")


def validate_config(cfg: SimConfig) -> None:
    if set(cfg.channel_probs) != set(DIGITAL_BEHAVIORS):
        raise ConfigError("channel_probs must cover every digital behavior")
    for beh, vec in cfg.channel_probs.items():
        _check_prob_vector(f"channel_probs.{beh}", vec, CHANNELS)
    if set(cfg.failure_probs) != set(FAIL_BEHAVIORS):
        raise ConfigError("failure_probs must cover every fail behavior")
    for beh, p in cfg.failure_probs.items():
        if not (0.0 <= p <= 1.0):
            raise ConfigError(f"failure_probs.{beh}: {p} outside [0, 1]")
    if set(cfg.goal_probs) != set(INCOMES):
        raise ConfigError("goal_probs must cover every income level")
    for inc, vec in cfg.goal_probs.items():
        _check_prob_vector(f"goal_probs.{inc}", vec, GOAL_CATEGORIES)
    expected = {"income": INCOMES, "fail_behavior": FAIL_BEHAVIORS,
                "digital_behavior": DIGITAL_BEHAVIORS}
    if set(cfg.profile_probs) != set(expected):
        raise ConfigError("profile_probs must cover income, fail_behavior, digital_behavior")
    for attr, keys in expected.items():
        _check_prob_vector(f"profile_probs.{attr}", cfg.profile_probs[attr], keys)
    lo, hi = cfg.session_count_range
    if not (1 <= lo <= hi):
        raise ConfigError(f"bad session_count_range {cfg.session_count_range}")
    if cfg.events_per_customer_target <= 0:
        raise ConfigError("events_per_customer_target must be > 0")
    if cfg.base_tick_seconds <= 0:
        raise ConfigError("base_tick_seconds must be > 0")
    if not (0.0 <= cfg.extra_goal_prob <= 1.0):
        raise ConfigError("extra_goal_prob outside [0, 1]")
    if not (0.0 <= cfg.wander_prob <= 1.0):
        raise ConfigError("wander_prob outside [0, 1]")
    if cfg.seed < 0:
        raise ConfigError("seed must be unsigned")


# --- plain-text key=value config files -------------------------------------

_SCALAR_KEYS = {
    "seed": int,
    "events_per_customer_target": int,
    "base_tick_seconds": int,
    "session_count_min": int,
    "session_count_max": int,
    "extra_goal_prob": float,
    "wander_prob": float,
}


def parse_config_text(text: str, extra_keys: dict | None = None) -> tuple[SimConfig, dict]:
    """Parse ``key = value`` lines into a SimConfig.

    Nested tables use dotted keys with ``name:prob`` lists, e.g.::

        channel_probs.digital = web:0.45, mobile:0.45, teller:0.03, banker:0.02, atm:0.05

    Unknown keys are an error unless listed in ``extra_keys`` (a mapping of
    key name to value parser); those are returned in the second element.
    """
    extra_keys = extra_keys or {}
    kwargs: dict = {}
    tables: dict = {"channel_probs": {}, "failure_probs": {}, "goal_probs": {},
                    "profile_probs": {}}
    extras: dict = {}
    sess_min, sess_max = None, None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in extra_keys:
            try:
                extras[key] = extra_keys[key](value)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
            continue
        if key in _SCALAR_KEYS:
            try:
                parsed = _SCALAR_KEYS[key](value)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e
            if key == "session_count_min":
                sess_min = parsed
            elif key == "session_count_max":
                sess_max = parsed
            else:
                kwargs[key] = parsed
            continue
        if "." in key:
            table, _, sub = key.partition(".")
            if table == "failure_probs":
                try:
                    tables[table][sub] = float(value)
                except ValueError as e:
                    raise ConfigError(f"line {lineno}: bad probability: {e}") from e
                continue
            if table in ("channel_probs", "goal_probs", "profile_probs"):
                tables[table][sub] = _parse_prob_list(value, lineno)
                continue
        raise ConfigError(f"line {lineno}: unknown key {key!r}")
    for name, parsed in tables.items():
        if parsed:
            merged = _copy2(getattr(SimConfig(), name))
            for sub, vec in parsed.items():
                if sub not in merged:
                    raise ConfigError(f"unknown {name} entry {sub!r}")
                merged[sub] = vec
            kwargs[name] = merged
    if sess_min is not None or sess_max is not None:
        default = SimConfig().session_count_range
        kwargs["session_count_range"] = (
            sess_min if sess_min is not None else default[0],
            sess_max if sess_max is not None else default[1],
        )
    return SimConfig(**kwargs), extras


def _parse_prob_list(value: str, lineno: int) -> dict:
    vec = {}
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" not in item:
            raise ConfigError(f"line {lineno}: expected 'name:prob' items")
        name, _, prob = item.partition(":")
        try:
            vec[name.strip()] = float(prob)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad probability: {e}") from e
    return vec


def load_config(path) -> SimConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg, _ = parse_config_text(fh.read())
    return cfg


# ---------------------------------------------------------------------------
# Trajectories and datasets

@dataclass
class Trajectory:
    customer_id: int
    events: list[Event]
    session_ids: list[int]
    goals: dict[int, GoalLabel]


@dataclass
class Dataset:
    config: SimConfig
    profiles: dict[int, CustomerProfile]
    trajectories: dict[int, Trajectory]

    def counts(self) -> dict:
        n_sessions = sum(len(t.goals) for t in self.trajectories.values())
        n_events = sum(len(t.events) for t in self.trajectories.values())
        return {"customers": len(self.profiles), "sessions": n_sessions,
                "events": n_events}


def customer_rng(seed: int, customer_id: int) -> np.random.Generator:
    """Random stream derived purely from (seed, customer_id)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, customer_id)))


def _draw(rng: np.random.Generator, vec: dict) -> str:
    names = sorted(vec)
    probs = np.array([vec[n] for n in names], dtype=float)
    probs = probs / probs.sum()
    return names[int(rng.choice(len(names), p=probs))]


def sample_profile(rng: np.random.Generator, config: SimConfig,
                   customer_id: int = 0) -> CustomerProfile:
    """Draw a customer profile; attributes are independent categoricals."""
    return CustomerProfile(
        customer_id=customer_id,
        income=_draw(rng, config.profile_probs["income"]),
        fail_behavior=_draw(rng, config.profile_probs["fail_behavior"]),
        digital_behavior=_draw(rng, config.profile_probs["digital_behavior"]),
    )


def sample_goals(profile: CustomerProfile, rng: np.random.Generator,
                 config: SimConfig) -> GoalLabel:
    """Draw one session's goals from the income-conditioned category mix.

    A second category is added with probability ``extra_goal_prob``; when
    the second draw repeats the first the session keeps a single goal, so
    category frequencies track ``goal_probs`` closely.
    """
    vec = config.goal_probs[profile.income]
    probs = np.array([vec[c] for c in GOAL_CATEGORIES], dtype=float)
    probs = probs / probs.sum()
    cats = {GOAL_CATEGORIES[int(rng.choice(3, p=probs))]}
    if rng.random() < config.extra_goal_prob:
        cats.add(GOAL_CATEGORIES[int(rng.choice(3, p=probs))])
    ops: frozenset = frozenset()
    if "operational" in cats:
        n_ops = 1 + (rng.random() < 0.25)
        names = sorted(OP_WEIGHTS)
        w = np.array([OP_WEIGHTS[n] for n in names])
        picks = rng.choice(len(names), size=n_ops, replace=False, p=w / w.sum())
        ops = frozenset(names[int(i)] for i in np.sort(picks))
    return GoalLabel(check_info="check" in cats, change_info="change" in cats,
                     operational=ops)


def _channel_supports(channel: str, goals: GoalLabel) -> bool:
    if goals.check_info and not interface.channel_info_targets(channel):
        return False
    if goals.change_info and not interface.channel_mod_targets(channel):
        return False
    ops = interface.channel_operations(channel)
    return all(op in ops for op in goals.operational)


def _flavored_choice(rng, candidates: Sequence[str], flavors: dict, base: float,
                     size: int = 1) -> list[str]:
    w = np.array([flavors.get(c, base) for c in candidates], dtype=float)
    size = min(size, len(candidates))
    picks = rng.choice(len(candidates), size=size, replace=False, p=w / w.sum())
    return [candidates[int(i)] for i in np.sort(picks)]


@dataclass(frozen=True)
class _PlanItem:
    # menu is None on flat channels and the hosting menu (or root) otherwise;
    # action is None for a pure navigation detour.
    menu: str | None
    action: Action | None


def _build_plan(profile, goals, rng, channel: str) -> list[_PlanItem]:
    items: list[_PlanItem] = []
    on_menus = channel in MENU_CHANNELS

    def host_for_info(target: str) -> str | None:
        if not on_menus:
            return None
        menus = interface.menus_hosting_info(target)
        return menus[int(rng.integers(len(menus)))] if len(menus) > 1 else menus[0]

    if goals.check_info:
        candidates = list(interface.channel_info_targets(channel))
        n = 1 + int(rng.choice(3, p=INFO_COUNT_PROBS))
        flavor = INFO_FLAVORS[profile.income]
        for t in _flavored_choice(rng, candidates, flavor, _INFO_FLAVOR_BASE, n):
            items.append(_PlanItem(host_for_info(t), Action(INFO, target=t)))
    if goals.change_info:
        candidates = list(interface.channel_mod_targets(channel))
        flavor = MOD_FLAVORS[profile.income]
        t = _flavored_choice(rng, candidates, flavor, _MOD_FLAVOR_BASE, 1)[0]
        menu = interface.menus_hosting_mod(t)[0] if on_menus else None
        items.append(_PlanItem(menu, Action(MODIFICATION, target=t)))
    for op in sorted(goals.operational):
        menu = "operations" if on_menus else None
        items.append(_PlanItem(menu, Action(OPERATION, target=op)))
    rng.shuffle(items)
    return items


def _walk_menus(profile, goals, rng, config, channel: str) -> list[tuple[str, Action]]:
    steps = [(channel, Action(TRANSITION, verb=LOGIN))]
    items = _build_plan(profile, goals, rng, channel)

    # Failure detours: aimless menu visits that achieve nothing.
    n_detours = 0
    p_fail = config.failure_probs[profile.fail_behavior]
    while n_detours < 3 and rng.random() < p_fail:
        slot = int(rng.integers(len(items) + 1))
        menu = MENUS[int(rng.integers(len(MENUS)))]
        items.insert(slot, _PlanItem(menu, None))
        n_detours += 1

    cur = ROOT
    for item in items:
        if item.action is not None and rng.random() < config.wander_prob:
            # Aimless browse: step into a random menu and straight back out.
            menu = MENUS[int(rng.integers(len(MENUS)))]
            if menu != cur:
                if menu in SETTINGS_CHILDREN and cur != "settings":
                    steps.append((channel, Action(TRANSITION, ENTER_MENU, "settings")))
                steps.append((channel, Action(TRANSITION, ENTER_MENU, menu)))
                steps.append((channel, Action(TRANSITION, EXIT_MENU, ROOT)))
                cur = ROOT
        dest = item.menu if item.menu is not None else ROOT
        if dest != cur:
            if dest == ROOT:
                steps.append((channel, Action(TRANSITION, EXIT_MENU, ROOT)))
            else:
                if cur != ROOT and rng.random() < 0.5:
                    steps.append((channel, Action(TRANSITION, EXIT_MENU, ROOT)))
                    cur = ROOT
                if dest in SETTINGS_CHILDREN and cur != "settings":
                    steps.append((channel, Action(TRANSITION, ENTER_MENU, "settings")))
                steps.append((channel, Action(TRANSITION, ENTER_MENU, dest)))
            cur = dest
        if item.action is None:
            # Detour ends back at root without doing anything.
            if cur != ROOT:
                steps.append((channel, Action(TRANSITION, EXIT_MENU, ROOT)))
                cur = ROOT
        else:
            steps.append((channel, item.action))
    steps.append((channel, Action(TRANSITION, verb=LOGOFF)))
    return steps


def _walk_flat(profile, goals, rng, config, channel: str) -> list[tuple[str, Action]]:
    steps = [(channel, Action(TRANSITION, verb=LOGIN))]
    items = _build_plan(profile, goals, rng, channel)
    actions = [item.action for item in items]
    # A failure on a flat channel shows up as a repeated attempt.
    if actions and rng.random() < config.failure_probs[profile.fail_behavior]:
        idx = int(rng.integers(len(actions)))
        actions.insert(idx, actions[idx])
    steps.extend((channel, a) for a in actions)
    steps.append((channel, Action(TRANSITION, verb=LOGOFF)))
    return steps


def simulate_session(profile: CustomerProfile, goals: GoalLabel,
                     rng: np.random.Generator, config: SimConfig,
                     start_time: int) -> list[Event]:
    """Simulate one login..log-off session satisfying every active goal.

    The channel is drawn from the digital-behavior channel preference,
    restricted to channels on which all active goals are achievable.
    Raises ConfigError when no such channel has positive probability.
    """
    if start_time < 0:
        raise ConfigError("start_time must be >= 0")
    prefs = config.channel_probs[profile.digital_behavior]
    supported = [c for c in CHANNELS if _channel_supports(c, goals)]
    weights = np.array([prefs[c] for c in supported], dtype=float)
    if not supported or weights.sum() <= 0.0:
        raise ConfigError(
            f"goals {goals.categories()} unreachable on any channel with "
            f"positive probability for {profile.digital_behavior!r}"
        )
    channel = supported[int(rng.choice(len(supported), p=weights / weights.sum()))]

    if channel in MENU_CHANNELS:
        steps = _walk_menus(profile, goals, rng, config, channel)
    else:
        steps = _walk_flat(profile, goals, rng, config, channel)

    events = []
    t = int(start_time)
    state = trace.INITIAL_STATE
    for i, (ch, action) in enumerate(steps):
        if i > 0:
            t += config.base_tick_seconds * int(rng.integers(1, 4))
        state = trace.apply_action(state, ch, action)  # guards walk legality
        events.append(Event(ts=t, channel=ch, action=action))
    return events


def simulate_customer(profile: CustomerProfile, rng: np.random.Generator,
                      config: SimConfig) -> Trajectory:
    """Concatenate sessions until the per-customer event target is reached."""
    min_sessions, max_sessions = config.session_count_range
    # Stop threshold sits just below the target so the final session's
    # overshoot stays inside target +/- 20%.
    threshold = max(1, int(round(config.events_per_customer_target * 0.97)))
    events: list[Event] = []
    session_ids: list[int] = []
    goals: dict[int, GoalLabel] = {}
    start = int(rng.integers(0, 28)) * 86400 + int(rng.integers(8 * 3600, 20 * 3600))
    sid = 0
    while (len(events) < threshold or sid < min_sessions) and sid < max_sessions:
        label = sample_goals(profile, rng, config)
        session = simulate_session(profile, label, rng, config, start)
        events.extend(session)
        session_ids.extend([sid] * len(session))
        goals[sid] = label
        sid += 1
        gap_days = int(rng.integers(1, 91))
        start = session[-1].ts + gap_days * 86400 + int(rng.integers(0, 36)) * 1200
    return Trajectory(customer_id=profile.customer_id, events=events,
                      session_ids=session_ids, goals=goals)


def simulate_one(customer_id: int, config: SimConfig) -> tuple[CustomerProfile, Trajectory]:
    rng = customer_rng(config.seed, customer_id)
    profile = sample_profile(rng, config, customer_id=customer_id)
    return profile, simulate_customer(profile, rng, config)


def simulate_dataset(n_customers: int, config: SimConfig,
                     trace_path=None, profile_path=None, jobs: int = 1) -> Dataset:
    """Simulate ``n_customers`` trajectories; optionally persist them.

    Output is identical regardless of ``jobs`` because each customer stream
    is seeded independently and results are assembled in customer-id order.
    """
    if n_customers <= 0:
        raise ConfigError("n_customers must be > 0")
    ids = list(range(n_customers))
    if jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            results = pool.starmap(simulate_one, [(cid, config) for cid in ids],
                                   chunksize=max(1, n_customers // (jobs * 4)))
    else:
        results = [simulate_one(cid, config) for cid in ids]
    profiles = {p.customer_id: p for p, _ in results}
    trajectories = {t.customer_id: t for _, t in results}
    ds = Dataset(config=config, profiles=profiles, trajectories=trajectories)
    if trace_path is not None:
        write_trace_file(trace_path, ds)
    if profile_path is not None:
        write_profile_file(profile_path, ds)
    return ds


# ---------------------------------------------------------------------------
# Persistence: line-delimited tab-separated text

def format_ts(ts: int) -> str:
    return (SIM_EPOCH + timedelta(seconds=int(ts))).strftime("%Y-%m-%d %H:%M:%S")


def parse_ts(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%d %H:%M:%S")
    return int((dt - SIM_EPOCH).total_seconds())


def write_trace_file(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("customer_id\tts\tevent\tsession_id\tgoal_check\tgoal_change\tgoal_ops\n")
        for cid in sorted(dataset.trajectories):
            t = dataset.trajectories[cid]
            for e, sid in zip(t.events, t.session_ids):
                g = t.goals[sid]
                ops = ",".join(sorted(g.operational))
                fh.write(
                    f"{cid}\t{format_ts(e.ts)}\t{trace.format_event(e)}\t{sid}\t"
                    f"{int(g.check_info)}\t{int(g.change_info)}\t{ops}\n"
                )


def write_profile_file(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("customer_id\tincome\tfail_behavior\tdigital_behavior\n")
        for cid in sorted(dataset.profiles):
            p = dataset.profiles[cid]
            fh.write(f"{cid}\t{p.income}\t{p.fail_behavior}\t{p.digital_behavior}\n")


def read_trace_file(path, strict: bool = True) -> dict[int, Trajectory]:
    """Load trajectories from a trace file written by :func:`write_trace_file`."""
    trajectories: dict[int, Trajectory] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("customer_id\t"):
            raise ConfigError(f"{path}: not a trace file")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cid_s, ts_s, raw, sid_s, check_s, change_s, ops_s = line.split("\t")
            cid, sid = int(cid_s), int(sid_s)
            event = trace.parse_event(parse_ts(ts_s), raw, strict=strict)
            t = trajectories.get(cid)
            if t is None:
                t = Trajectory(customer_id=cid, events=[], session_ids=[], goals={})
                trajectories[cid] = t
            t.events.append(event)
            t.session_ids.append(sid)
            if sid not in t.goals:
                ops = frozenset(o for o in ops_s.split(",") if o)
                t.goals[sid] = GoalLabel(check_info=check_s == "1",
                                         change_info=change_s == "1",
                                         operational=ops)
    return trajectories


def read_profile_file(path) -> dict[int, CustomerProfile]:
    profiles: dict[int, CustomerProfile] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("customer_id\t"):
            raise ConfigError(f"{path}: not a profile file")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cid_s, income, fail, digital = line.split("\t")
            profiles[int(cid_s)] = CustomerProfile(int(cid_s), income, fail, digital)
    return profiles


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
