"""Vocabulary and action-availability tables of the simulated bank interfaces.

A customer is either logged out or logged into one channel.  The web and
mobile channels expose a tree of menus one level deep (the "secondary
location"); the in-person and ATM channels are flat and everything happens
at their root.  These tables are the single source of truth for what can
be done where: the simulator walks them, the featurizer validates against
them, and the state graph is built over the states they induce.
"""

CHANNELS = ("web", "mobile", "teller", "banker", "atm")
MENU_CHANNELS = ("web", "mobile")
FLAT_CHANNELS = ("teller", "banker", "atm")

LOGGED_OUT = "logged-out"
ROOT = "root-section"

MENUS = (
    "account-documents",
    "alerts-maintenance",
    "contact-us",
    "credit-card",
    "credit-score",
    "offers",
    "operations",
    "profile-maintenance",
    "rewards",
    "settings",
)

# Menus nested under settings; the simulator routes through settings to
# reach them, although entering any menu directly is grammatically legal.
SETTINGS_CHILDREN = ("alerts-maintenance", "profile-maintenance")

INFO_TARGETS = (
    "alerts-definition",
    "alerts-history",
    "atm-branches",
    "balance",
    "benefits",
    "credit-card-trans-history",
    "credit-card-trans-summary",
    "credit-score-history",
    "credit-score-summary",
    "demographic",
    "documents",
    "faq",
    "help-call",
    "help-email",
    "limit-credit-card",
    "messages",
    "offers",
    "rewards-activity",
    "rewards-use-points",
    "trans-history",
    "trans-summary",
)

MOD_TARGETS = (
    "alerts-definition",
    "demographic",
    "limit-credit-card",
    "password",
    "user-id",
)

OPERATIONS = (
    "deposit-cash",
    "deposit-check",
    "exchange",
    "make-payment",
    "pay-bill",
    "withdrawal",
)

# Longhand spellings seen in raw feeds; canonical form is the short one.
INFO_ALIASES = {
    "credit-card-transaction-history": "credit-card-trans-history",
    "credit-card-transaction-summary": "credit-card-trans-summary",
}

# ---------------------------------------------------------------------------
# Action availability on web/mobile, per secondary location.

MENU_INFO = {
    ROOT: ("atm-branches", "balance", "messages", "trans-history", "trans-summary"),
    "account-documents": ("documents",),
    "alerts-maintenance": ("alerts-definition", "alerts-history"),
    "contact-us": ("faq", "help-call", "help-email"),
    "credit-card": (
        "benefits",
        "credit-card-trans-history",
        "credit-card-trans-summary",
        "limit-credit-card",
    ),
    "credit-score": ("credit-score-history", "credit-score-summary"),
    "offers": ("offers",),
    "operations": (),
    "profile-maintenance": ("demographic",),
    "rewards": ("benefits", "rewards-activity", "rewards-use-points"),
    "settings": (),
}

MENU_MODS = {
    ROOT: (),
    "account-documents": (),
    "alerts-maintenance": ("alerts-definition",),
    "contact-us": (),
    "credit-card": ("limit-credit-card",),
    "credit-score": (),
    "offers": (),
    "operations": (),
    "profile-maintenance": ("demographic", "password", "user-id"),
    "rewards": (),
    "settings": (),
}

MENU_OPS = {
    "operations": ("deposit-check", "exchange", "make-payment", "pay-bill"),
}

# ---------------------------------------------------------------------------
# Action availability on the flat channels (everything at root).

FLAT_INFO = {
    "teller": ("balance", "trans-history", "trans-summary"),
    "banker": ("balance", "benefits", "offers", "trans-summary"),
    "atm": ("balance",),
}

FLAT_MODS = {
    "teller": ("demographic",),
    "banker": ("demographic", "limit-credit-card"),
    "atm": ("password",),
}

FLAT_OPS = {
    "teller": OPERATIONS,
    "banker": ("deposit-check", "exchange", "make-payment", "pay-bill"),
    "atm": ("deposit-cash", "deposit-check", "make-payment", "pay-bill", "withdrawal"),
}


def info_targets_at(primary: str, secondary: str) -> tuple:
    if primary in MENU_CHANNELS:
        return MENU_INFO.get(secondary, ())
    return FLAT_INFO.get(primary, ())


def mod_targets_at(primary: str, secondary: str) -> tuple:
    if primary in MENU_CHANNELS:
        return MENU_MODS.get(secondary, ())
    return FLAT_MODS.get(primary, ())


def ops_at(primary: str, secondary: str) -> tuple:
    if primary in MENU_CHANNELS:
        return MENU_OPS.get(secondary, ())
    return FLAT_OPS.get(primary, ())


def channel_info_targets(channel: str) -> tuple:
    """All info targets reachable anywhere on a channel."""
    if channel in MENU_CHANNELS:
        seen = []
        for targets in MENU_INFO.values():
            seen.extend(t for t in targets if t not in seen)
        return tuple(sorted(seen))
    return FLAT_INFO[channel]


def channel_mod_targets(channel: str) -> tuple:
    if channel in MENU_CHANNELS:
        seen = []
        for targets in MENU_MODS.values():
            seen.extend(t for t in targets if t not in seen)
        return tuple(sorted(seen))
    return FLAT_MODS[channel]


def channel_operations(channel: str) -> tuple:
    if channel in MENU_CHANNELS:
        return MENU_OPS["operations"]
    return FLAT_OPS[channel]


def channels_for_operation(op: str) -> tuple:
    return tuple(c for c in CHANNELS if op in channel_operations(c))


def menus_hosting_info(target: str) -> tuple:
    """Secondary locations (incl. root) where an info action is available."""
    return tuple(m for m, ts in MENU_INFO.items() if target in ts)


def menus_hosting_mod(target: str) -> tuple:
    return tuple(m for m, ts in MENU_MODS.items() if target in ts)
