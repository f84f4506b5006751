"""Exception types shared across the banktrace package."""


class BankTraceError(Exception):
    """Base class for all banktrace errors."""


class ConfigError(BankTraceError):
    """Invalid or unsatisfiable configuration."""


class ParseError(BankTraceError):
    """Raw event string does not match the event grammar.

    Carries the character position at which parsing failed and a reason.
    """

    def __init__(self, position: int, reason: str):
        super().__init__(f"parse error at column {position}: {reason}")
        self.position = position
        self.reason = reason


class IllegalTransition(BankTraceError):
    """Event is not legal in the current interface state."""

    def __init__(self, state, event, detail: str = ""):
        msg = f"illegal event {event!r} in state {state!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.state = state
        self.event = event


class EmptyGraph(BankTraceError):
    """No state survived the frequency threshold."""


class EmptyVocab(BankTraceError):
    """No token survived the frequency threshold."""


class DimError(BankTraceError):
    """Inconsistent tensor dimensions."""


class EmptyData(BankTraceError):
    """An operation that needs data received none."""


class BadFractions(BankTraceError):
    """Split fractions do not sum to one."""
