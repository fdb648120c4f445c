"""Shared exception types."""


class EcgTalkError(Exception):
    """Base class for all package errors."""


class RecordError(EcgTalkError):
    """Invalid ECG record construction or lead selection."""


class ParseError(EcgTalkError):
    """Structured file parse error carrying a location.

    ``location`` is a human-readable offset such as ``"line 3"`` or
    ``"byte 128"`` so callers can point at the failing spot.
    """

    def __init__(self, message: str, path=None, location: str | None = None):
        self.path = str(path) if path is not None else None
        self.location = location
        prefix = ""
        if self.path:
            prefix += self.path
        if location:
            prefix += f" ({location})" if prefix else location
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingLeadError(RecordError):
    """A requested lead is absent from the record."""

    def __init__(self, lead_name: str):
        self.lead_name = lead_name
        super().__init__(f"lead {lead_name!r} not present in record")


class UnsupportedLeadConfigError(EcgTalkError):
    """Operation refused for this lead configuration (e.g. explanation on 12-lead)."""


class BackendError(EcgTalkError):
    """Language-model backend failed or is unreachable."""


class ScriptExhaustedError(BackendError):
    """A scripted backend ran out of canned outputs."""


class AgentOutputError(EcgTalkError):
    """Raw backend output does not parse into (action, thought, payload)."""


class TransitionRejected(EcgTalkError):
    """Dialogue state machine rejected a turn.  ``rule`` names the violated rule."""

    def __init__(self, rule: str, message: str):
        self.rule = rule
        super().__init__(f"[{rule}] {message}")


class ConfigError(EcgTalkError):
    """Bad configuration file or unknown keys."""


class JudgeError(EcgTalkError):
    """Judge unavailable or returned an out-of-schema verdict."""
