"""Exception hierarchy for soas.

Each error carries the process exit code the CLI uses when it escapes a command.
"""

from __future__ import annotations


class SoasError(Exception):
    exit_code = 1


class ConfigError(SoasError):
    pass


class EmptyRequest(SoasError):
    exit_code = 2

    def __init__(self, message: str = "Request text is empty.") -> None:
        super().__init__(message)


class NoAgentsAvailable(SoasError):
    exit_code = 3

    def __init__(self, domain: str) -> None:
        super().__init__(f'No live agents registered for domain "{domain}".')
        self.domain = domain


class NoAgentsResponded(SoasError):
    exit_code = 4

    def __init__(self, outcomes: dict[str, str]) -> None:
        summary = ", ".join(f"{agent_id}={outcome}" for agent_id, outcome in sorted(outcomes.items()))
        super().__init__(f"No agent answered successfully ({summary}).")
        self.outcomes = dict(outcomes)


class InvalidDescriptor(SoasError):
    pass


class NoAgentsGiven(SoasError):
    def __init__(self) -> None:
        super().__init__("fan_out needs at least one agent.")


# --- wire codec ---


class FrameError(SoasError):
    pass


class FrameTooLarge(FrameError):
    def __init__(self, length: int, cap: int) -> None:
        super().__init__(f"Frame of {length} bytes exceeds the {cap} byte cap.")
        self.length = length
        self.cap = cap


class TruncatedFrame(FrameError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"Stream ended after {got} of {expected} bytes.")
        self.expected = expected
        self.got = got


class MalformedPayload(FrameError):
    pass


# --- storage ---


class RequestIdMismatch(SoasError):
    def __init__(self, expected: str, got: str) -> None:
        super().__init__(f'Response belongs to request "{got}", not "{expected}".')


class StorageFailure(SoasError):
    pass


# --- rendering ---


class UnsupportedFormat(SoasError):
    def __init__(self, fmt: str) -> None:
        super().__init__(f'Unsupported output format "{fmt}" (use json or table).')
        self.format = fmt


# --- sim-agents / file loading ---


class MalformedLine(SoasError):
    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no


class IoFailure(SoasError):
    pass


class BindFailure(SoasError):
    pass


class RegistrationFailure(SoasError):
    pass
