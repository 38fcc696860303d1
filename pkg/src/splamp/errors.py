"""Error types shared across modules, mapped to CLI exit codes."""


class SplampError(Exception):
    """Base class for all tool errors."""


class InvalidInputError(SplampError):
    """Malformed or inconsistent input (spec, weights, table, flags). Exit code 2."""


class InfeasibleError(SplampError):
    """A latency target below the mandatory floor. Exit code 3."""

    def __init__(self, message: str, floor: int):
        super().__init__(message)
        self.floor = floor
