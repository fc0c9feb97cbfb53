"""Exception hierarchy shared by all pinnflow subpackages."""

from __future__ import annotations


class PinnflowError(Exception):
    """Base class for every error raised by pinnflow."""


class ConfigurationError(PinnflowError):
    """Invalid or inconsistent run configuration."""


class DimensionMismatchError(PinnflowError):
    """Array shapes disagree with the network or point-set dimensions."""


class UnsupportedConfigurationError(PinnflowError):
    """A requested combination of options cannot be evaluated."""


class ContractViolationError(PinnflowError):
    """A caller handed over data that does not meet an operation's precondition."""


class NonFiniteLossError(PinnflowError):
    """The loss evaluated to NaN or infinity."""

    def __init__(self, message: str, batch_index: int | None = None) -> None:
        self.batch_index = batch_index
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)


class NonFiniteGradientError(PinnflowError):
    """A gradient handed to an optimizer contains NaN or infinity."""

    def __init__(self, index: int) -> None:
        self.index = index
        super().__init__(f"non-finite gradient entry at parameter index {index}")


class PointSetError(PinnflowError):
    """Malformed collocation or reference CSV input."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointMismatchError(PinnflowError):
    """A checkpoint header is incompatible with the requested layout."""

    def __init__(self, diff: dict[str, tuple[object, object]]) -> None:
        self.diff = diff
        lines = [f"  {key}: checkpoint={old!r} requested={new!r}" for key, (old, new) in diff.items()]
        super().__init__("checkpoint layout mismatch:\n" + "\n".join(lines))


class EvaluationError(PinnflowError):
    """Post-processing quantity is undefined for the given inputs."""
