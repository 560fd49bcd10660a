"""Error types for fairlens.

Every failure the toolkit reports is an :class:`Error`. The concrete
subclasses carry a ``kind`` tag that is written into JSON error entries and
that the CLI maps to exit codes. The helpers keep Go's error-tree model:
errors can wrap other errors and ``As`` walks the chain.

Example:
    >>> from fairlens import errors
    >>>
    >>> base = errors.DependencyError("missing run reg_squared/lam=1/seed=0")
    >>> wrapped = errors.Wrap(base, "table1")
    >>> print(wrapped)
    table1: missing run reg_squared/lam=1/seed=0
    >>> errors.As(wrapped, errors.DependencyError) is base
    True

"""

from __future__ import annotations

import os
from typing import TypeVar

__all__ = [
    "Error",
    "ValidationError",
    "ParseError",
    "SchemaError",
    "ArgumentError",
    "UndefinedMetricError",
    "UndefinedCorrelationError",
    "InsufficientDataError",
    "InfeasibleConstraintError",
    "TrainingDivergedError",
    "ConfigError",
    "DependencyError",
    "RunFailuresError",
    "PathError",
    "Wrap",
    "Unwrap",
    "As",
]

T = TypeVar("T", bound=Exception)


# =============================================================================
# Error Interface
# =============================================================================


class Error(Exception):
    """Base class of all fairlens errors."""

    kind = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.message!r})"

    def to_dict(self) -> dict[str, str]:
        """Structured form used for JSON error entries."""
        return {"error": self.kind, "message": self.message}


class ValidationError(Error, ValueError):
    """A dataset or config field is outside its declared range."""

    kind = "validation"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ParseError(Error, ValueError):
    """A CSV value could not be parsed. ``row`` is the 1-based data row."""

    kind = "parse"

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class SchemaError(Error, ValueError):
    kind = "schema"


class ArgumentError(Error, ValueError):
    kind = "argument"


class UndefinedMetricError(Error):
    """A metric needs both protected groups and one is absent."""

    kind = "undefined_metric"


class UndefinedCorrelationError(Error):
    kind = "undefined_correlation"


class InsufficientDataError(Error):
    kind = "insufficient_data"


class InfeasibleConstraintError(Error):
    kind = "infeasible_constraint"


class TrainingDivergedError(Error):
    """The training loss became NaN or infinite."""

    kind = "training_diverged"

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ConfigError(Error):
    kind = "config"


class DependencyError(Error):
    """A command needs artifacts of a run that does not exist yet."""

    kind = "dependency"

    def __init__(self, run: str, message: str = "missing artifacts for run"):
        super().__init__(f"{message}: {run}")
        self.run = run


class RunFailuresError(Error):
    kind = "run_failures"


class PathError(Error):
    """A file operation failed. Like Go's fs.PathError, it unwraps to the OS error."""

    kind = "io"

    def __init__(self, op: str, path: str | os.PathLike[str], err: OSError):
        super().__init__(f"{op} {os.fspath(path)}: {err.strerror or err}")
        self.op = op
        self.path = os.fspath(path)
        self.err = err

    def Unwrap(self) -> Exception:
        return self.err


class _WrappedError(Error):
    """An error annotated with context that wraps another error."""

    def __init__(self, message: str, wrapped: Exception):
        super().__init__(message)
        self._wrapped = wrapped
        self.kind = getattr(wrapped, "kind", "error")

    def Unwrap(self) -> Exception:
        return self._wrapped


# =============================================================================
# Functions
# =============================================================================


def Wrap(err: Exception, message: str) -> Error:
    """Wrap returns an error annotating err with a message.

    Example:
        >>> print(Wrap(ConfigError("bad seed"), "loading fl.json"))
        loading fl.json: bad seed

    """
    return _WrappedError(f"{message}: {err}", err)


def Unwrap(err: Exception | None) -> Exception | None:
    """Unwrap returns the next error in err's chain, or None.

    Errors raised with ``raise X from Y`` unwrap to ``Y``.
    """
    if err is None:
        return None

    if hasattr(err, "Unwrap") and callable(err.Unwrap):
        result: Exception | None = err.Unwrap()
        return result

    cause = err.__cause__
    if isinstance(cause, Exception):
        return cause

    return None


def As(err: Exception | None, target: type[T]) -> T | None:
    """As finds the first error in err's chain that is an instance of target."""
    if err is None:
        return None

    if isinstance(err, target):
        return err

    return As(Unwrap(err), target)

