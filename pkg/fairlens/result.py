"""Result values for fallible I/O and sweep runs.

CSV rows, JSON documents and sweep runs come back as ``Result[T, E]``
instead of raising, so a sweep can record a failed run and keep going.
Numeric library code raises :mod:`fairlens.errors` exceptions; ``attempt``
turns such a call into a Result at the boundary.

Example:
    >>> from fairlens.result import Ok, Err
    >>> from fairlens import jsonio
    >>>
    >>> match jsonio.Unmarshal('{"a": 1}'):
    ...     case Ok(doc): print(doc["a"])
    ...     case Err(e): print(f"bad json: {e}")
    1

"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import Any, Generic, NoReturn, TypeVar

from fairlens import errors

__all__ = ["Ok", "Err", "Result", "attempt"]

T = TypeVar("T")
E = TypeVar("E", bound=Exception)


@dataclass(frozen=True, slots=True)
class Ok(Generic[T]):
    """A finished computation and its value."""

    value: T

    __match_args__ = ("value",)

    def is_ok(self) -> bool:
        return True

    def is_err(self) -> bool:
        return False

    def unwrap(self) -> T:
        return self.value

    def err(self) -> None:
        return None

    def __bool__(self) -> bool:
        return True

    def __repr__(self) -> str:
        return f"Ok({self.value!r})"


@dataclass(frozen=True, slots=True)
class Err(Generic[E]):
    """A failed computation. ``unwrap`` re-raises the error.

    Example:
        >>> from fairlens.errors import ParseError
        >>> Err(ParseError(3, "bad value")).err().row
        3

    """

    error: E

    __match_args__ = ("error",)

    def is_ok(self) -> bool:
        return False

    def is_err(self) -> bool:
        return True

    def unwrap(self) -> NoReturn:
        raise self.error

    def err(self) -> E:
        return self.error

    def __bool__(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"Err({self.error!r})"


Result = Ok[T] | Err[E]


def attempt(fn: Callable[..., T], *args: Any, context: str = "") -> Result[T, errors.Error]:
    """Calls ``fn(*args)``; fairlens errors and OS errors become ``Err``.

    OS errors are wrapped with ``context`` so the message names the run or
    file that failed. Anything else propagates.
    """
    try:
        return Ok(fn(*args))
    except errors.Error as e:
        return Err(e)
    except OSError as e:
        return Err(errors.Wrap(e, context) if context else errors.Error(str(e)))

