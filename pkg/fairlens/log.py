"""Progress logging for sweeps, training and audits.

A small Go-style logger: ``Printf`` writes one line per call, stderr by
default, with a timestamp header chosen by the flags. Sweep workers log
through children made with :meth:`Logger.With`, which add a run prefix and
share their parent's stream, lock and quiet switch, so a single ``--quiet``
silences every run and lines from different worker threads never
interleave.

Example:
    >>> import io
    >>> from fairlens import log
    >>>
    >>> buf = io.StringIO()
    >>> logger = log.New(buf, "sweep: ", 0)
    >>> logger.With("lipton/seed0: ").Printf("%d bounds", 3)
    >>> buf.getvalue()
    'sweep: lipton/seed0: 3 bounds\\n'

"""

from __future__ import annotations

import sys
import threading
from datetime import datetime
from typing import Any, TextIO

__all__ = [
    "Logger",
    "New",
    "Default",
    "Printf",
    "SetQuiet",
    "Ldate",
    "Ltime",
    "Lmsgprefix",
    "LstdFlags",
]

Ldate = 1 << 0
Ltime = 1 << 1
Lmsgprefix = 1 << 6
LstdFlags = Ldate | Ltime

_CLOCK = Ldate | Ltime


class _Sink:
    """Output state shared by a logger and all of its children.

    ``out=None`` writes to whatever ``sys.stderr`` is at the time.
    """

    __slots__ = ("out", "quiet", "lock")

    def __init__(self, out: TextIO | None):
        self.out = out
        self.quiet = False
        self.lock = threading.Lock()

    def write(self, line: str) -> None:
        if self.quiet:
            return
        out = self.out or sys.stderr
        with self.lock:
            out.write(line)
            out.flush()


class Logger:
    """A line logger. Children from :meth:`With` write to the same sink."""

    def __init__(
        self,
        out: TextIO | None = None,
        prefix: str = "",
        flag: int = LstdFlags,
        *,
        _sink: _Sink | None = None,
    ):
        self._sink = _sink or _Sink(out)
        self._prefix = prefix
        self._flag = flag

    def _clock(self) -> str:
        now = datetime.now()
        fields = []
        if self._flag & Ldate:
            fields.append(now.strftime("%Y/%m/%d"))
        if self._flag & Ltime:
            fields.append(now.strftime("%H:%M:%S"))
        return " ".join(fields)

    def _output(self, s: str) -> None:
        if self._sink.quiet:
            return
        if not self._flag & _CLOCK:
            line = self._prefix + s
        elif self._flag & Lmsgprefix:
            line = f"{self._clock()} {self._prefix}{s}"
        else:
            lead = self._prefix.rstrip()
            line = f"{lead} {self._clock()} {s}" if lead else f"{self._clock()} {s}"
        self._sink.write(line if line.endswith("\n") else line + "\n")

    def Printf(self, format: str, *v: Any) -> None:
        """Printf writes a %-formatted line; without arguments format is literal."""
        self._output(format % v if v else format)

    def With(self, prefix: str) -> Logger:
        """A child logger whose lines carry ``prefix`` after this logger's own."""
        return Logger(prefix=self._prefix + prefix, flag=self._flag, _sink=self._sink)

    def SetQuiet(self, quiet: bool) -> None:
        """SetQuiet discards all output of this logger and its children."""
        self._sink.quiet = quiet


# Run prefixes from With go after the clock.
_std = Logger(None, "", LstdFlags | Lmsgprefix)


def Default() -> Logger:
    """Default returns the logger used by the package-level functions."""
    return _std


def New(out: TextIO, prefix: str, flag: int) -> Logger:
    return Logger(out, prefix, flag)


def SetQuiet(quiet: bool) -> None:
    _std.SetQuiet(quiet)


def Printf(format: str, *v: Any) -> None:
    _std.Printf(format, *v)
