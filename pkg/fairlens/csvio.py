r"""CSV reading and writing for datasets, scores and trade-off tables.

The Reader/Writer pair follows Go's encoding/csv: ``Read`` returns one
record at a time as a :class:`~fairlens.result.Result` and records must all
have the header's field count. Errors cite the 1-based data row: the header
is row 0.

Example:
    >>> from fairlens import csvio
    >>>
    >>> csvio.Reader("a,b\n1,2\n").ReadAll()
    Ok([['a', 'b'], ['1', '2']])

"""

from __future__ import annotations

import csv as _csv
import io
import os
import tempfile
from pathlib import Path
from typing import IO, Any

from fairlens.errors import Error, ParseError, PathError
from fairlens.result import Err, Ok, Result

__all__ = [
    "Reader",
    "Writer",
    "NewWriter",
    "ReadFile",
    "WriteFileAtomic",
    "FormatFloat",
    "EOF",
]


class _EOF(Error):
    kind = "eof"


EOF = _EOF("EOF")


def FormatFloat(x: float) -> str:
    """Shortest decimal that round-trips x exactly (at most 17 significant digits)."""
    return repr(float(x))


class Reader:
    """A Reader reads records from a CSV-encoded stream.

    ``Row`` is the row number of the last record returned, the header being
    row 0 and data rows counting from 1.
    """

    def __init__(self, r: str | IO[str]):
        if isinstance(r, str):
            r = io.StringIO(r)
        self._reader = _csv.reader(r, delimiter=",", quotechar='"')
        self.FieldsPerRecord = 0
        self.Row = -1

    def Read(self) -> Result[list[str], Error]:
        """Reads one record. Returns ``Err(EOF)`` at the end of input."""
        try:
            record: list[str] = next(self._reader)
        except StopIteration:
            return Err(EOF)
        except _csv.Error as e:
            return Err(ParseError(self.Row + 1, str(e)))
        self.Row += 1

        if self.FieldsPerRecord == 0:
            self.FieldsPerRecord = len(record)
        elif len(record) != self.FieldsPerRecord:
            return Err(
                ParseError(
                    self.Row,
                    f"wrong number of fields ({len(record)}, want {self.FieldsPerRecord})",
                )
            )
        return Ok(record)

    def ReadAll(self) -> Result[list[list[str]], Error]:
        records = []
        while True:
            result = self.Read()
            if result.is_err():
                err = result.err()
                if err is EOF:
                    break
                assert err is not None
                return Err(err)
            records.append(result.unwrap())
        return Ok(records)


class Writer:
    """A Writer writes records using CSV encoding with ``\\n`` line endings."""

    def __init__(self, w: IO[str]):
        self._dest = w
        self._writer: Any = _csv.writer(
            w, delimiter=",", lineterminator="\n", quotechar='"', quoting=_csv.QUOTE_MINIMAL
        )

    def Write(self, record: list[str]) -> None:
        self._writer.writerow(record)

    def WriteAll(self, records: list[list[str]]) -> None:
        self._writer.writerows(records)
        self.Flush()

    def Flush(self) -> None:
        self._dest.flush()


def NewWriter(w: IO[str]) -> Writer:
    return Writer(w)


def ReadFile(path: str | os.PathLike[str]) -> Result[list[list[str]], Error]:
    """Reads a whole UTF-8 CSV file into records.

    A missing or unreadable file gives ``Err(PathError)``; bytes that are not
    UTF-8 give ``Err(ParseError)`` naming the row they sit on.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        return Err(PathError("read", path, e))
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        row = raw.count(b"\n", 0, e.start)
        return Err(ParseError(row, f"{os.fspath(path)}: invalid UTF-8 at byte {e.start}"))
    return Reader(io.StringIO(text, newline="")).ReadAll()


def WriteFileAtomic(path: str | os.PathLike[str], records: list[list[str]]) -> None:
    """Writes records to path via a temp file in the same directory and a rename.

    Raises PathError when the directory or file cannot be written.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    except OSError as e:
        raise PathError("write", target, e) from e
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            NewWriter(fh).WriteAll(records)
        os.replace(tmp, target)
    except OSError as e:
        Path(tmp).unlink(missing_ok=True)
        raise PathError("write", target, e) from e
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
