"""JSON encoding for models, reports, manifests and configs.

Floats are written with Python's shortest round-trip representation, which
never needs more than 17 significant digits and reloads bit-exactly.
Non-finite floats (the saturated ``a2 = ±inf`` of constant classifiers) are
encoded as the strings ``"Infinity"``, ``"-Infinity"`` and ``"NaN"``; typed
readers turn them back with :func:`ParseFloat`. numpy scalars and arrays are
converted to plain Python values.

Example:
    >>> from fairlens import jsonio
    >>>
    >>> jsonio.Marshal({"a2": float("inf"), "acc": 0.75})
    Ok('{"a2":"Infinity","acc":0.75}')
    >>> jsonio.ParseFloat("Infinity")
    inf

"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from fairlens.errors import Error, ParseError, PathError
from fairlens.result import Err, Ok, Result

__all__ = [
    "Marshal",
    "MarshalIndent",
    "Unmarshal",
    "ReadFile",
    "WriteFileAtomic",
    "ParseFloat",
    "Encodable",
]


def Encodable(v: Any) -> Any:
    """Returns v with numpy values and non-finite floats made JSON-safe."""
    if isinstance(v, dict):
        return {str(k): Encodable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [Encodable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [Encodable(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return x
    return v


def ParseFloat(v: Any) -> float:
    """Inverse of the float handling in :func:`Encodable`."""
    if isinstance(v, str):
        if v in ("Infinity", "-Infinity", "NaN"):
            return float(v)
        raise ValueError(f"not a float: {v!r}")
    return float(v)


def Marshal(v: Any) -> Result[str, Error]:
    """Returns the compact JSON encoding of v."""
    try:
        return Ok(json.dumps(Encodable(v), separators=(",", ":"), allow_nan=False))
    except (TypeError, ValueError) as e:
        return Err(Error(f"json: {e}"))


def MarshalIndent(v: Any, indent: int = 2) -> Result[str, Error]:
    """Returns the indented JSON encoding of v with sorted keys."""
    try:
        text = json.dumps(Encodable(v), indent=indent, sort_keys=True, allow_nan=False)
        return Ok(text + "\n")
    except (TypeError, ValueError) as e:
        return Err(Error(f"json: {e}"))


def Unmarshal(data: str | bytes) -> Result[Any, Error]:
    """Parses JSON-encoded data."""
    try:
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return Ok(json.loads(data))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        line = getattr(e, "lineno", 0)
        return Err(ParseError(line, f"json: {e}"))


def ReadFile(path: str | os.PathLike[str]) -> Result[Any, Error]:
    """Reads and parses a UTF-8 JSON file; an unreadable file gives ``Err(PathError)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        return Err(PathError("read", path, e))
    return Unmarshal(data)


def WriteFileAtomic(path: str | os.PathLike[str], v: Any) -> None:
    """Writes the indented encoding of v to path via temp file and rename.

    Raises PathError when the directory or file cannot be written.
    """
    text = MarshalIndent(v).unwrap()
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    except OSError as e:
        raise PathError("write", target, e) from e
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except OSError as e:
        Path(tmp).unlink(missing_ok=True)
        raise PathError("write", target, e) from e
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
