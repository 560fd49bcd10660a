"""Run manifest: which runs of a sweep finished, where their artifacts live.

The manifest is one JSON file in the output directory. Only the thread that
owns the :class:`RunManifest` writes it; workers hand their results back and
the owner records them. Each write is atomic.

A run is reusable when its entry is ``ok``, its fingerprint matches the
current configuration and every file it references still exists.
"""

from __future__ import annotations

import datetime as _dt
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from fairlens import __version__, jsonio
from fairlens.errors import DependencyError, Error, SchemaError

__all__ = ["RunEntry", "RunManifest", "MANIFEST_NAME", "STATUS_OK", "STATUS_FAILED"]

MANIFEST_NAME = "manifest.json"
STATUS_OK = "ok"
STATUS_FAILED = "failed"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True, slots=True)
class RunEntry:
    """One run of a sweep. ``files`` maps artifact names to paths relative to the output dir."""

    run_id: str
    method: str
    param: float
    seed: int
    fingerprint: str
    status: str = STATUS_OK
    files: dict[str, str] = field(default_factory=dict)
    error: dict[str, str] | None = None
    finished: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "method": self.method,
            "param": self.param,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "status": self.status,
            "files": dict(self.files),
            "error": self.error,
            "finished": self.finished,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> RunEntry:
        return cls(
            run_id=str(doc["run_id"]),
            method=str(doc["method"]),
            param=jsonio.ParseFloat(doc["param"]),
            seed=int(doc["seed"]),
            fingerprint=str(doc["fingerprint"]),
            status=str(doc.get("status", STATUS_OK)),
            files={str(k): str(v) for k, v in doc.get("files", {}).items()},
            error=doc.get("error"),
            finished=str(doc.get("finished", "")),
        )


class RunManifest:
    """Mutable view of ``<output_dir>/manifest.json``."""

    def __init__(self, output_dir: str | os.PathLike[str], config_hash: str):
        self.root = Path(output_dir)
        self.config_hash = config_hash
        self.tool_version = __version__
        self.created = _now()
        self.updated = self.created
        self.runs: dict[str, RunEntry] = {}

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    @classmethod
    def open(cls, output_dir: str | os.PathLike[str], config_hash: str) -> RunManifest:
        """Loads the manifest if present; entries survive config changes and are
        matched per run by fingerprint."""
        m = cls(output_dir, config_hash)
        if not m.path.exists():
            return m
        doc = jsonio.ReadFile(m.path).unwrap()
        try:
            m.created = str(doc.get("created", m.created))
            m.runs = {k: RunEntry.from_dict(v) for k, v in doc.get("runs", {}).items()}
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{m.path}: malformed manifest: {e}") from e
        return m

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def get(self, run_id: str) -> RunEntry | None:
        return self.runs.get(run_id)

    def is_complete(self, run_id: str, fingerprint: str) -> bool:
        entry = self.runs.get(run_id)
        if entry is None or entry.status != STATUS_OK or entry.fingerprint != fingerprint:
            return False
        return all(self.resolve(p).exists() for p in entry.files.values())

    def is_failed(self, run_id: str, fingerprint: str) -> bool:
        entry = self.runs.get(run_id)
        return (
            entry is not None and entry.status == STATUS_FAILED and entry.fingerprint == fingerprint
        )

    def require(self, run_id: str, fingerprint: str | None = None) -> RunEntry:
        """The completed entry for run_id, or a DependencyError naming it."""
        entry = self.runs.get(run_id)
        if entry is None or entry.status != STATUS_OK:
            raise DependencyError(run_id, "missing sweep artifacts for run")
        if fingerprint is not None and entry.fingerprint != fingerprint:
            raise DependencyError(run_id, "sweep artifacts are stale for the current config")
        for rel in entry.files.values():
            if not self.resolve(rel).exists():
                raise DependencyError(run_id, f"missing artifact {rel} for run")
        return entry

    def record_ok(self, entry: RunEntry) -> None:
        for rel in entry.files.values():
            if not self.resolve(rel).exists():
                raise DependencyError(entry.run_id, f"artifact {rel} was not written")
        self.runs[entry.run_id] = replace(entry, status=STATUS_OK, error=None, finished=_now())
        self.save()

    def record_failure(self, entry: RunEntry, err: Error) -> None:
        self.runs[entry.run_id] = replace(
            entry, status=STATUS_FAILED, files={}, error=err.to_dict(), finished=_now()
        )
        self.save()

    def failures(self) -> list[RunEntry]:
        return [e for e in self.runs.values() if e.status == STATUS_FAILED]

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "created": self.created,
            "updated": self.updated,
            "runs": {k: self.runs[k].to_dict() for k in sorted(self.runs)},
        }

    def save(self) -> None:
        """Writes the manifest, dropping ok entries whose artifacts no longer exist."""
        self.runs = {
            run_id: entry
            for run_id, entry in self.runs.items()
            if entry.status != STATUS_OK
            or all(self.resolve(rel).exists() for rel in entry.files.values())
        }
        self.updated = _now()
        jsonio.WriteFileAtomic(self.path, self.to_dict())
