"""Experiment configuration: one JSON file drives every CLI command.

Every field has a default, so ``{}`` is a valid config. The resolved form
(all defaults inlined) is written next to the artifacts, and its hash keys
the runs of a sweep.

Example config::

    {
      "dataset": {"kind": "synthetic", "n_samples": 20000, "separability": 2.0},
      "methods": ["unconstrained", "reg_squared", "two_head", "lipton"],
      "seeds": [0, 1, 2],
      "train": {"epochs": 20, "hidden_widths": [32, 32]},
      "output_dir": "runs/default"
    }

``FAIRLENS_OUT`` in the environment overrides ``output_dir``.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from fairlens import jsonio
from fairlens.data import CsvSource, Dataset, SyntheticSpec, generate
from fairlens.errors import ConfigError, Error, ValidationError
from fairlens.nn import TrainConfig
from fairlens.types import Method

__all__ = [
    "ExperimentConfig",
    "DEFAULT_LAMBDA_GRID",
    "DEFAULT_MASSAGING_GRID",
    "DEFAULT_SEEDS",
    "ENV_OUTPUT_DIR",
    "RESOLVED_CONFIG_NAME",
    "load_config",
    "parse_config",
    "config_hash",
    "canonical_json",
]

DEFAULT_LAMBDA_GRID = (0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0, 15.0, 20.0, 30.0)
DEFAULT_MASSAGING_GRID = tuple(round(0.1 * i, 10) for i in range(11))
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_N_BOUNDS = 20

ENV_OUTPUT_DIR = "FAIRLENS_OUT"
RESOLVED_CONFIG_NAME = "config.resolved.json"

_HASH_EXCLUDED = ("output_dir", "jobs")
_TRAIN_KEYS = (
    "epochs",
    "learning_rate",
    "batch_size",
    "hidden_widths",
    "lr_drop_patience",
    "selection",
)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """A resolved experiment. ``train`` holds every TrainConfig field but method, λ and seed."""

    dataset: SyntheticSpec | CsvSource = field(default_factory=SyntheticSpec)
    methods: tuple[Method, ...] = tuple(Method)
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    massaging_grid: tuple[float, ...] = DEFAULT_MASSAGING_GRID
    ddp_bounds: tuple[float, ...] | None = None
    n_bounds: int = DEFAULT_N_BOUNDS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    train: TrainConfig = field(default_factory=TrainConfig)
    report_splits: tuple[str, ...] = ("test",)
    output_dir: str = "runs"
    jobs: int | None = None

    def validate(self) -> None:
        if isinstance(self.dataset, SyntheticSpec):
            self.dataset.validate()
        if not self.methods:
            raise ValidationError("methods", "at least one method is required")
        grids = (("lambda_grid", self.lambda_grid), ("massaging_grid", self.massaging_grid))
        for name, grid in grids:
            if not grid or any(not math.isfinite(v) or v < 0 for v in grid):
                raise ValidationError(name, "must be a nonempty list of nonnegative reals")
            if len(set(grid)) != len(grid):
                raise ValidationError(name, "values must be distinct")
        if any(v > 1.0 for v in self.massaging_grid):
            raise ValidationError("massaging_grid", "fractions must lie in [0, 1]")
        if self.ddp_bounds is not None and (
            not self.ddp_bounds or any(not math.isfinite(b) or b < 0 for b in self.ddp_bounds)
        ):
            raise ValidationError("ddp_bounds", "must be a nonempty list of nonnegative reals")
        if self.n_bounds < 2:
            raise ValidationError("n_bounds", f"must be >= 2, got {self.n_bounds}")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ValidationError("seeds", "must be a nonempty list of distinct integers")
        if not self.report_splits or not set(self.report_splits) <= {"train", "val", "test"}:
            raise ValidationError("report_splits", "must name splits among train, val, test")
        if self.jobs is not None and self.jobs < 1:
            raise ValidationError("jobs", f"must be positive, got {self.jobs}")
        self.train.validate()

    def train_config(self, method: Method, lam: float, seed: int) -> TrainConfig:
        return replace(self.train, method=method, lam=lam, seed=seed)

    def load_dataset(self) -> Dataset:
        if isinstance(self.dataset, SyntheticSpec):
            return generate(self.dataset)
        return self.dataset.load()

    def dataset_dict(self) -> dict[str, Any]:
        kind = "synthetic" if isinstance(self.dataset, SyntheticSpec) else "csv"
        return {"kind": kind, **self.dataset.to_dict()}

    def train_dict(self) -> dict[str, Any]:
        doc = self.train.to_dict()
        return {k: doc[k] for k in _TRAIN_KEYS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset_dict(),
            "methods": [m.value for m in self.methods],
            "lambda_grid": list(self.lambda_grid),
            "massaging_grid": list(self.massaging_grid),
            "ddp_bounds": list(self.ddp_bounds) if self.ddp_bounds is not None else None,
            "n_bounds": self.n_bounds,
            "seeds": list(self.seeds),
            "train": self.train_dict(),
            "report_splits": list(self.report_splits),
            "output_dir": self.output_dir,
            "jobs": self.jobs,
        }

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def write_resolved(self) -> Path:
        path = self.out / RESOLVED_CONFIG_NAME
        jsonio.WriteFileAtomic(path, self.to_dict())
        return path


def canonical_json(doc: Any) -> str:
    return jsonio.Marshal(_sorted(doc)).unwrap()


def _sorted(doc: Any) -> Any:
    if isinstance(doc, dict):
        return {k: _sorted(doc[k]) for k in sorted(doc)}
    if isinstance(doc, list):
        return [_sorted(v) for v in doc]
    return doc


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical resolved config, without output_dir and jobs."""
    doc = {k: v for k, v in cfg.to_dict().items() if k not in _HASH_EXCLUDED}
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def _floats(name: str, v: Any) -> tuple[float, ...]:
    if not isinstance(v, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ValidationError(name, "must be a list of numbers")
    return tuple(float(x) for x in v)


def _ints(name: str, v: Any) -> tuple[int, ...]:
    if not isinstance(v, list) or not all(
        isinstance(x, int) and not isinstance(x, bool) for x in v
    ):
        raise ValidationError(name, "must be a list of integers")
    return tuple(v)


def _parse_dataset(doc: Any) -> SyntheticSpec | CsvSource:
    if not isinstance(doc, dict):
        raise ValidationError("dataset", "must be an object")
    doc = dict(doc)
    kind = doc.pop("kind", "synthetic")
    if kind == "synthetic":
        return SyntheticSpec.from_dict(doc)
    if kind == "csv":
        return CsvSource.from_dict(doc)
    raise ValidationError("dataset.kind", f"must be 'synthetic' or 'csv', got {kind!r}")


def parse_config(doc: Any, env: dict[str, str] | None = None) -> ExperimentConfig:
    """Builds and validates an ExperimentConfig; every problem is a ConfigError."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    env = dict(os.environ) if env is None else env
    known = set(ExperimentConfig.__slots__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")

    try:
        kwargs: dict[str, Any] = {}
        if "dataset" in doc:
            kwargs["dataset"] = _parse_dataset(doc["dataset"])
        if "methods" in doc:
            try:
                kwargs["methods"] = tuple(Method(m) for m in doc["methods"])
            except (ValueError, TypeError):
                raise ValidationError("methods", f"unknown method in {doc['methods']!r}") from None
        if "lambda_grid" in doc:
            kwargs["lambda_grid"] = _floats("lambda_grid", doc["lambda_grid"])
        if "massaging_grid" in doc:
            kwargs["massaging_grid"] = _floats("massaging_grid", doc["massaging_grid"])
        if doc.get("ddp_bounds") is not None:
            kwargs["ddp_bounds"] = _floats("ddp_bounds", doc["ddp_bounds"])
        if "n_bounds" in doc:
            kwargs["n_bounds"] = int(doc["n_bounds"])
        if "seeds" in doc:
            kwargs["seeds"] = _ints("seeds", doc["seeds"])
        if "train" in doc:
            train = doc["train"]
            if not isinstance(train, dict):
                raise ValidationError("train", "must be an object")
            bad = sorted(set(train) - set(_TRAIN_KEYS))
            if bad:
                raise ValidationError(f"train.{bad[0]}", "unknown training option")
            kwargs["train"] = TrainConfig.from_dict(train)
        if "report_splits" in doc:
            kwargs["report_splits"] = tuple(str(s) for s in doc["report_splits"])
        if "output_dir" in doc:
            kwargs["output_dir"] = str(doc["output_dir"])
        if doc.get("jobs") is not None:
            kwargs["jobs"] = int(doc["jobs"])
        if env.get(ENV_OUTPUT_DIR):
            kwargs["output_dir"] = env[ENV_OUTPUT_DIR]

        cfg = ExperimentConfig(**kwargs)
        cfg.validate()
    except ConfigError:
        raise
    except (Error, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e

    # massaging, Lipton, Table 1 and the audit all read the unconstrained runs
    if Method.UNCONSTRAINED not in cfg.methods:
        cfg = replace(cfg, methods=(Method.UNCONSTRAINED, *cfg.methods))
    return cfg


def load_config(
    path: str | os.PathLike[str], env: dict[str, str] | None = None
) -> ExperimentConfig:
    result = jsonio.ReadFile(path)
    if result.is_err():
        raise ConfigError(f"cannot read config {path}: {result.err()}")
    return parse_config(result.unwrap(), env)
