"""Datasets: synthetic group-structured generation, CSV I/O, splits and batches.

A :class:`Dataset` is an immutable feature matrix with binary targets ``y``,
binary protected attributes ``s`` and a split tag per row. Features are
standardized with statistics from the train split only; the statistics are
kept so :func:`save_csv` can write the raw values back out.

Example:
    >>> from fairlens.data import SyntheticSpec, generate, stratified_batches
    >>> from fairlens.types import Split
    >>>
    >>> ds = generate(SyntheticSpec(n_samples=2000, separability=2.0, base_rate_gap=0.3))
    >>> batches = stratified_batches(ds, Split.TRAIN, batch_size=64, seed=0)
    >>> sum(len(b) for b in batches) == len(ds.indices(Split.TRAIN))
    True

"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, fields
from typing import Any

import numpy as np
from scipy.special import expit

from fairlens import csvio, log
from fairlens.errors import ArgumentError, ParseError, SchemaError, ValidationError
from fairlens.types import FloatArray, IntArray, Split

__all__ = [
    "Dataset",
    "SyntheticSpec",
    "CsvSource",
    "generate",
    "load_csv",
    "save_csv",
    "stratified_split",
    "stratified_batches",
    "SPLIT_FRACTIONS",
]

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)

_U64 = (1 << 64) - 1


def _seed_word(seed: int) -> int:
    # numpy seeds must be nonnegative; negative 64-bit seeds wrap around
    return int(seed) & _U64


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with binary targets, protected attributes and split tags.

    Arrays are copied and made read-only on construction; a Dataset is safe to
    share between threads.
    """

    features: FloatArray
    targets: IntArray
    protected: IntArray
    split: np.ndarray
    feature_names: tuple[str, ...] = ()
    feature_mean: FloatArray | None = None
    feature_scale: FloatArray | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ArgumentError(f"features must be a 2-D matrix, got shape {x.shape}")
        n, d = x.shape
        y = np.asarray(self.targets)
        s = np.asarray(self.protected)
        tags = np.asarray([str(Split.parse(str(t))) for t in np.asarray(self.split)], dtype="<U5")
        for name, arr in (("targets", y), ("protected", s), ("split", tags)):
            if arr.shape != (n,):
                raise ArgumentError(f"{name} must have length {n}, got shape {arr.shape}")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("features must be finite")
        for name, arr in (("targets", y), ("protected", s)):
            if not np.all((arr == 0) | (arr == 1)):
                raise ArgumentError(f"{name} must be 0/1")

        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise ArgumentError(f"expected {d} feature names, got {len(names)}")
        mean = np.zeros(d) if self.feature_mean is None else np.asarray(self.feature_mean, float)
        scale = np.ones(d) if self.feature_scale is None else np.asarray(self.feature_scale, float)

        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "targets", _frozen(y.astype(np.int64)))
        object.__setattr__(self, "protected", _frozen(s.astype(np.int64)))
        object.__setattr__(self, "split", _frozen(tags))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "feature_mean", _frozen(mean))
        object.__setattr__(self, "feature_scale", _frozen(scale))

    @classmethod
    def standardized(
        cls,
        raw: FloatArray,
        targets: IntArray,
        protected: IntArray,
        split: np.ndarray,
        feature_names: tuple[str, ...] = (),
    ) -> Dataset:
        """Builds a Dataset from raw features, standardizing on the train split."""
        raw = np.asarray(raw, dtype=np.float64)
        train = np.asarray(split) == Split.TRAIN.value
        if not np.any(train):
            raise ValidationError("split", "train split is empty")
        mean = raw[train].mean(axis=0)
        scale = raw[train].std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls((raw - mean) / scale, targets, protected, split, feature_names, mean, scale)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def indices(self, split: Split) -> IntArray:
        return np.flatnonzero(self.split == Split(split).value)

    def X(self, split: Split) -> FloatArray:
        return self.features[self.indices(split)]

    def y(self, split: Split) -> IntArray:
        return self.targets[self.indices(split)]

    def s(self, split: Split) -> IntArray:
        return self.protected[self.indices(split)]

    def raw_features(self) -> FloatArray:
        assert self.feature_mean is not None and self.feature_scale is not None
        raw: FloatArray = self.features * self.feature_scale + self.feature_mean
        return raw

    def with_targets(self, targets: IntArray) -> Dataset:
        """Returns a copy with replaced targets (used by massaging)."""
        return Dataset(
            self.features,
            targets,
            self.protected,
            self.split,
            self.feature_names,
            self.feature_mean,
            self.feature_scale,
        )

    def check_splits(self) -> None:
        """Every split is nonempty and holds both groups and both labels."""
        for split in Split:
            idx = self.indices(split)
            if idx.size == 0:
                raise ValidationError("split", f"{split.value} split is empty")
            for name, arr in (("protected", self.protected), ("targets", self.targets)):
                values = set(np.unique(arr[idx]).tolist())
                if values != {0, 1}:
                    raise ValidationError(
                        name, f"{split.value} split must contain both 0 and 1, has {sorted(values)}"
                    )

    def fingerprint(self) -> str:
        """SHA-256 over the array bytes; equal fingerprints mean byte-identical data."""
        h = hashlib.sha256()
        for arr in (self.features, self.targets, self.protected, self.split):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x1f".join(self.feature_names).encode())
        return h.hexdigest()


# =============================================================================
# Synthetic data
# =============================================================================


@dataclass(frozen=True, slots=True)
class SyntheticSpec:
    """Parameters of the two-Gaussian synthetic population.

    Groups are centred at ``±separability·u`` for a seeded unit direction
    ``u``; labels follow ``y ~ Bernoulli(σ(signal·w·x + c_s))`` with the
    group intercepts ``c_s`` calibrated to realize ``base_rate_gap``.
    """

    n_samples: int = 20000
    n_features: int = 10
    group_balance: float = 0.5
    separability: float = 2.0
    base_rate_gap: float = 0.3
    label_noise: float = 0.0
    seed: int = 0
    signal: float = 2.0

    def validate(self) -> None:
        if not isinstance(self.n_samples, int) or self.n_samples <= 0:
            raise ValidationError(
                "n_samples", f"must be a positive integer, got {self.n_samples!r}"
            )
        if not isinstance(self.n_features, int) or self.n_features <= 0:
            raise ValidationError(
                "n_features", f"must be a positive integer, got {self.n_features!r}"
            )
        if not 0.0 < self.group_balance < 1.0:
            raise ValidationError("group_balance", f"must lie in (0, 1), got {self.group_balance}")
        if not (math.isfinite(self.separability) and self.separability >= 0.0):
            raise ValidationError("separability", f"must be >= 0, got {self.separability}")
        if not -1.0 <= self.base_rate_gap <= 1.0:
            raise ValidationError("base_rate_gap", f"must lie in [-1, 1], got {self.base_rate_gap}")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValidationError("label_noise", f"must lie in [0, 0.5), got {self.label_noise}")
        if not isinstance(self.seed, int) or not -(1 << 63) <= self.seed <= _U64:
            raise ValidationError("seed", f"must be a 64-bit integer, got {self.seed!r}")
        if not (math.isfinite(self.signal) and self.signal > 0.0):
            raise ValidationError("signal", f"must be > 0, got {self.signal}")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SyntheticSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(sorted(unknown)[0], "unknown synthetic spec field")
        return cls(**doc)


def _unit(v: FloatArray) -> FloatArray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return v / norm


def _calibrate_intercept(margin: FloatArray, rate: float) -> float:
    """Bisection for c with mean(σ(margin + c)) = rate."""
    if margin.size == 0:
        return 0.0
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.mean(expit(margin + mid))) < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def _pre_noise_rates(spec: SyntheticSpec) -> tuple[float, float]:
    eta = spec.label_noise
    rates = []
    for sign in (-1.0, 1.0):
        p = 0.5 + sign * spec.base_rate_gap / 2.0
        p = (p - eta) / (1.0 - 2.0 * eta)
        rates.append(min(max(p, 1e-3), 1.0 - 1e-3))
    return rates[0], rates[1]


def generate(spec: SyntheticSpec) -> Dataset:
    """Draws a dataset from spec; identical specs give byte-identical datasets."""
    spec.validate()
    rng = np.random.default_rng(_seed_word(spec.seed))
    n, d = spec.n_samples, spec.n_features

    protected = (rng.random(n) < spec.group_balance).astype(np.int64)
    u = _unit(rng.standard_normal(d))
    w = rng.standard_normal(d)
    if d >= 2:
        w = w - (w @ u) * u
    w = _unit(w)

    sign = (2 * protected - 1).astype(np.float64)
    raw = rng.standard_normal((n, d)) + np.outer(sign, spec.separability * u)

    margin = spec.signal * (raw @ w)
    rate0, rate1 = _pre_noise_rates(spec)
    c0 = _calibrate_intercept(margin[protected == 0], rate0)
    c1 = _calibrate_intercept(margin[protected == 1], rate1)
    logits = margin + np.where(protected == 1, c1, c0)
    targets = (rng.random(n) < expit(logits)).astype(np.int64)

    n_flip = _round_half_up(spec.label_noise * n)
    if n_flip:
        flip = rng.choice(n, size=n_flip, replace=False)
        targets[flip] ^= 1

    split = stratified_split(targets, protected, spec.seed)
    ds = Dataset.standardized(raw, targets, protected, split)
    ds.check_splits()
    return ds


# =============================================================================
# Splits and batches
# =============================================================================


def stratified_split(
    targets: IntArray,
    protected: IntArray,
    seed: int,
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS,
) -> np.ndarray:
    """Assigns train/val/test tags stratified jointly on (y, s)."""
    targets = np.asarray(targets)
    protected = np.asarray(protected)
    rng = np.random.default_rng([_seed_word(seed), 1])
    tags = np.empty(targets.shape[0], dtype="<U5")
    for y in (0, 1):
        for s in (0, 1):
            cell = rng.permutation(np.flatnonzero((targets == y) & (protected == s)))
            k = cell.size
            n_train = min(_round_half_up(fractions[0] * k), k)
            n_val = min(_round_half_up(fractions[1] * k), k - n_train)
            tags[cell[:n_train]] = Split.TRAIN.value
            tags[cell[n_train : n_train + n_val]] = Split.VALIDATION.value
            tags[cell[n_train + n_val :]] = Split.TEST.value
    return tags


def stratified_batches(
    ds: Dataset, split: Split, batch_size: int, seed: int, epoch: int = 0
) -> list[IntArray]:
    """Partitions a split into batches whose group mix tracks the split's.

    Group-1 members are dealt out by the cumulative count
    ``round(k·n₁/N)`` over batch positions ``k``, so every batch holds within
    one sample of the split-level prevalence. All batches have
    ``batch_size`` rows except the last.
    """
    idx = ds.indices(split)
    total = idx.size
    if batch_size <= 0:
        raise ArgumentError(f"batch_size must be positive, got {batch_size}")
    if batch_size > total:
        raise ArgumentError(f"batch_size {batch_size} exceeds {split.value} split size {total}")

    rng = np.random.default_rng([_seed_word(seed), 2, epoch])
    ones = rng.permutation(idx[ds.protected[idx] == 1])
    zeros = rng.permutation(idx[ds.protected[idx] == 0])
    n1 = ones.size

    def cum_ones(k: int) -> int:
        return (2 * k * n1 + total) // (2 * total)

    batches = []
    for start in range(0, total, batch_size):
        end = min(start + batch_size, total)
        a1, b1 = cum_ones(start), cum_ones(end)
        a0, b0 = start - a1, end - b1
        batch = np.concatenate([ones[a1:b1], zeros[a0:b0]])
        batches.append(rng.permutation(batch))
    return batches


# =============================================================================
# CSV
# =============================================================================


def _binary(value: str, column: str, row: int) -> int:
    v = value.strip()
    if v == "0":
        return 0
    if v == "1":
        return 1
    raise ParseError(row, f"column {column!r} must be 0 or 1, got {value!r}")


def load_csv(
    path: str | os.PathLike[str],
    target_col: str,
    protected_col: str,
    split_col: str | None = None,
    seed: int = 0,
) -> Dataset:
    """Loads a header-first UTF-8 CSV.

    Numeric columns other than target/protected/split become features, in
    header order; columns that do not parse as finite floats are dropped.
    Without ``split_col`` a seeded 70/15/15 stratified split is assigned.
    Parse errors cite the 1-based data row. Only the train split must be
    nonempty; the CLI checks the other per-split invariants before training.
    """
    records = csvio.ReadFile(path).unwrap()
    if not records:
        raise SchemaError(f"{path}: missing header row")
    header = [h.strip() for h in records[0]]
    rows = records[1:]
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    def column(name: str) -> int:
        if name not in header:
            raise SchemaError(f"{path}: missing column {name!r}")
        return header.index(name)

    t_col, s_col = column(target_col), column(protected_col)
    sp_col = column(split_col) if split_col is not None else None

    targets = np.array([_binary(r[t_col], target_col, i) for i, r in enumerate(rows, 1)])
    protected = np.array([_binary(r[s_col], protected_col, i) for i, r in enumerate(rows, 1)])
    if sp_col is not None:
        tags = []
        for i, r in enumerate(rows, 1):
            try:
                tags.append(Split.parse(r[sp_col]).value)
            except ArgumentError as e:
                raise ParseError(i, str(e)) from None
        split = np.asarray(tags, dtype="<U5")
    else:
        split = stratified_split(targets, protected, seed)

    reserved = {t_col, s_col} | ({sp_col} if sp_col is not None else set())
    names: list[str] = []
    columns: list[FloatArray] = []
    for j, name in enumerate(header):
        if j in reserved:
            continue
        try:
            values = np.array([float(r[j]) for r in rows], dtype=np.float64)
        except ValueError:
            log.Printf("load_csv: dropping non-numeric column %r", name)
            continue
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ParseError(int(bad[0]) + 1, f"column {name!r} is not finite")
        names.append(name)
        columns.append(values)

    raw = np.column_stack(columns) if columns else np.zeros((len(rows), 0))
    return Dataset.standardized(raw, targets, protected, split, tuple(names))


def save_csv(
    ds: Dataset,
    path: str | os.PathLike[str],
    target_col: str = "target",
    protected_col: str = "protected",
    split_col: str = "split",
) -> None:
    """Writes raw features, target, protected and split columns."""
    raw = ds.raw_features()
    records = [[*ds.feature_names, target_col, protected_col, split_col]]
    for i in range(ds.n):
        records.append(
            [
                *(csvio.FormatFloat(v) for v in raw[i]),
                str(int(ds.targets[i])),
                str(int(ds.protected[i])),
                str(ds.split[i]),
            ]
        )
    csvio.WriteFileAtomic(path, records)


@dataclass(frozen=True, slots=True)
class CsvSource:
    """Reference to a tabular CSV dataset in an experiment config."""

    path: str
    target_col: str
    protected_col: str
    split_col: str | None = None
    seed: int = 0

    def load(self) -> Dataset:
        return load_csv(self.path, self.target_col, self.protected_col, self.split_col, self.seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "path": self.path,
            "target_col": self.target_col,
            "protected_col": self.protected_col,
            "split_col": self.split_col,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> CsvSource:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(sorted(unknown)[0], "unknown csv dataset field")
        for name in ("path", "target_col", "protected_col"):
            if not isinstance(doc.get(name), str):
                raise ValidationError(name, "required string field")
        return cls(**doc)
