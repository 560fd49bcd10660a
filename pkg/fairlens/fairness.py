"""Fairness metrics, relaxed regularizers and fair post-processing.

Decisions are always strict: a score ``h`` predicts 1 iff ``h > 0`` (or
``f > t`` for a threshold). Positive rates are ``count/size`` per group and
DDP is ``rate(s=1) − rate(s=0)``, computed the same way by every function
here so reported and searched disparities agree to the last bit.

Post-processing comes in two flavours:

- :func:`combine_grid_search` finds ``(a1, a2)`` for the compressed head
  ``f + a1·g + a2`` of a two-head model.
- :func:`lipton_thresholds` finds per-group thresholds on ``f`` using the
  true protected attribute.

Example:
    >>> import numpy as np
    >>> from fairlens.fairness import ddp, reg_squared
    >>>
    >>> ddp(np.array([1, 0, 1, 1]), np.array([0, 0, 1, 1]))
    0.5
    >>> round(reg_squared(np.array([0.0, np.log(3.0)]), np.array([0, 1])), 12)
    0.0625

"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy.special import expit

from fairlens import jsonio
from fairlens.data import Dataset
from fairlens.errors import ArgumentError, InfeasibleConstraintError, UndefinedMetricError
from fairlens.runtime import parallel_map
from fairlens.types import FloatArray, IntArray, Scores, Split

__all__ = [
    "FairnessReport",
    "CombinedClassifier",
    "GroupThresholds",
    "MassagingPlan",
    "ddp",
    "evaluate",
    "reg_squared",
    "reg_abs",
    "reg_squared_grad",
    "reg_abs_grad",
    "massage",
    "combine_grid_search",
    "lipton_thresholds",
    "equidistant_bounds",
]


# =============================================================================
# Metrics
# =============================================================================


def _binary(name: str, v: Any) -> IntArray:
    a = np.asarray(v)
    if a.ndim != 1:
        raise ArgumentError(f"{name} must be a vector, got shape {a.shape}")
    if not np.all((a == 0) | (a == 1)):
        raise ArgumentError(f"{name} must be 0/1")
    return a.astype(np.int64)


def _group_sizes(protected: IntArray) -> tuple[int, int]:
    n1 = int(np.count_nonzero(protected))
    n0 = int(protected.size - n1)
    if n0 == 0 or n1 == 0:
        raise UndefinedMetricError(f"both protected groups must be present (n0={n0}, n1={n1})")
    return n0, n1


def _rate_gap(pos0: Any, n0: int, pos1: Any, n1: int) -> Any:
    return pos1 / n1 - pos0 / n0


def ddp(predictions: Any, protected: Any) -> float:
    """Demographic disparity ``P(h=1 | s=1) − P(h=1 | s=0)``."""
    h = _binary("predictions", predictions)
    s = _binary("protected", protected)
    if h.shape != s.shape:
        raise ArgumentError(f"length mismatch: {h.size} predictions, {s.size} protected")
    n0, n1 = _group_sizes(s)
    pos1 = int(np.count_nonzero(h[s == 1]))
    pos0 = int(np.count_nonzero(h[s == 0]))
    return float(_rate_gap(pos0, n0, pos1, n1))


@dataclass(frozen=True, slots=True)
class FairnessReport:
    accuracy: float
    ddp: float
    positive_rate_s0: float
    positive_rate_s1: float
    split: Split
    n_per_group: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "ddp": self.ddp,
            "positive_rate_s0": self.positive_rate_s0,
            "positive_rate_s1": self.positive_rate_s1,
            "split": self.split.value,
            "n_per_group": list(self.n_per_group),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> FairnessReport:
        n0, n1 = doc["n_per_group"]
        return cls(
            accuracy=float(doc["accuracy"]),
            ddp=float(doc["ddp"]),
            positive_rate_s0=float(doc["positive_rate_s0"]),
            positive_rate_s1=float(doc["positive_rate_s1"]),
            split=Split.parse(doc["split"]),
            n_per_group=(int(n0), int(n1)),
        )


def evaluate(predictions: Any, targets: Any, protected: Any, split: Split) -> FairnessReport:
    """Accuracy and DDP of binary predictions over one split, from integer counts."""
    h = _binary("predictions", predictions)
    y = _binary("targets", targets)
    s = _binary("protected", protected)
    if h.size == 0:
        raise ArgumentError("evaluate needs at least one row")
    if not (h.shape == y.shape == s.shape):
        raise ArgumentError("predictions, targets and protected must have equal lengths")
    n0, n1 = _group_sizes(s)
    pos0 = int(np.count_nonzero(h[s == 0]))
    pos1 = int(np.count_nonzero(h[s == 1]))
    rate0, rate1 = pos0 / n0, pos1 / n1
    return FairnessReport(
        accuracy=int(np.count_nonzero(h == y)) / h.size,
        ddp=rate1 - rate0,
        positive_rate_s0=rate0,
        positive_rate_s1=rate1,
        split=Split(split),
        n_per_group=(n0, n1),
    )


# =============================================================================
# Relaxed regularizers
# =============================================================================


def _sigmoid_gap(logits: Any, protected: Any) -> tuple[float, FloatArray, FloatArray]:
    """Returns (mean σ over s=1 − mean σ over s=0, σ'(ℓ), ∂gap/∂σ)."""
    ell = np.asarray(logits, dtype=np.float64)
    s = _binary("protected", protected)
    if ell.shape != s.shape:
        raise ArgumentError(f"length mismatch: {ell.size} logits, {s.size} protected")
    n0, n1 = _group_sizes(s)
    p = expit(ell)
    gap = float(p[s == 1].sum() / n1 - p[s == 0].sum() / n0)
    coef = np.where(s == 1, 1.0 / n1, -1.0 / n0)
    return gap, p * (1.0 - p), coef


def reg_squared(logits: Any, protected: Any) -> float:
    """Squared gap of group-mean sigmoid scores."""
    gap, _, _ = _sigmoid_gap(logits, protected)
    return gap * gap


def reg_abs(logits: Any, protected: Any) -> float:
    """Absolute gap of group-mean sigmoid scores."""
    gap, _, _ = _sigmoid_gap(logits, protected)
    return abs(gap)


def reg_squared_grad(logits: Any, protected: Any) -> FloatArray:
    gap, dp, coef = _sigmoid_gap(logits, protected)
    grad: FloatArray = 2.0 * gap * dp * coef
    return grad


def reg_abs_grad(logits: Any, protected: Any) -> FloatArray:
    """Subgradient of :func:`reg_abs`; zero where the gap is exactly 0."""
    gap, dp, coef = _sigmoid_gap(logits, protected)
    grad: FloatArray = float(np.sign(gap)) * dp * coef
    return grad


# =============================================================================
# Massaging
# =============================================================================


@dataclass(frozen=True, slots=True)
class MassagingPlan:
    """Label flips applied to the train split.

    ``promote_idx`` and ``demote_idx`` are dataset row indices, in flip order.
    ``requested`` is ``round(lambda_frac·M)``; ``truncated`` is set when fewer
    flippable rows existed.
    """

    M: int
    lambda_frac: float
    promote_idx: IntArray
    demote_idx: IntArray
    requested: int
    truncated: bool
    advantaged: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "M": self.M,
            "lambda_frac": self.lambda_frac,
            "promote_idx": self.promote_idx.tolist(),
            "demote_idx": self.demote_idx.tolist(),
            "requested": self.requested,
            "truncated": self.truncated,
            "advantaged": self.advantaged,
        }


def massage(ds: Dataset, scores: Scores, lambda_frac: float) -> tuple[Dataset, MassagingPlan]:
    """Flips train labels to pull the group positive rates together.

    The advantaged group (higher train positive rate, ties to group 1) has its
    lowest-scoring positives demoted; the disadvantaged group has its
    highest-scoring negatives promoted, in equal numbers. ``M`` is the pair
    count that equalizes the rates, rounded half up.
    """
    if not (0.0 <= lambda_frac <= 1.0):
        raise ArgumentError(f"lambda_frac must lie in [0, 1], got {lambda_frac}")
    idx = ds.indices(Split.TRAIN)
    if scores.split is not Split.TRAIN or len(scores) != idx.size:
        raise ArgumentError(
            f"massage needs train-split scores for {idx.size} rows, "
            f"got {len(scores)} {scores.split.value} scores"
        )
    y = ds.targets[idx]
    s = ds.protected[idx]
    n0, n1 = _group_sizes(s)
    pos0 = int(np.count_nonzero(y[s == 0]))
    pos1 = int(np.count_nonzero(y[s == 1]))
    adv = 1 if pos1 * n0 >= pos0 * n1 else 0
    dis = 1 - adv
    n_a, n_d = (n1, n0) if adv == 1 else (n0, n1)
    pos_a, pos_d = (pos1, pos0) if adv == 1 else (pos0, pos1)

    total = n_a + n_d
    M = (2 * (pos_a * n_d - pos_d * n_a) + total) // (2 * total)
    requested = math.floor(lambda_frac * M + 0.5)

    f = scores.f_scores
    promote_rows = np.flatnonzero((s == dis) & (y == 0))
    demote_rows = np.flatnonzero((s == adv) & (y == 1))
    promote_rows = promote_rows[np.argsort(-f[promote_rows], kind="stable")]
    demote_rows = demote_rows[np.argsort(f[demote_rows], kind="stable")]
    k = min(requested, promote_rows.size, demote_rows.size)

    promote_idx = idx[promote_rows[:k]]
    demote_idx = idx[demote_rows[:k]]
    targets = np.array(ds.targets)
    targets[promote_idx] = 1
    targets[demote_idx] = 0
    plan = MassagingPlan(
        M=int(M),
        lambda_frac=float(lambda_frac),
        promote_idx=promote_idx,
        demote_idx=demote_idx,
        requested=int(requested),
        truncated=k < requested,
        advantaged=adv,
    )
    if k == 0:
        return ds, plan
    return ds.with_targets(targets), plan


# =============================================================================
# Two-head combination search
# =============================================================================


@dataclass(frozen=True, slots=True)
class CombinedClassifier:
    """Decision rule ``1(f + a1·g + a2 > 0)`` found under ``|DDP| ≤ constraint``."""

    a1: float
    a2: float
    constraint: float
    val_accuracy: float = math.nan
    val_ddp: float = math.nan

    def scores(self, f: FloatArray, g: FloatArray) -> FloatArray:
        h: FloatArray = (np.asarray(f) + self.a1 * np.asarray(g)) + self.a2
        return h

    def predict(self, f: FloatArray, g: FloatArray) -> IntArray:
        return (self.scores(f, g) > 0).astype(np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "a1": self.a1,
            "a2": self.a2,
            "constraint": self.constraint,
            "val_accuracy": self.val_accuracy,
            "val_ddp": self.val_ddp,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> CombinedClassifier:
        return cls(**{k: jsonio.ParseFloat(doc[k]) for k in cls.__slots__ if k in doc})


class _GroupCounts:
    """Sorted scores per (group, label) cell for fast threshold counting."""

    __slots__ = ("cells", "n0", "n1", "n_neg")

    def __init__(self, h: FloatArray, s: IntArray, y: IntArray):
        self.cells = {
            (k, c): np.sort(h[(s == k) & (y == c)]) for k in (0, 1) for c in (0, 1)
        }
        self.n0 = int(np.count_nonzero(s == 0))
        self.n1 = int(np.count_nonzero(s == 1))
        self.n_neg = int(np.count_nonzero(y == 0))

    def above(self, cell: tuple[int, int], t: FloatArray) -> IntArray:
        arr = self.cells[cell]
        counts: IntArray = arr.size - np.searchsorted(arr, t, side="right")
        return counts

    def evaluate(self, t: FloatArray) -> tuple[IntArray, FloatArray]:
        """Correct counts and DDP of ``1(h > t)`` for each threshold in t."""
        tp0, fp0 = self.above((0, 1), t), self.above((0, 0), t)
        tp1, fp1 = self.above((1, 1), t), self.above((1, 0), t)
        correct = tp0 + tp1 + self.n_neg - fp0 - fp1
        gap = _rate_gap(tp0 + fp0, self.n0, tp1 + fp1, self.n1)
        return correct, gap


# (-correct, |ddp|, |a1|, |a2|, a1, a2)
_Key = tuple[int, float, float, float, float, float]


def _best_in_row(
    f: FloatArray,
    g: FloatArray,
    s: IntArray,
    y: IntArray,
    a1: float,
    a2s: FloatArray,
    bound: float,
) -> tuple[_Key, float] | None:
    counts = _GroupCounts(f + a1 * g, s, y)
    correct, gap = counts.evaluate(-a2s)
    feasible = np.flatnonzero(np.abs(gap) <= bound)
    if feasible.size == 0:
        return None
    c, d, a = correct[feasible], np.abs(gap[feasible]), a2s[feasible]
    order = np.lexsort((a, np.abs(a), d, -c))
    j = order[0]
    key = (-int(c[j]), float(d[j]), abs(a1), abs(float(a[j])), a1, float(a[j]))
    return key, float(gap[feasible][j])


def _search_box(
    f: FloatArray,
    g: FloatArray,
    s: IntArray,
    y: IntArray,
    box: tuple[float, float, float, float],
    points: int,
    bound: float,
    workers: int | None,
) -> tuple[_Key, float] | None:
    lo1, hi1, lo2, hi2 = box
    a1s = np.linspace(lo1, hi1, points)
    a2s = np.linspace(lo2, hi2, points)
    rows = parallel_map(
        lambda a1: _best_in_row(f, g, s, y, float(a1), a2s, bound), a1s.tolist(), workers
    )
    found = [r for r in rows if r is not None]
    if not found:
        return None
    return min(found, key=lambda r: r[0])


def combine_grid_search(
    scores_val: Scores,
    protected_val: Any,
    targets_val: Any,
    ddp_bound: float,
    grid_points: int = 200,
    span: float = 15.0,
    depth: int = 4,
    saturate: bool = True,
    workers: int | None = None,
) -> CombinedClassifier:
    """Most accurate ``(a1, a2)`` with validation ``|DDP| ≤ ddp_bound``.

    The first pass covers ``[-span, span]²`` with ``grid_points`` per axis;
    each of the ``depth`` refinement passes re-grids the cell between the
    incumbent's grid neighbours. The best candidate over all passes wins,
    ordered by accuracy, then ``|DDP|``, ``|a1|`` and ``|a2|``.
    """
    if not (ddp_bound >= 0.0):
        raise ArgumentError(f"ddp_bound must be nonnegative, got {ddp_bound}")
    if grid_points < 2 or depth < 0 or not span > 0:
        raise ArgumentError("grid_points must be >= 2, depth >= 0 and span > 0")
    f = scores_val.f_scores
    g = scores_val.require_g()
    s = _binary("protected_val", protected_val)
    y = _binary("targets_val", targets_val)
    if not (f.shape == s.shape == y.shape):
        raise ArgumentError("scores, protected and targets must have equal lengths")
    n0, n1 = _group_sizes(s)

    candidates: list[tuple[_Key, float]] = []
    if saturate:
        pos_count = int(np.count_nonzero(y))
        candidates.append(((-pos_count, 0.0, 0.0, math.inf, 0.0, math.inf), 0.0))
        candidates.append(((-(y.size - pos_count), 0.0, 0.0, math.inf, 0.0, -math.inf), 0.0))

    box = (-span, span, -span, span)
    step1 = step2 = 2.0 * span / (grid_points - 1)
    for _ in range(depth + 1):
        best = _search_box(f, g, s, y, box, grid_points, ddp_bound, workers)
        if best is None:
            break
        candidates.append(best)
        a1, a2 = best[0][4], best[0][5]
        box = (
            max(a1 - step1, box[0]),
            min(a1 + step1, box[1]),
            max(a2 - step2, box[2]),
            min(a2 + step2, box[3]),
        )
        step1 = (box[1] - box[0]) / (grid_points - 1)
        step2 = (box[3] - box[2]) / (grid_points - 1)
        if step1 == 0.0 and step2 == 0.0:
            break

    if not candidates:
        raise InfeasibleConstraintError(
            f"no (a1, a2) on the grid satisfies |DDP| <= {ddp_bound} (n0={n0}, n1={n1})"
        )
    key, gap = min(candidates, key=lambda c: c[0])
    return CombinedClassifier(
        a1=key[4],
        a2=key[5],
        constraint=float(ddp_bound),
        val_accuracy=-key[0] / y.size,
        val_ddp=gap,
    )


# =============================================================================
# Per-group thresholds
# =============================================================================


@dataclass(frozen=True, slots=True)
class GroupThresholds:
    """Decision ``1(f > t_s)`` using the true protected attribute."""

    t0: float
    t1: float

    def predict(self, f: FloatArray, protected: Any) -> IntArray:
        s = np.asarray(protected)
        return (np.asarray(f) > np.where(s == 1, self.t1, self.t0)).astype(np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {"t0": self.t0, "t1": self.t1}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> GroupThresholds:
        return cls(jsonio.ParseFloat(doc["t0"]), jsonio.ParseFloat(doc["t1"]))


def _threshold_candidates(f: FloatArray) -> FloatArray:
    u = np.unique(f)
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate([[-math.inf], mids, [math.inf]])


def _threshold_table(
    f: FloatArray, y: IntArray
) -> tuple[FloatArray, IntArray, IntArray]:
    """Candidate thresholds with the positive and correct counts of each."""
    t = _threshold_candidates(f)
    pos_scores = np.sort(f[y == 1])
    neg_scores = np.sort(f[y == 0])
    tp = pos_scores.size - np.searchsorted(pos_scores, t, side="right")
    fp = neg_scores.size - np.searchsorted(neg_scores, t, side="right")
    return t, tp + fp, tp + neg_scores.size - fp


def lipton_thresholds(
    f_scores: Any, protected: Any, targets: Any, ddp_bound: float, chunk: int = 256
) -> GroupThresholds:
    """Accuracy-optimal per-group thresholds subject to ``|DDP| ≤ ddp_bound``.

    Enumerates every pair of candidate thresholds (midpoints between distinct
    group scores plus ``±inf``), so the result is the exact optimum. Ties go
    to smaller ``|DDP|``, then to closer thresholds, then to smaller ``t0``.
    """
    if not (ddp_bound >= 0.0):
        raise ArgumentError(f"ddp_bound must be nonnegative, got {ddp_bound}")
    f = np.asarray(f_scores, dtype=np.float64)
    s = _binary("protected", protected)
    y = _binary("targets", targets)
    if not (f.shape == s.shape == y.shape):
        raise ArgumentError("scores, protected and targets must have equal lengths")
    if not np.all(np.isfinite(f)):
        raise ArgumentError("f_scores must be finite")
    n0, n1 = _group_sizes(s)

    t0, pos0, cor0 = _threshold_table(f[s == 0], y[s == 0])
    t1, pos1, cor1 = _threshold_table(f[s == 1], y[s == 1])

    best: tuple[int, float, float, float, float] | None = None
    for start in range(0, t0.size, chunk):
        rows = slice(start, start + chunk)
        correct = cor0[rows, None] + cor1[None, :]
        gap = np.abs(_rate_gap(pos0[rows, None], n0, pos1[None, :], n1))
        ta, tb = np.broadcast_arrays(t0[rows, None], t1[None, :])
        with np.errstate(invalid="ignore"):
            dist = np.where(ta == tb, 0.0, np.abs(ta - tb))
        feasible = gap <= ddp_bound
        if not np.any(feasible):
            continue
        c, d, w = correct[feasible], gap[feasible], dist[feasible]
        a, b = ta[feasible], tb[feasible]
        j = np.lexsort((b, a, w, d, -c))[0]
        key = (-int(c[j]), float(d[j]), float(w[j]), float(a[j]), float(b[j]))
        if best is None or key < best:
            best = key
    # both constant classifiers have DDP 0, so some pair is always feasible
    assert best is not None
    return GroupThresholds(t0=best[3], t1=best[4])


def equidistant_bounds(ddp_unconstrained: float, count: int = 20) -> list[float]:
    """``count`` DDP bounds from 0 to ``|ddp_unconstrained|``, endpoints included."""
    if count < 2:
        raise ArgumentError(f"count must be >= 2, got {count}")
    return [float(b) for b in np.linspace(0.0, abs(ddp_unconstrained), count)]
