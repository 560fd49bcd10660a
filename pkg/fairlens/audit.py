"""Disparate-treatment audits of trained classifiers.

Four procedures, all pure over immutable models and score vectors:

- :func:`probe_awareness` fits a linear probe for ``s`` on each model's
  frozen last layer and correlates probe accuracy with the fairness weight.
- :func:`reconstruct_fair` and :func:`recover_unconstrained` fit the
  two-parameter rules that map between a fair model's decisions and the
  heads of a two-head model, measured against a reseed baseline.
- :func:`counterfactual_flips` swaps each individual's group score for the
  opposite group's median and counts changed decisions.
- :func:`disadvantaged_region` lists the rows whose recovered decision
  depends on the inferred group.

Example:
    from fairlens.audit import counterfactual_flips
    from fairlens.fairness import CombinedClassifier

    report = counterfactual_flips(f, g, s, CombinedClassifier(-2.0, 0.5, 0.05))
    report.flip_fraction_total

"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from fairlens import log, nn
from fairlens.data import Dataset
from fairlens.errors import ArgumentError, InsufficientDataError, UndefinedMetricError
from fairlens.fairness import CombinedClassifier
from fairlens.runtime import parallel_map
from fairlens.stats import KendallResult, kendall_tau, logistic_fit, median
from fairlens.types import FloatArray, IntArray, Split

__all__ = [
    "AwarenessCurve",
    "Direction",
    "ReconstructionResult",
    "CounterfactualReport",
    "RegionResult",
    "probe_accuracy",
    "probe_awareness",
    "reconstruct_fair",
    "recover_unconstrained",
    "pairwise_disagreement",
    "reseed_baseline",
    "counterfactual_flips",
    "disadvantaged_region",
    "NEAR_BINARY_TOL",
]

NEAR_BINARY_TOL = 0.1
QUARTILE = 0.25


def _decisions(f: FloatArray) -> IntArray:
    return (np.asarray(f) > 0).astype(np.int64)


# =============================================================================
# Awareness probes
# =============================================================================


@dataclass(frozen=True, slots=True)
class AwarenessCurve:
    """Probe accuracy per model, ordered as given, with the quartile filter applied."""

    lambdas: FloatArray
    probe_accuracies: FloatArray
    target_accuracies: FloatArray
    kept_mask: np.ndarray
    kendall: KendallResult
    cutoff: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "lambdas": self.lambdas.tolist(),
            "probe_accuracies": self.probe_accuracies.tolist(),
            "target_accuracies": self.target_accuracies.tolist(),
            "kept_mask": self.kept_mask.tolist(),
            "cutoff": self.cutoff,
            "kendall": {
                "tau": self.kendall.tau,
                "p_value": self.kendall.p_value,
                "n_pairs": self.kendall.n_pairs,
                "method": self.kendall.method,
            },
        }


def probe_accuracy(
    Z_train: FloatArray, s_train: Any, Z_test: FloatArray, s_test: Any, ridge: float = 1e-6
) -> float:
    """Held-out accuracy of a logistic probe for s on a frozen representation."""
    fit = logistic_fit(Z_train, s_train, ridge=ridge)
    return float(np.mean(fit.predict(Z_test) == np.asarray(s_test)))


def _probe_one(model: nn.TwoHeadModel, ds: Dataset) -> tuple[float, float]:
    probe = probe_accuracy(
        nn.last_layer(model, ds, Split.TRAIN),
        ds.s(Split.TRAIN),
        nn.last_layer(model, ds, Split.TEST),
        ds.s(Split.TEST),
    )
    f = nn.score(model, ds, Split.TEST).f_scores
    target = float(np.mean(_decisions(f) == ds.y(Split.TEST)))
    return probe, target


def probe_awareness(
    models: Sequence[tuple[float, nn.TwoHeadModel]],
    ds: Dataset,
    workers: int | None = None,
    logger: log.Logger | None = None,
) -> AwarenessCurve:
    """Kendall tau between λ and probe accuracy over the models that still learned the task.

    A model is kept when its test accuracy exceeds the lowest quartile of
    the range from the constant classifier to the λ=0 model (the smallest
    λ when no λ=0 model is given).
    """
    if not models:
        raise InsufficientDataError("probe_awareness needs at least 3 models, got 0")
    lambdas = np.array([float(lam) for lam, _ in models])
    results = parallel_map(lambda m: _probe_one(m[1], ds), list(models), workers)
    probes = np.array([p for p, _ in results])
    targets = np.array([t for _, t in results])

    base = float(np.mean(ds.y(Split.TEST)))
    const_acc = max(base, 1.0 - base)
    zero = np.flatnonzero(lambdas == 0.0)
    ref = int(zero[0]) if zero.size else int(np.argmin(lambdas))
    cutoff = const_acc + QUARTILE * (float(targets[ref]) - const_acc)
    kept = targets > cutoff
    if logger is not None:
        for lam, p, t, k in zip(lambdas, probes, targets, kept):
            logger.Printf("probe lambda=%g probe_acc=%.4f target_acc=%.4f kept=%s", lam, p, t, k)

    n_kept = int(np.count_nonzero(kept))
    if n_kept < 3:
        raise InsufficientDataError(
            f"probe_awareness needs at least 3 models above the accuracy cutoff "
            f"{cutoff:.4f}, got {n_kept}"
        )
    tau = kendall_tau(lambdas[kept], probes[kept])
    return AwarenessCurve(lambdas, probes, targets, kept, tau, cutoff)


# =============================================================================
# Reconstruction
# =============================================================================


class Direction(str, Enum):
    FAIR_FROM_HEADS = "fair_from_heads"
    UNCONSTRAINED_FROM_FAIR = "unconstrained_from_fair"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, slots=True)
class ReconstructionResult:
    """A fitted two-parameter rule and how well it reproduces its target decisions.

    ``coefficients`` are ``(a1, a2)`` of ``1(f + a1·g + a2 > 0)`` for
    ``fair_from_heads`` and ``(b1, b2)`` of ``1(r − b1·g − b2 > 0)`` for
    ``unconstrained_from_fair``.
    """

    direction: Direction
    coefficients: tuple[float, float]
    agreement: float
    baseline_agreement: float = math.nan
    fit_agreement: float = math.nan
    converged: bool = True
    fallback_used: bool = False
    degenerate: bool = False

    def rule(self) -> tuple[float, float]:
        """(c1, c2) such that the decision is ``1(score + c1·g + c2 > 0)``."""
        c1, c2 = self.coefficients
        if self.direction is Direction.UNCONSTRAINED_FROM_FAIR:
            return -c1, -c2
        return c1, c2

    def predict(self, score: FloatArray, g: FloatArray) -> IntArray:
        c1, c2 = self.rule()
        return CombinedClassifier(c1, c2, math.nan).predict(score, g)

    def to_dict(self) -> dict[str, Any]:
        return {
            "direction": self.direction.value,
            "coefficients": list(self.coefficients),
            "agreement": self.agreement,
            "baseline_agreement": self.baseline_agreement,
            "fit_agreement": self.fit_agreement,
            "converged": self.converged,
            "fallback_used": self.fallback_used,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True, slots=True)
class _OffsetFit:
    weight: float
    intercept: float
    converged: bool
    fallback_used: bool
    degenerate: bool


def _fit_with_offset(offset: FloatArray, feature: FloatArray, target: IntArray) -> _OffsetFit:
    """Logistic fit of target on feature with offset coefficient pinned to 1."""
    if np.all(target == target[0]):
        return _OffsetFit(0.0, math.inf if target[0] == 1 else -math.inf, True, False, True)
    pinned = logistic_fit(feature[:, None], target, offset=offset)
    if pinned.converged:
        return _OffsetFit(float(pinned.weights[0]), pinned.intercept, True, False, False)
    free = logistic_fit(np.column_stack([offset, feature]), target)
    w_off, w_feat = float(free.weights[0]), float(free.weights[1])
    if w_off > 0 and free.converged:
        return _OffsetFit(w_feat / w_off, free.intercept / w_off, True, True, False)
    return _OffsetFit(float(pinned.weights[0]), pinned.intercept, False, False, False)


def _agreement(a: IntArray, b: Any) -> float:
    return float(np.mean(np.asarray(a) == np.asarray(b)))


def _split_arrays(name: str, m: Mapping[Split, Any], split: Split) -> np.ndarray:
    if split not in m:
        raise ArgumentError(f"{name} has no {split.value} split")
    return np.asarray(m[split])


def reconstruct_fair(
    scores: Mapping[Split, Any],
    fair_preds: Mapping[Split, Any],
    split_fit: Split = Split.VALIDATION,
    split_eval: Split = Split.TEST,
    baseline_agreement: float = math.nan,
) -> ReconstructionResult:
    """Finds ``(a1, a2)`` with ``1(f + a1·g + a2 > 0) ≈`` the fair model's decisions.

    ``scores`` maps splits to two-head :class:`~fairlens.types.Scores`;
    ``fair_preds`` maps splits to the fair model's binary decisions.
    """
    fit_scores = scores[split_fit] if split_fit in scores else None
    eval_scores = scores[split_eval] if split_eval in scores else None
    if fit_scores is None or eval_scores is None:
        raise ArgumentError("scores must cover split_fit and split_eval")
    y_fit = _split_arrays("fair_preds", fair_preds, split_fit).astype(np.int64)
    y_eval = _split_arrays("fair_preds", fair_preds, split_eval).astype(np.int64)

    fit = _fit_with_offset(fit_scores.f_scores, fit_scores.require_g(), y_fit)
    result = ReconstructionResult(
        direction=Direction.FAIR_FROM_HEADS,
        coefficients=(fit.weight, fit.intercept),
        agreement=math.nan,
        baseline_agreement=baseline_agreement,
        converged=fit.converged,
        fallback_used=fit.fallback_used,
        degenerate=fit.degenerate,
    )
    return _with_agreements(
        result,
        (fit_scores.f_scores, fit_scores.require_g(), y_fit),
        (eval_scores.f_scores, eval_scores.require_g(), y_eval),
    )


def recover_unconstrained(
    fair_scores: Mapping[Split, Any],
    g_scores: Mapping[Split, Any],
    unconstrained_preds: Mapping[Split, Any],
    split_fit: Split = Split.VALIDATION,
    split_eval: Split = Split.TEST,
    baseline_agreement: float = math.nan,
) -> ReconstructionResult:
    """Finds ``(b1, b2)`` with ``1(r − b1·g − b2 > 0) ≈`` the unconstrained decisions."""
    r_fit = _split_arrays("fair_scores", fair_scores, split_fit).astype(np.float64)
    r_eval = _split_arrays("fair_scores", fair_scores, split_eval).astype(np.float64)
    g_fit = _split_arrays("g_scores", g_scores, split_fit).astype(np.float64)
    g_eval = _split_arrays("g_scores", g_scores, split_eval).astype(np.float64)
    y_fit = _split_arrays("unconstrained_preds", unconstrained_preds, split_fit).astype(np.int64)
    y_eval = _split_arrays("unconstrained_preds", unconstrained_preds, split_eval).astype(np.int64)
    if r_fit.shape != g_fit.shape or r_eval.shape != g_eval.shape:
        raise ArgumentError("fair_scores and g_scores must have equal lengths per split")

    fit = _fit_with_offset(r_fit, -g_fit, y_fit)
    result = ReconstructionResult(
        direction=Direction.UNCONSTRAINED_FROM_FAIR,
        coefficients=(fit.weight, -fit.intercept),
        agreement=math.nan,
        baseline_agreement=baseline_agreement,
        converged=fit.converged,
        fallback_used=fit.fallback_used,
        degenerate=fit.degenerate,
    )
    return _with_agreements(result, (r_fit, g_fit, y_fit), (r_eval, g_eval, y_eval))


def _with_agreements(
    result: ReconstructionResult,
    fit: tuple[FloatArray, FloatArray, IntArray],
    ev: tuple[FloatArray, FloatArray, IntArray],
) -> ReconstructionResult:
    return replace(
        result,
        fit_agreement=_agreement(result.predict(fit[0], fit[1]), fit[2]),
        agreement=_agreement(result.predict(ev[0], ev[1]), ev[2]),
    )


# =============================================================================
# Reseed baseline
# =============================================================================


def pairwise_disagreement(predictions: Sequence[Any]) -> float:
    """Mean fraction of differing decisions over all pairs of prediction vectors."""
    preds = [np.asarray(p) for p in predictions]
    if len(preds) < 2:
        raise ArgumentError(f"pairwise_disagreement needs at least 2 models, got {len(preds)}")
    if any(p.shape != preds[0].shape for p in preds):
        raise ArgumentError("prediction vectors must have equal lengths")
    total = 0.0
    pairs = 0
    for i in range(len(preds)):
        for j in range(i + 1, len(preds)):
            total += float(np.mean(preds[i] != preds[j]))
            pairs += 1
    return total / pairs


def reseed_baseline(
    ds: Dataset,
    cfg: nn.TrainConfig,
    n_seeds: int,
    seeds: Sequence[int] | None = None,
    workers: int | None = None,
) -> float:
    """Mean pairwise test-decision disagreement of models differing only in seed.

    Seeds default to ``cfg.seed, cfg.seed + 1, ...``.
    """
    if n_seeds < 2:
        raise ArgumentError(f"reseed_baseline needs n_seeds >= 2, got {n_seeds}")
    if seeds is None:
        seeds = [cfg.seed + i for i in range(n_seeds)]
    if len(seeds) != n_seeds:
        raise ArgumentError(f"expected {n_seeds} seeds, got {len(seeds)}")

    def decisions(seed: int) -> IntArray:
        model = nn.train(ds, replace(cfg, seed=seed))
        return _decisions(nn.score(model, ds, Split.TEST).f_scores)

    return pairwise_disagreement(parallel_map(decisions, list(seeds), workers))


# =============================================================================
# Counterfactual flips
# =============================================================================


@dataclass(frozen=True, slots=True)
class CounterfactualReport:
    """Decisions changed by swapping g for the opposite group's median.

    Fractions are per group size; ``flip_fraction_total`` is over all rows.
    """

    flip_fraction_total: float
    flips_0to1_group: tuple[float, float]
    flips_1to0_group: tuple[float, float]
    medians: tuple[float, float]
    flips_0to1_count: tuple[int, int] = (0, 0)
    flips_1to0_count: tuple[int, int] = (0, 0)
    n_per_group: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "flip_fraction_total": self.flip_fraction_total,
            "flips_0to1_group": list(self.flips_0to1_group),
            "flips_1to0_group": list(self.flips_1to0_group),
            "medians": list(self.medians),
            "flips_0to1_count": list(self.flips_0to1_count),
            "flips_1to0_count": list(self.flips_1to0_count),
            "n_per_group": list(self.n_per_group),
        }


def counterfactual_flips(
    f_scores: Any, g_scores: Any, protected: Any, classifier: CombinedClassifier
) -> CounterfactualReport:
    f = np.asarray(f_scores, dtype=np.float64)
    g = np.asarray(g_scores, dtype=np.float64)
    s = np.asarray(protected).astype(np.int64)
    if not (f.shape == g.shape == s.shape):
        raise ArgumentError("f_scores, g_scores and protected must have equal lengths")
    n0 = int(np.count_nonzero(s == 0))
    n1 = int(np.count_nonzero(s == 1))
    if n0 == 0 or n1 == 0:
        raise UndefinedMetricError(f"both protected groups must be present (n0={n0}, n1={n1})")

    med0, med1 = median(g[s == 0]), median(g[s == 1])
    g_cf = np.where(s == 1, med0, med1)
    orig = classifier.predict(f, g)
    cf = classifier.predict(f, g_cf)
    up = (orig == 0) & (cf == 1)
    down = (orig == 1) & (cf == 0)

    sizes = (n0, n1)
    up_count = tuple(int(np.count_nonzero(up & (s == k))) for k in (0, 1))
    down_count = tuple(int(np.count_nonzero(down & (s == k))) for k in (0, 1))
    return CounterfactualReport(
        flip_fraction_total=int(np.count_nonzero(up | down)) / s.size,
        flips_0to1_group=(up_count[0] / n0, up_count[1] / n1),
        flips_1to0_group=(down_count[0] / n0, down_count[1] / n1),
        medians=(med0, med1),
        flips_0to1_count=(up_count[0], up_count[1]),
        flips_1to0_count=(down_count[0], down_count[1]),
        n_per_group=sizes,
    )


# =============================================================================
# Disadvantaged region
# =============================================================================


@dataclass(frozen=True, slots=True)
class RegionResult:
    """Rows whose recovered decision differs between g=0 and g=1.

    ``interval`` is the half-open ``(lo, hi]`` range of scores involved;
    ``(0, 0)`` when the rule ignores g.
    """

    indices: IntArray
    interval: tuple[float, float]
    near_binary_fraction: float
    rule: tuple[float, float] = field(default=(0.0, 0.0))

    def to_dict(self) -> dict[str, Any]:
        return {
            "indices": self.indices.tolist(),
            "interval": list(self.interval),
            "near_binary_fraction": self.near_binary_fraction,
            "rule": list(self.rule),
        }


def disadvantaged_region(
    f_scores: Any, g_scores: Any, recovery: ReconstructionResult
) -> RegionResult:
    """Indices where ``1(f + c1·g + c2 > 0)`` changes between g=0 and g=1."""
    f = np.asarray(f_scores, dtype=np.float64)
    g = np.asarray(g_scores, dtype=np.float64)
    if f.shape != g.shape:
        raise ArgumentError("f_scores and g_scores must have equal lengths")
    c1, c2 = recovery.rule()
    near_binary = np.minimum(np.abs(g), np.abs(g - 1.0)) <= NEAR_BINARY_TOL
    near = float(np.mean(near_binary)) if g.size else 0.0
    if c1 == 0.0 or not (math.isfinite(c1) and math.isfinite(c2)):
        return RegionResult(np.zeros(0, dtype=np.int64), (0.0, 0.0), near, (c1, c2))

    rule = CombinedClassifier(c1, c2, math.nan)
    at0 = rule.predict(f, np.zeros_like(f))
    at1 = rule.predict(f, np.ones_like(f))
    indices = np.flatnonzero(at0 != at1).astype(np.int64)
    lo, hi = sorted((-c2, -c1 - c2))
    return RegionResult(indices, (lo, hi), near, (c1, c2))
