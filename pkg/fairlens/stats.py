"""Statistical primitives: logistic regression, Kendall's tau, order statistics.

All functions are pure and deterministic. :func:`logistic_fit` starts from
zero and takes Newton steps with step halving, so repeated fits of the same
data return bit-identical parameters.

Example:
    >>> import numpy as np
    >>> from fairlens.stats import kendall_tau, median
    >>>
    >>> kendall_tau([1, 2, 3], [10, 20, 30]).tau
    1.0
    >>> median([1, 2, 3, 4])
    2.0

"""

from __future__ import annotations

import itertools
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.stats import norm

from fairlens.errors import ArgumentError, UndefinedCorrelationError, UndefinedMetricError
from fairlens.types import FloatArray

__all__ = [
    "LogisticFit",
    "KendallResult",
    "logistic_fit",
    "kendall_tau",
    "median",
    "average_precision",
    "EXACT_KENDALL_MAX_N",
]

EXACT_KENDALL_MAX_N = 10

_GRAD_TOL = 1e-8
_PERM_CHUNK = 40320


# =============================================================================
# Logistic regression
# =============================================================================


@dataclass(frozen=True, slots=True)
class LogisticFit:
    """Fitted parameters of ``σ(X·w + b + offset)``."""

    weights: FloatArray
    intercept: float
    offset_used: bool
    converged: bool
    iterations: int
    grad_norm: float = 0.0

    def decision_function(self, X: FloatArray, offset: FloatArray | None = None) -> FloatArray:
        z: FloatArray = np.asarray(X, dtype=np.float64) @ self.weights + self.intercept
        if offset is not None:
            z = z + np.asarray(offset, dtype=np.float64)
        return z

    def predict(self, X: FloatArray, offset: FloatArray | None = None) -> FloatArray:
        return (self.decision_function(X, offset) > 0).astype(np.int64)


def _objective(
    A: FloatArray, y: FloatArray, offset: FloatArray, beta: FloatArray, penalty: FloatArray
) -> float:
    eta = A @ beta + offset
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.sum(penalty * beta**2))


def logistic_fit(
    X: FloatArray,
    y: Sequence[int] | np.ndarray,
    offset: FloatArray | None = None,
    ridge: float = 1e-6,
    fit_intercept: bool = True,
    max_iter: int = 200,
) -> LogisticFit:
    """Maximizes the ridge-penalized mean log-likelihood by Newton's method.

    The intercept is not penalized and ``offset`` enters with its coefficient
    fixed at 1. Convergence means the gradient of the mean objective has
    norm at most 1e-8; after ``max_iter`` steps the fit is returned with
    ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    yv = np.asarray(y, dtype=np.float64)
    if yv.shape != (n,):
        raise ArgumentError(f"y must have length {n}, got shape {yv.shape}")
    if not np.all((yv == 0) | (yv == 1)):
        raise ArgumentError("y must be 0/1")
    if n < k + 1:
        raise ArgumentError(f"need at least {k + 1} rows for {k} features, got {n}")
    if ridge < 0:
        raise ArgumentError(f"ridge must be nonnegative, got {ridge}")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=np.float64)
    if off.shape != (n,):
        raise ArgumentError(f"offset must have length {n}, got shape {off.shape}")

    A = np.column_stack([X, np.ones(n)]) if fit_intercept else X
    p = A.shape[1]
    penalty = np.full(p, ridge)
    if fit_intercept:
        penalty[-1] = 0.0

    beta = np.zeros(p)
    loss = _objective(A, yv, off, beta, penalty)
    converged = False
    grad_norm = math.inf
    it = 0
    for it in range(max_iter + 1):
        mu = np.exp(-np.logaddexp(0.0, -(A @ beta + off)))
        grad = A.T @ (mu - yv) / n + penalty * beta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= _GRAD_TOL:
            converged = True
            break
        if it == max_iter:
            break
        w = mu * (1.0 - mu)
        H = (A.T * w) @ A / n + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]

        t = 1.0
        for _ in range(60):
            candidate = beta - t * step
            new_loss = _objective(A, yv, off, candidate, penalty)
            if new_loss <= loss:
                break
            t *= 0.5
        else:
            break
        if np.array_equal(candidate, beta):
            break
        beta, loss = candidate, new_loss

    weights = beta[:k] if fit_intercept else beta
    intercept = float(beta[-1]) if fit_intercept else 0.0
    return LogisticFit(
        weights=np.array(weights),
        intercept=intercept,
        offset_used=offset is not None,
        converged=converged,
        iterations=it,
        grad_norm=grad_norm,
    )


# =============================================================================
# Kendall's tau
# =============================================================================


@dataclass(frozen=True, slots=True)
class KendallResult:
    tau: float
    p_value: float
    n_pairs: int
    method: Literal["exact", "normal_approx"]


def _pair_signs(v: FloatArray) -> np.ndarray:
    i, j = np.triu_indices(v.size, k=1)
    return np.sign(v[j] - v[i]).astype(np.int64)


def _tie_groups(v: FloatArray) -> np.ndarray:
    _, counts = np.unique(v, return_counts=True)
    return counts[counts > 1].astype(np.float64)


def _mahonian(n: int) -> list[int]:
    """Number of permutations of n items with k inversions, for each k."""
    counts = [1]
    for m in range(2, n + 1):
        nxt = [0] * (len(counts) + m - 1)
        for k, c in enumerate(counts):
            for i in range(m):
                nxt[k + i] += c
        counts = nxt
    return counts


def _exact_p_untied(n: int, s: int) -> float:
    total_pairs = n * (n - 1) // 2
    counts = _mahonian(n)
    extreme = sum(c for d, c in enumerate(counts) if abs(total_pairs - 2 * d) >= abs(s))
    return min(1.0, extreme / math.factorial(n))


def _exact_p_tied(x_signs: np.ndarray, ys: FloatArray, s: int) -> float:
    n = ys.size
    i, j = np.triu_indices(n, k=1)
    perms = itertools.permutations(range(n))
    extreme = 0
    while True:
        chunk = np.array(list(itertools.islice(perms, _PERM_CHUNK)), dtype=np.int64)
        if chunk.size == 0:
            break
        yp = ys[chunk]
        sp = np.sign(yp[:, j] - yp[:, i]).astype(np.int64) @ x_signs
        extreme += int(np.count_nonzero(np.abs(sp) >= abs(s)))
    return min(1.0, extreme / math.factorial(n))


def _normal_p(xs: FloatArray, ys: FloatArray, s: int) -> float:
    n = xs.size
    tx, ty = _tie_groups(xs), _tie_groups(ys)
    v0 = n * (n - 1) * (2 * n + 5)
    vt = float(np.sum(tx * (tx - 1) * (2 * tx + 5)))
    vu = float(np.sum(ty * (ty - 1) * (2 * ty + 5)))
    v1 = float(np.sum(tx * (tx - 1)) * np.sum(ty * (ty - 1)))
    v2 = float(np.sum(tx * (tx - 1) * (tx - 2)) * np.sum(ty * (ty - 1) * (ty - 2)))
    var = (v0 - vt - vu) / 18.0 + v1 / (2.0 * n * (n - 1)) + v2 / (9.0 * n * (n - 1) * (n - 2))
    if var <= 0:
        return 1.0
    return float(min(1.0, 2.0 * norm.sf(abs(s) / math.sqrt(var))))


def kendall_tau(
    xs: Sequence[float] | FloatArray, ys: Sequence[float] | FloatArray
) -> KendallResult:
    """Tau-b with a two-sided p-value for the null of independence.

    For up to ten points the p-value is exact over all permutations of
    ``ys``; beyond that it uses the tie-corrected normal approximation.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError(f"xs and ys must be equal-length vectors, got {x.shape} and {y.shape}")
    n = x.size
    if n < 3:
        raise ArgumentError(f"kendall_tau needs at least 3 points, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ArgumentError("kendall_tau inputs must be finite")

    sx, sy = _pair_signs(x), _pair_signs(y)
    n_x, n_y = int(np.count_nonzero(sx)), int(np.count_nonzero(sy))
    if n_x == 0 or n_y == 0:
        raise UndefinedCorrelationError("kendall_tau is undefined for constant input")
    s = int(sx @ sy)
    tau = s / math.sqrt(n_x * n_y)
    tau = max(-1.0, min(1.0, tau))
    n_pairs = n * (n - 1) // 2

    if n <= EXACT_KENDALL_MAX_N:
        if n_x == n_pairs and n_y == n_pairs:
            p = _exact_p_untied(n, s)
        else:
            p = _exact_p_tied(sx, y, s)
        return KendallResult(tau, p, n_pairs, "exact")
    return KendallResult(tau, _normal_p(x, y, s), n_pairs, "normal_approx")


# =============================================================================
# Order statistics and ranking metrics
# =============================================================================


def median(values: Sequence[float] | FloatArray) -> float:
    """Lower median: the ⌈n/2⌉-th smallest value, always an observed value."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ArgumentError("median of empty input")
    return float(np.partition(v, (v.size - 1) // 2)[(v.size - 1) // 2])


def average_precision(scores: FloatArray, labels: Sequence[int] | np.ndarray) -> float:
    """Area under the step-wise precision-recall curve over distinct thresholds."""
    sc = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    if sc.shape != lab.shape or sc.ndim != 1:
        raise ArgumentError("scores and labels must be equal-length vectors")
    n_pos = int(np.count_nonzero(lab == 1))
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")

    order = np.argsort(-sc, kind="stable")
    sc, lab = sc[order], lab[order]
    tps = np.cumsum(lab == 1)
    fps = np.cumsum(lab != 1)
    cut = np.r_[np.flatnonzero(np.diff(sc)), sc.size - 1]
    tp, fp = tps[cut], fps[cut]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
