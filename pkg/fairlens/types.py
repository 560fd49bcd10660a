"""Shared value types: split tags, training methods and materialized scores.

These live apart from the domain modules because ``data``, ``nn``,
``fairness`` and ``audit`` all exchange them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from fairlens.errors import ArgumentError

__all__ = ["Split", "Method", "Scores", "FloatArray", "IntArray"]

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


class Split(str, Enum):
    """Dataset partition tag; the value is the CSV serialization."""

    TRAIN = "train"
    VALIDATION = "val"
    TEST = "test"

    @classmethod
    def parse(cls, text: str) -> Split:
        key = text.strip().lower()
        if key == "validation":
            return cls.VALIDATION
        try:
            return cls(key)
        except ValueError:
            raise ArgumentError(f"unknown split tag {text!r}") from None

    def __str__(self) -> str:
        return self.value


class Method(str, Enum):
    """Classifier families a sweep can train or derive."""

    UNCONSTRAINED = "unconstrained"
    REG_SQUARED = "reg_squared"
    REG_ABS = "reg_abs"
    MASSAGING = "massaging"
    TWO_HEAD = "two_head"
    LIPTON = "lipton"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, slots=True)
class Scores:
    """Head outputs for the rows of one split, in dataset row order.

    ``f_scores`` are pre-sigmoid logits of the target head; ``g_scores`` are
    the raw group-head regressions and are ``None`` for single-head models.
    """

    f_scores: FloatArray
    g_scores: FloatArray | None
    split: Split

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.f_scores)):
            raise ArgumentError("f_scores must be finite")
        if self.g_scores is not None:
            if self.g_scores.shape != self.f_scores.shape:
                raise ArgumentError("f_scores and g_scores must have the same length")
            if not np.all(np.isfinite(self.g_scores)):
                raise ArgumentError("g_scores must be finite")

    def __len__(self) -> int:
        return int(self.f_scores.shape[0])

    def require_g(self) -> FloatArray:
        if self.g_scores is None:
            raise ArgumentError("scores come from a single-head model; g_scores required")
        return self.g_scores
