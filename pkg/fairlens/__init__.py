"""fairlens - fairness trade-offs and disparate-treatment audits for binary classifiers.

Train group-fair networks (regularized, massaged, or two-headed with
post-hoc combination), sweep their accuracy against demographic parity, and
audit whether "fair" models secretly learned the protected attribute.

Layout:
    fairlens.data       synthetic and CSV datasets, stratified splits and batches
    fairlens.nn         two-head MLP, manual backprop, Adam, model selection
    fairlens.fairness   DDP metrics, regularizers, massaging, combination search
    fairlens.stats      logistic regression, Kendall tau, order statistics
    fairlens.audit      awareness probes, reconstruction, counterfactual flips
    fairlens.cli        the ``fairlens`` command

Example:
    >>> from fairlens import Method, SyntheticSpec, TrainConfig, generate, train
    >>> ds = generate(SyntheticSpec(n_samples=2000, seed=1))
    >>> model = train(ds, TrainConfig(method=Method.TWO_HEAD, epochs=5))

"""

from __future__ import annotations

__version__ = "0.1.0"

from fairlens.data import CsvSource, Dataset, SyntheticSpec, generate, load_csv, save_csv
from fairlens.errors import Error
from fairlens.fairness import (
    CombinedClassifier,
    FairnessReport,
    GroupThresholds,
    combine_grid_search,
    ddp,
    evaluate,
    lipton_thresholds,
    massage,
)
from fairlens.nn import TrainConfig, TwoHeadModel, load_model, save_model, train
from fairlens.result import Err, Ok, Result
from fairlens.types import Method, Scores, Split

__all__ = [
    "__version__",
    # Result types
    "Ok",
    "Err",
    "Result",
    "Error",
    # Shared types
    "Method",
    "Scores",
    "Split",
    # Data
    "Dataset",
    "SyntheticSpec",
    "CsvSource",
    "generate",
    "load_csv",
    "save_csv",
    # Training
    "TrainConfig",
    "TwoHeadModel",
    "train",
    "save_model",
    "load_model",
    # Fairness
    "FairnessReport",
    "CombinedClassifier",
    "GroupThresholds",
    "ddp",
    "evaluate",
    "massage",
    "combine_grid_search",
    "lipton_thresholds",
]
