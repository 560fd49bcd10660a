"""ReLU MLPs with a target head and an optional group head, trained with Adam.

Gradients are derived by hand. The shared backbone maps ``x`` to the
last-layer representation ``z(x)`` of width ``m``. The target head
``f = z·w_f + b_f`` is a logit; the group head ``g = z·w_g + b_g`` regresses
the protected attribute.

Methods:

- ``unconstrained``: BCE on ``f``.
- ``reg_squared`` / ``reg_abs``: BCE plus ``λ·R(f)`` on every stratified batch.
- ``two_head``: BCE on ``f`` plus squared error of ``g`` against ``s``.

Training is single-threaded and a pure function of (dataset, config): the
same inputs give bit-identical parameters.

Example:
    from fairlens.data import SyntheticSpec, generate
    from fairlens.nn import TrainConfig, train, score
    from fairlens.types import Method, Split

    ds = generate(SyntheticSpec(n_samples=4000))
    model = train(ds, TrainConfig(method=Method.TWO_HEAD, epochs=5))
    s = score(model, ds, Split.TEST)     # s.f_scores, s.g_scores

"""

from __future__ import annotations

import math
import os
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from fairlens import fairness, jsonio, log
from fairlens.data import Dataset, stratified_batches
from fairlens.errors import (
    ArgumentError,
    ParseError,
    SchemaError,
    TrainingDivergedError,
    ValidationError,
)
from fairlens.stats import average_precision
from fairlens.types import FloatArray, Method, Scores, Split

__all__ = [
    "TrainConfig",
    "TwoHeadModel",
    "TRAINABLE_METHODS",
    "SELECTION_RULES",
    "bce_loss",
    "init_model",
    "parameters",
    "with_parameters",
    "loss_and_gradients",
    "train",
    "score",
    "forward_scores",
    "last_layer",
    "compress",
    "save_model",
    "load_model",
    "MODEL_FORMAT_VERSION",
]

MODEL_FORMAT_VERSION = 1

TRAINABLE_METHODS = (Method.UNCONSTRAINED, Method.REG_SQUARED, Method.REG_ABS, Method.TWO_HEAD)
SELECTION_RULES = ("average_precision", "val_loss", "last")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# =============================================================================
# Configuration
# =============================================================================


@dataclass(frozen=True, slots=True)
class TrainConfig:
    """Hyperparameters of one training run. ``lam`` is the fairness weight λ."""

    method: Method = Method.UNCONSTRAINED
    lam: float = 0.0
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    hidden_widths: tuple[int, ...] = (32, 32)
    lr_drop_patience: int = 8
    selection: str = "average_precision"

    def validate(self) -> None:
        if Method(self.method) not in TRAINABLE_METHODS:
            raise ValidationError("method", f"{self.method} is not trained by nn")
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise ValidationError("lambda", f"must be a nonnegative real, got {self.lam}")
        if self.epochs <= 0:
            raise ValidationError("epochs", f"must be positive, got {self.epochs}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ValidationError("learning_rate", f"must be positive, got {self.learning_rate}")
        if self.batch_size <= 0:
            raise ValidationError("batch_size", f"must be positive, got {self.batch_size}")
        if not self.hidden_widths or any(w <= 0 for w in self.hidden_widths):
            raise ValidationError(
                "hidden_widths", f"must be nonempty and positive, got {self.hidden_widths}"
            )
        if self.lr_drop_patience <= 0:
            raise ValidationError(
                "lr_drop_patience", f"must be positive, got {self.lr_drop_patience}"
            )
        if self.selection not in SELECTION_RULES:
            raise ValidationError("selection", f"must be one of {SELECTION_RULES}")

    @property
    def effective_lambda(self) -> float:
        return self.lam if self.method in (Method.REG_SQUARED, Method.REG_ABS) else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": Method(self.method).value,
            "lambda": self.lam,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "hidden_widths": list(self.hidden_widths),
            "lr_drop_patience": self.lr_drop_patience,
            "selection": self.selection,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> TrainConfig:
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = set(cls.__slots__)
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(sorted(unknown)[0], "unknown training option")
        if "method" in doc:
            try:
                doc["method"] = Method(doc["method"])
            except ValueError:
                raise ValidationError("method", f"unknown method {doc['method']!r}") from None
        if "hidden_widths" in doc:
            doc["hidden_widths"] = tuple(int(w) for w in doc["hidden_widths"])
        return cls(**doc)


# =============================================================================
# Model
# =============================================================================


@dataclass(frozen=True, eq=False)
class TwoHeadModel:
    """Backbone layers ``(W, b)`` with ReLU, target head and optional group head.

    Immutable once built; safe to share between threads.
    """

    layers: tuple[tuple[FloatArray, FloatArray], ...]
    w_f: FloatArray
    b_f: float
    w_g: FloatArray | None = None
    b_g: float | None = None
    config: TrainConfig | None = None
    selected_epoch: int = -1
    history: tuple[dict[str, float], ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.layers:
            raise ArgumentError("model needs at least one hidden layer")
        width = self.layers[0][0].shape[0]
        for W, b in self.layers:
            if W.ndim != 2 or W.shape[0] != width or b.shape != (W.shape[1],):
                raise ArgumentError("inconsistent layer shapes")
            width = W.shape[1]
        if self.w_f.shape != (width,):
            raise ArgumentError(f"head_f must have {width} weights, got {self.w_f.shape}")
        if (self.w_g is None) != (self.b_g is None):
            raise ArgumentError("head_g needs both weights and bias")
        if self.w_g is not None and self.w_g.shape != (width,):
            raise ArgumentError(f"head_g must have {width} weights, got {self.w_g.shape}")

    @property
    def n_inputs(self) -> int:
        return int(self.layers[0][0].shape[0])

    @property
    def width(self) -> int:
        """Width m of the last-layer representation."""
        return int(self.layers[-1][0].shape[1])

    @property
    def has_group_head(self) -> bool:
        return self.w_g is not None


def init_model(
    n_inputs: int, hidden_widths: Sequence[int], two_head: bool, rng: np.random.Generator
) -> TwoHeadModel:
    """Kaiming-uniform weights (bound √(6/fan_in)), zero biases."""

    def uniform(fan_in: int, shape: tuple[int, ...]) -> FloatArray:
        bound = math.sqrt(6.0 / fan_in)
        out: FloatArray = rng.uniform(-bound, bound, size=shape)
        return out

    layers = []
    fan_in = n_inputs
    for width in hidden_widths:
        layers.append((uniform(fan_in, (fan_in, width)), np.zeros(width)))
        fan_in = width
    w_f = uniform(fan_in, (fan_in,))
    w_g = uniform(fan_in, (fan_in,)) if two_head else None
    return TwoHeadModel(tuple(layers), w_f, 0.0, w_g, 0.0 if two_head else None)


def parameters(model: TwoHeadModel) -> list[FloatArray]:
    """Parameters as a flat list: W, b per layer, then w_f, b_f, w_g, b_g."""
    params: list[FloatArray] = []
    for W, b in model.layers:
        params += [W, b]
    params += [model.w_f, np.array([model.b_f])]
    if model.w_g is not None:
        params += [model.w_g, np.array([model.b_g])]
    return params


def with_parameters(model: TwoHeadModel, params: Sequence[FloatArray]) -> TwoHeadModel:
    """Inverse of :func:`parameters`; arrays are copied."""
    k = len(model.layers)
    layers = tuple((np.array(params[2 * i]), np.array(params[2 * i + 1])) for i in range(k))
    w_f, b_f = np.array(params[2 * k]), float(params[2 * k + 1][0])
    w_g, b_g = None, None
    if model.w_g is not None:
        w_g, b_g = np.array(params[2 * k + 2]), float(params[2 * k + 3][0])
    return replace(model, layers=layers, w_f=w_f, b_f=b_f, w_g=w_g, b_g=b_g)


def _backbone(model: TwoHeadModel, X: FloatArray) -> tuple[list[FloatArray], list[FloatArray]]:
    """Returns (layer inputs, pre-activations); the last ReLU output is z."""
    inputs, pre = [], []
    a = X
    for W, b in model.layers:
        inputs.append(a)
        h = a @ W + b
        pre.append(h)
        a = np.maximum(h, 0.0)
    inputs.append(a)
    return inputs, pre


def _check_inputs(model: TwoHeadModel, X: FloatArray) -> FloatArray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ArgumentError(
            f"model expects {model.n_inputs} features, got input of shape {X.shape}"
        )
    return X


def forward_scores(model: TwoHeadModel, X: FloatArray) -> tuple[FloatArray, FloatArray | None]:
    """Head outputs ``(f, g)`` for a feature matrix; ``g`` is None without group head."""
    X = _check_inputs(model, X)
    z = _backbone(model, X)[0][-1]
    f = z @ model.w_f + model.b_f
    g = z @ model.w_g + model.b_g if model.w_g is not None else None
    return f, g


def score(model: TwoHeadModel, ds: Dataset, split: Split) -> Scores:
    f, g = forward_scores(model, ds.X(split))
    return Scores(f, g, Split(split))


def last_layer(model: TwoHeadModel, ds: Dataset, split: Split) -> FloatArray:
    """Frozen representation ``z(x)`` for each row of the split, shape (n, m)."""
    X = _check_inputs(model, ds.X(split))
    return _backbone(model, X)[0][-1]


def compress(model: TwoHeadModel, a1: float, a2: float) -> TwoHeadModel:
    """Single-head model scoring ``f + a1·g + a2``."""
    if model.w_g is None or model.b_g is None:
        raise ArgumentError("compress needs a two-head model")
    if not (math.isfinite(a1) and math.isfinite(a2)):
        raise ArgumentError(f"compress needs finite a1, a2, got ({a1}, {a2})")
    return replace(
        model,
        w_f=model.w_f + a1 * model.w_g,
        b_f=model.b_f + a1 * model.b_g + a2,
        w_g=None,
        b_g=None,
    )


# =============================================================================
# Losses and gradients
# =============================================================================


def bce_loss(logits: Any, labels: Any) -> float:
    """Mean binary cross-entropy of sigmoid(logits), in log-sum-exp form."""
    ell = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if ell.shape != y.shape:
        raise ArgumentError(f"length mismatch: {ell.size} logits, {y.size} labels")
    if ell.size == 0:
        raise ArgumentError("bce_loss of empty input")
    return float(np.mean(np.logaddexp(0.0, ell) - y * ell))


def _sigmoid(x: FloatArray) -> FloatArray:
    out: FloatArray = np.exp(-np.logaddexp(0.0, -x))
    return out


def _regularizer(method: Method) -> tuple[Any, Any] | None:
    if method is Method.REG_SQUARED:
        return fairness.reg_squared, fairness.reg_squared_grad
    if method is Method.REG_ABS:
        return fairness.reg_abs, fairness.reg_abs_grad
    return None


def loss_and_gradients(
    model: TwoHeadModel,
    X: FloatArray,
    y: Any,
    s: Any,
    method: Method,
    lam: float = 0.0,
) -> tuple[float, list[FloatArray]]:
    """Objective of ``method`` on one batch and its gradient, ordered like :func:`parameters`.

    The regularizer is skipped when ``lam`` is 0 or a group is absent from
    the batch.
    """
    X = _check_inputs(model, X)
    yv = np.asarray(y, dtype=np.float64)
    sv = np.asarray(s, dtype=np.int64)
    n = X.shape[0]
    inputs, pre = _backbone(model, X)
    z = inputs[-1]
    f = z @ model.w_f + model.b_f

    loss = bce_loss(f, yv)
    df = (_sigmoid(f) - yv) / n

    reg = _regularizer(Method(method))
    if reg is not None and lam != 0.0 and 0 < np.count_nonzero(sv) < n:
        value, grad = reg
        loss += lam * value(f, sv)
        df = df + lam * grad(f, sv)

    dz = np.outer(df, model.w_f)
    grads_head = [z.T @ df, np.array([df.sum()])]

    if Method(method) is Method.TWO_HEAD:
        if model.w_g is None:
            raise ArgumentError("two_head objective needs a group head")
        g = z @ model.w_g + model.b_g
        resid = g - sv
        loss += float(np.mean(resid * resid))
        dg = 2.0 * resid / n
        dz = dz + np.outer(dg, model.w_g)
        grads_head += [z.T @ dg, np.array([dg.sum()])]
    elif model.w_g is not None:
        grads_head += [np.zeros_like(model.w_g), np.zeros(1)]

    grads_layers: list[FloatArray] = []
    for i in range(len(model.layers) - 1, -1, -1):
        W, _ = model.layers[i]
        dpre = dz * (pre[i] > 0)
        grads_layers = [inputs[i].T @ dpre, dpre.sum(axis=0), *grads_layers]
        dz = dpre @ W.T
    return loss, grads_layers + grads_head


def _objective(model: TwoHeadModel, X: FloatArray, y: Any, s: Any, cfg: TrainConfig) -> float:
    """Full-split objective, used for the learning-rate schedule."""
    f, g = forward_scores(model, X)
    loss = bce_loss(f, y)
    method = Method(cfg.method)
    reg = _regularizer(method)
    lam = cfg.effective_lambda
    if reg is not None and lam != 0.0:
        loss += lam * reg[0](f, s)
    if method is Method.TWO_HEAD and g is not None:
        loss += float(np.mean((g - np.asarray(s)) ** 2))
    return loss


# =============================================================================
# Training
# =============================================================================


class _Adam:
    __slots__ = ("m", "v", "t")

    def __init__(self, params: list[FloatArray]):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[FloatArray], grads: list[FloatArray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1**self.t
        c2 = 1.0 - ADAM_BETA2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def train(ds: Dataset, cfg: TrainConfig, logger: log.Logger | None = None) -> TwoHeadModel:
    """Trains one model and returns the snapshot chosen by ``cfg.selection``.

    The learning rate is divided by 10 after ``lr_drop_patience`` epochs
    without a new best validation objective. Average-precision selection
    keeps the earliest epoch among ties.
    """
    cfg.validate()
    method = Method(cfg.method)
    lam = cfg.effective_lambda
    rng = np.random.default_rng(int(cfg.seed) & ((1 << 64) - 1))
    model = init_model(ds.n_features, cfg.hidden_widths, method is Method.TWO_HEAD, rng)
    params = [np.array(p) for p in parameters(model)]
    adam = _Adam(params)

    X, y, s = ds.features, ds.targets, ds.protected
    X_val, y_val, s_val = ds.X(Split.VALIDATION), ds.y(Split.VALIDATION), ds.s(Split.VALIDATION)
    batch_size = min(cfg.batch_size, ds.indices(Split.TRAIN).size)

    lr = cfg.learning_rate
    best_val_loss = math.inf
    stale = 0
    best_metric = -math.inf
    selected: TwoHeadModel | None = None
    selected_epoch = -1
    history: list[dict[str, float]] = []

    for epoch in range(cfg.epochs):
        batches = stratified_batches(ds, Split.TRAIN, batch_size, cfg.seed, epoch)
        epoch_loss = 0.0
        for b, idx in enumerate(batches):
            current = with_parameters(model, params)
            loss, grads = loss_and_gradients(current, X[idx], y[idx], s[idx], method, lam)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            adam.step(params, grads, lr)
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingDivergedError(epoch, b, loss)
            epoch_loss += loss * idx.size

        snapshot = with_parameters(model, params)
        val_loss = _objective(snapshot, X_val, y_val, s_val, cfg)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, len(batches), val_loss)
        val_ap = (
            average_precision(forward_scores(snapshot, X_val)[0], y_val)
            if np.any(y_val == 1)
            else math.nan
        )
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss / ds.indices(Split.TRAIN).size,
                "val_loss": val_loss,
                "val_ap": val_ap,
                "lr": lr,
            }
        )
        if logger is not None:
            logger.Printf(
                "%s lambda=%g seed=%d epoch %d: train_loss=%.6f val_loss=%.6f val_ap=%.6f lr=%g",
                method.value,
                cfg.lam,
                cfg.seed,
                epoch,
                history[-1]["train_loss"],
                val_loss,
                val_ap,
                lr,
            )

        if cfg.selection == "average_precision" and not math.isnan(val_ap):
            metric = val_ap
        elif cfg.selection != "last":
            metric = -val_loss
        else:
            metric = float(epoch)
        if metric > best_metric:
            best_metric = metric
            selected = snapshot
            selected_epoch = epoch

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.lr_drop_patience:
                lr /= 10.0
                stale = 0

    assert selected is not None
    return replace(selected, config=cfg, selected_epoch=selected_epoch, history=tuple(history))


# =============================================================================
# Persistence
# =============================================================================


def _model_doc(model: TwoHeadModel) -> dict[str, Any]:
    head_g = None
    if model.w_g is not None:
        head_g = {"weights": model.w_g.tolist(), "bias": model.b_g}
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "layers": [
            {"shape": list(W.shape), "weights": W.tolist(), "bias": b.tolist()}
            for W, b in model.layers
        ],
        "head_f": {"weights": model.w_f.tolist(), "bias": model.b_f},
        "head_g": head_g,
        "config": model.config.to_dict() if model.config is not None else None,
        "selected_epoch": model.selected_epoch,
        "history": list(model.history),
    }


def save_model(model: TwoHeadModel, path: str | os.PathLike[str]) -> None:
    """Writes versioned JSON; floats round-trip bit-exactly."""
    jsonio.WriteFileAtomic(path, _model_doc(model))


def load_model(path: str | os.PathLike[str]) -> TwoHeadModel:
    doc = jsonio.ReadFile(path).unwrap()
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: model file must hold a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported model format_version {version!r}")
    try:
        layers = []
        for layer in doc["layers"]:
            W = np.array(layer["weights"], dtype=np.float64).reshape(layer["shape"])
            layers.append((W, np.array(layer["bias"], dtype=np.float64)))
        head_f = doc["head_f"]
        head_g = doc.get("head_g")
        config = doc.get("config")
        return TwoHeadModel(
            layers=tuple(layers),
            w_f=np.array(head_f["weights"], dtype=np.float64),
            b_f=float(head_f["bias"]),
            w_g=np.array(head_g["weights"], dtype=np.float64) if head_g else None,
            b_g=float(head_g["bias"]) if head_g else None,
            config=TrainConfig.from_dict(config) if config else None,
            selected_epoch=int(doc.get("selected_epoch", -1)),
            history=tuple(doc.get("history", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(0, f"{path}: malformed model: {e}") from e
