"""Command-line harness: generate, sweep, table1, audit, tradeoff-plot-data.

Every command reads one JSON experiment config (see :mod:`fairlens.config`)
and works inside its ``output_dir``::

    <output_dir>/
        config.resolved.json
        manifest.json
        dataset.csv, dataset.json            (generate)
        runs/<run id>/model.json             (trained runs)
        runs/<run id>/scores.json
        runs/<run id>/report.json
        tradeoff.csv                         (sweep)
        tradeoff_plot.csv                    (tradeoff-plot-data)
        table1_50.csv, table1_80.csv         (table1)
        audit/<method>_seed<k>.json          (audit)
        audit/two_head_seed<k>.json
        audit/embeddings_seed<k>.csv

Runs are keyed by a fingerprint of the dataset and training settings, so a
second ``sweep`` with the same config trains nothing.

Exit codes: 0 success, 1 I/O or other error, 2 config error, 3 missing sweep
artifacts, 4 some runs failed.

Example:
    $ fairlens sweep --config experiment.json --jobs 4
    $ fairlens table1 --config experiment.json --reduction 0.8

"""

from __future__ import annotations

import argparse
import functools
import hashlib
import math
import os
import sys
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from fairlens import __version__, csvio, errors, jsonio, log, nn
from fairlens.audit import (
    ReconstructionResult,
    counterfactual_flips,
    disadvantaged_region,
    pairwise_disagreement,
    probe_awareness,
    reconstruct_fair,
    recover_unconstrained,
)
from fairlens.config import ExperimentConfig, canonical_json, config_hash, load_config
from fairlens.data import Dataset, save_csv
from fairlens.errors import (
    ConfigError,
    DependencyError,
    Error,
    PathError,
    RunFailuresError,
    ValidationError,
)
from fairlens.fairness import (
    CombinedClassifier,
    GroupThresholds,
    combine_grid_search,
    ddp,
    equidistant_bounds,
    evaluate,
    lipton_thresholds,
    massage,
)
from fairlens.manifest import RunEntry, RunManifest
from fairlens.result import Err, Ok, Result, attempt
from fairlens.runtime import GoGroup
from fairlens.types import Method, Scores, Split

__all__ = [
    "RunSpec",
    "plan_runs",
    "cmd_generate",
    "cmd_sweep",
    "cmd_table1",
    "cmd_audit",
    "cmd_plot_data",
    "build_parser",
    "main",
    "TRADEOFF_HEADER",
    "PLOT_HEADER",
    "TABLE1_HEADER",
    "FAILURE_MARKER",
    "REDUCTIONS",
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_CONFIG",
    "EXIT_DEPENDENCY",
    "EXIT_RUN_FAILURES",
]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_RUN_FAILURES = 4

TRADEOFF_HEADER = ["method", "lambda_or_bound", "accuracy", "ddp", "split", "seed"]
PLOT_HEADER = [
    "method",
    "lambda_or_bound",
    "split",
    "accuracy_mean",
    "accuracy_min",
    "accuracy_max",
    "ddp_mean",
    "ddp_min",
    "ddp_max",
    "n_seeds",
]
TABLE1_HEADER = ["method", "seed", "accuracy", "ddp"]
FAILURE_MARKER = "X"
REDUCTIONS = (0.5, 0.8)

SPLITS = (Split.TRAIN, Split.VALIDATION, Split.TEST)
METHOD_ORDER = {m: i for i, m in enumerate(Method)}
SPLIT_ORDER = {s.value: i for i, s in enumerate(SPLITS)}
FAIR_METHODS = (Method.REG_SQUARED, Method.REG_ABS, Method.MASSAGING)
TRAINED = "train"
DERIVED = "bounds"


def _decisions(f: Any) -> np.ndarray:
    return (np.asarray(f) > 0).astype(np.int64)


# =============================================================================
# Run plan
# =============================================================================


@dataclass(frozen=True, slots=True)
class RunSpec:
    """One unit of sweep work.

    ``stage`` is ``train`` for runs that fit a network and ``bounds`` for
    two_head and lipton post-processing, which evaluate every DDP bound
    against an already trained model.
    """

    method: Method
    param: float
    seed: int
    stage: str = TRAINED

    @property
    def run_id(self) -> str:
        p = csvio.FormatFloat(self.param)
        if self.method is Method.TWO_HEAD:
            tail = "bounds/" if self.stage == DERIVED else ""
            return f"two_head/{tail}seed{self.seed}"
        if self.method in (Method.UNCONSTRAINED, Method.LIPTON):
            return f"{self.method.value}/seed{self.seed}"
        if self.method is Method.MASSAGING:
            return f"massaging/frac{p}/seed{self.seed}"
        return f"{self.method.value}/lam{p}/seed{self.seed}"

    @property
    def reports(self) -> bool:
        """Whether the run contributes rows to tradeoff.csv and Table 1."""
        return not (self.method is Method.TWO_HEAD and self.stage == TRAINED)

    def requires(self) -> list[RunSpec]:
        base = RunSpec(Method.UNCONSTRAINED, 0.0, self.seed)
        if self.method is Method.MASSAGING or self.method is Method.LIPTON:
            return [base]
        if self.method is Method.TWO_HEAD and self.stage == DERIVED:
            return [base, RunSpec(Method.TWO_HEAD, 0.0, self.seed)]
        return []


def plan_runs(cfg: ExperimentConfig) -> tuple[list[RunSpec], list[RunSpec]]:
    """Independent trainings first, then the runs that read their artifacts."""
    first: list[RunSpec] = []
    second: list[RunSpec] = []
    for seed in cfg.seeds:
        for method in cfg.methods:
            if method is Method.UNCONSTRAINED:
                first.append(RunSpec(method, 0.0, seed))
            elif method in (Method.REG_SQUARED, Method.REG_ABS):
                first.extend(RunSpec(method, lam, seed) for lam in cfg.lambda_grid)
            elif method is Method.TWO_HEAD:
                first.append(RunSpec(method, 0.0, seed))
                second.append(RunSpec(method, 0.0, seed, DERIVED))
            elif method is Method.MASSAGING:
                second.extend(RunSpec(method, frac, seed) for frac in cfg.massaging_grid)
            else:
                second.append(RunSpec(method, 0.0, seed, DERIVED))
    return first, second


@dataclass(frozen=True, slots=True)
class _Context:
    cfg: ExperimentConfig
    ds: Dataset
    data_fingerprint: str
    logger: log.Logger = field(default_factory=log.Default)
    _cache: dict[str, str] = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return self.cfg.out

    def fingerprint(self, spec: RunSpec) -> str:
        key = spec.run_id
        if key not in self._cache:
            doc: dict[str, Any] = {
                "dataset": self.data_fingerprint,
                "train": self.cfg.train_dict(),
                "run_id": key,
            }
            if spec.stage == DERIVED:
                bounds = self.cfg.ddp_bounds
                doc["ddp_bounds"] = list(bounds) if bounds is not None else None
                doc["n_bounds"] = self.cfg.n_bounds
            digest = hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()
            self._cache[key] = digest
        return self._cache[key]

    def rel(self, spec: RunSpec, name: str) -> str:
        return f"runs/{spec.run_id}/{name}"

    def path(self, spec: RunSpec, name: str) -> Path:
        return self.out / self.rel(spec, name)


# =============================================================================
# Artifacts
# =============================================================================


def _save_scores(path: Path, scores: dict[Split, Scores]) -> None:
    jsonio.WriteFileAtomic(
        path,
        {sp.value: {"f": s.f_scores, "g": s.g_scores} for sp, s in scores.items()},
    )


def _load_scores(path: Path) -> dict[Split, Scores]:
    doc = jsonio.ReadFile(path).unwrap()
    try:
        out: dict[Split, Scores] = {}
        for tag, entry in doc.items():
            sp = Split.parse(tag)
            f = np.array([jsonio.ParseFloat(v) for v in entry["f"]], dtype=np.float64)
            g_raw = entry.get("g")
            g = None if g_raw is None else np.array([jsonio.ParseFloat(v) for v in g_raw])
            out[sp] = Scores(f, g, sp)
        return out
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise errors.SchemaError(f"{path}: malformed scores file: {e}") from e


def _score_all(model: nn.TwoHeadModel, ds: Dataset) -> dict[Split, Scores]:
    return {sp: nn.score(model, ds, sp) for sp in SPLITS}


def _report_rows(
    spec: RunSpec,
    ds: Dataset,
    preds: dict[Split, np.ndarray],
    param: float,
    saturated: bool = False,
) -> list[dict[str, Any]]:
    rows = []
    for sp in SPLITS:
        report = evaluate(preds[sp], ds.y(sp), ds.s(sp), sp)
        rows.append(
            {
                "method": spec.method.value,
                "lambda_or_bound": param,
                "seed": spec.seed,
                "saturated": saturated,
                **report.to_dict(),
            }
        )
    return rows


def _read_rows(path: Path) -> list[dict[str, Any]]:
    doc = jsonio.ReadFile(path).unwrap()
    try:
        return [
            {
                **row,
                "lambda_or_bound": jsonio.ParseFloat(row["lambda_or_bound"]),
                "accuracy": jsonio.ParseFloat(row["accuracy"]),
                "ddp": jsonio.ParseFloat(row["ddp"]),
            }
            for row in doc["rows"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise errors.SchemaError(f"{path}: malformed report: {e}") from e


# =============================================================================
# Runs
# =============================================================================


def _write_trained(
    ctx: _Context, spec: RunSpec, model: nn.TwoHeadModel, param: float
) -> dict[str, str]:
    scores = _score_all(model, ctx.ds)
    nn.save_model(model, ctx.path(spec, "model.json"))
    _save_scores(ctx.path(spec, "scores.json"), scores)
    files = {"model": ctx.rel(spec, "model.json"), "scores": ctx.rel(spec, "scores.json")}
    if spec.reports:
        preds = {sp: _decisions(s.f_scores) for sp, s in scores.items()}
        rows = _report_rows(spec, ctx.ds, preds, param)
        jsonio.WriteFileAtomic(ctx.path(spec, "report.json"), {"rows": rows})
        files["report"] = ctx.rel(spec, "report.json")
    return files


def _run_train(ctx: _Context, spec: RunSpec) -> dict[str, str]:
    cfg = ctx.cfg.train_config(spec.method, spec.param, spec.seed)
    model = nn.train(ctx.ds, cfg, ctx.logger.With(f"{spec.run_id}: "))
    return _write_trained(ctx, spec, model, spec.param)


def _run_massaging(ctx: _Context, spec: RunSpec) -> dict[str, str]:
    ranker = _load_scores(ctx.path(spec.requires()[0], "scores.json"))[Split.TRAIN]
    massaged, plan = massage(ctx.ds, Scores(ranker.f_scores, None, Split.TRAIN), spec.param)
    cfg = ctx.cfg.train_config(Method.UNCONSTRAINED, 0.0, spec.seed)
    model = nn.train(massaged, cfg, ctx.logger.With(f"{spec.run_id}: "))
    files = _write_trained(ctx, spec, model, spec.param)
    jsonio.WriteFileAtomic(ctx.path(spec, "plan.json"), plan.to_dict())
    files["plan"] = ctx.rel(spec, "plan.json")
    return files


def _bounds(ctx: _Context, unconstrained: dict[Split, Scores]) -> list[float]:
    if ctx.cfg.ddp_bounds is not None:
        return list(ctx.cfg.ddp_bounds)
    val = unconstrained[Split.VALIDATION].f_scores
    return equidistant_bounds(ddp(_decisions(val), ctx.ds.s(Split.VALIDATION)), ctx.cfg.n_bounds)


def _saturated(ctx: _Context) -> float:
    """a2 of the constant classifier that is more accurate on validation."""
    return math.inf if float(np.mean(ctx.ds.y(Split.VALIDATION))) >= 0.5 else -math.inf


def _run_bounds(ctx: _Context, spec: RunSpec) -> dict[str, str]:
    ds = ctx.ds
    val = Split.VALIDATION
    unconstrained = _load_scores(ctx.path(spec.requires()[0], "scores.json"))
    rows: list[dict[str, Any]] = []
    rules: list[dict[str, Any]] = []
    if spec.method is Method.TWO_HEAD:
        heads = _load_scores(ctx.path(spec.requires()[1], "scores.json"))
        for bound in _bounds(ctx, unconstrained):
            clf = combine_grid_search(heads[val], ds.s(val), ds.y(val), bound, workers=1)
            preds = {sp: clf.predict(heads[sp].f_scores, heads[sp].require_g()) for sp in SPLITS}
            rows.extend(_report_rows(spec, ds, preds, bound))
            rules.append({"bound": bound, **clf.to_dict()})
        const = CombinedClassifier(0.0, _saturated(ctx), 0.0)
        preds = {sp: const.predict(heads[sp].f_scores, heads[sp].require_g()) for sp in SPLITS}
    else:
        for bound in _bounds(ctx, unconstrained):
            f_val = unconstrained[val].f_scores
            thr = lipton_thresholds(f_val, ds.s(val), ds.y(val), bound)
            preds = {sp: thr.predict(unconstrained[sp].f_scores, ds.s(sp)) for sp in SPLITS}
            rows.extend(_report_rows(spec, ds, preds, bound))
            rules.append({"bound": bound, **thr.to_dict()})
        t = -_saturated(ctx)
        const_thr = GroupThresholds(t, t)
        preds = {sp: const_thr.predict(unconstrained[sp].f_scores, ds.s(sp)) for sp in SPLITS}
    rows.extend(_report_rows(spec, ds, preds, 0.0, saturated=True))
    jsonio.WriteFileAtomic(ctx.path(spec, "report.json"), {"rows": rows, "rules": rules})
    return {"report": ctx.rel(spec, "report.json")}


def _run(ctx: _Context, spec: RunSpec) -> Result[dict[str, str], Error]:
    """Executes one run on a worker thread; failures come back as values."""
    runner: Callable[[_Context, RunSpec], dict[str, str]]
    if spec.stage == DERIVED:
        runner = _run_bounds
    elif spec.method is Method.MASSAGING:
        runner = _run_massaging
    else:
        runner = _run_train
    return attempt(runner, ctx, spec, context=f"run {spec.run_id}")


def _entry(ctx: _Context, spec: RunSpec) -> RunEntry:
    return RunEntry(spec.run_id, spec.method.value, spec.param, spec.seed, ctx.fingerprint(spec))


def _execute(
    ctx: _Context,
    specs: Sequence[RunSpec],
    manifest: RunManifest,
    resume: bool,
    logger: log.Logger,
) -> None:
    pending: list[RunSpec] = []
    for spec in specs:
        fp = ctx.fingerprint(spec)
        if manifest.is_complete(spec.run_id, fp):
            logger.Printf("skip %s: complete", spec.run_id)
            continue
        if resume and manifest.is_failed(spec.run_id, fp):
            logger.Printf("skip %s: failed earlier", spec.run_id)
            continue
        missing = [d.run_id for d in spec.requires() if not manifest.is_complete(
            d.run_id, ctx.fingerprint(d)
        )]
        if missing:
            err = DependencyError(missing[0], "dependency did not complete")
            logger.Printf("fail %s: %s", spec.run_id, err)
            manifest.record_failure(_entry(ctx, spec), err)
            continue
        pending.append(spec)

    if not pending:
        return
    limit = ctx.cfg.jobs or os.cpu_count() or 1
    with GoGroup(limit=limit) as group:
        started = time.perf_counter()
        futures = []
        for spec in pending:
            logger.Printf("start %s", spec.run_id)
            futures.append(group.go(_run, ctx, spec))
        for spec, future in zip(pending, futures):
            result = future.result()
            if result.is_ok():
                manifest.record_ok(replace(_entry(ctx, spec), files=result.unwrap()))
                logger.Printf("done %s (%.1fs)", spec.run_id, time.perf_counter() - started)
            else:
                manifest.record_failure(_entry(ctx, spec), result.err())
                logger.Printf("fail %s: %s", spec.run_id, result.err())


# =============================================================================
# Commands
# =============================================================================


def _prepare(cfg: ExperimentConfig, logger: log.Logger) -> _Context:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise PathError("mkdir", cfg.out, e) from e
    cfg.write_resolved()
    ds = cfg.load_dataset()
    ds.check_splits()
    logger.Printf("dataset: %d rows, %d features", ds.n, ds.n_features)
    return _Context(cfg, ds, ds.fingerprint(), logger)


def cmd_generate(cfg: ExperimentConfig, logger: log.Logger | None = None) -> Path:
    """Writes ``dataset.csv`` and a ``dataset.json`` echo of the dataset spec."""
    logger = logger or log.Default()
    ctx = _prepare(cfg, logger)
    path = cfg.out / "dataset.csv"
    save_csv(ctx.ds, path)
    echo = {
        "dataset": cfg.dataset_dict(),
        "fingerprint": ctx.data_fingerprint,
        "n_rows": ctx.ds.n,
        "feature_names": list(ctx.ds.feature_names),
        "tool_version": __version__,
    }
    jsonio.WriteFileAtomic(cfg.out / "dataset.json", echo)
    logger.Printf("wrote %s", path)
    return path


def _tradeoff_rows(ctx: _Context, manifest: RunManifest) -> list[list[str]]:
    keep = set(ctx.cfg.report_splits)
    keyed: list[tuple[tuple[int, int, float, int], list[str]]] = []
    first, second = plan_runs(ctx.cfg)
    for spec in first + second:
        if not spec.reports or not manifest.is_complete(spec.run_id, ctx.fingerprint(spec)):
            continue
        for row in _read_rows(ctx.path(spec, "report.json")):
            if row.get("saturated") or row["split"] not in keep:
                continue
            key = (
                METHOD_ORDER[spec.method],
                spec.seed,
                row["lambda_or_bound"],
                SPLIT_ORDER[row["split"]],
            )
            keyed.append(
                (
                    key,
                    [
                        spec.method.value,
                        csvio.FormatFloat(row["lambda_or_bound"]),
                        csvio.FormatFloat(row["accuracy"]),
                        csvio.FormatFloat(row["ddp"]),
                        row["split"],
                        str(spec.seed),
                    ],
                )
            )
    keyed.sort(key=lambda kv: kv[0])
    return [TRADEOFF_HEADER, *(r for _, r in keyed)]


def cmd_sweep(
    cfg: ExperimentConfig, resume: bool = False, logger: log.Logger | None = None
) -> Path:
    """Runs every method × parameter × seed and writes ``tradeoff.csv``.

    Raises RunFailuresError after writing the CSV when any run failed.
    """
    logger = logger or log.Default()
    ctx = _prepare(cfg, logger)
    manifest = RunManifest.open(cfg.out, config_hash(cfg))
    first, second = plan_runs(cfg)
    _execute(ctx, first, manifest, resume, logger)
    _execute(ctx, second, manifest, resume, logger)

    path = cfg.out / "tradeoff.csv"
    csvio.WriteFileAtomic(path, _tradeoff_rows(ctx, manifest))
    logger.Printf("wrote %s", path)

    failed = [s.run_id for s in first + second if manifest.is_failed(s.run_id, ctx.fingerprint(s))]
    if failed:
        raise RunFailuresError(f"{len(failed)} run(s) failed: {', '.join(failed)}")
    return path


def _required_rows(ctx: _Context, manifest: RunManifest, spec: RunSpec) -> list[dict[str, Any]]:
    entry = manifest.require(spec.run_id, ctx.fingerprint(spec))
    return _read_rows(manifest.resolve(entry.files["report"]))


def _best(rows: list[dict[str, Any]], limit: float) -> dict[str, Any] | None:
    feasible = [r for r in rows if abs(r["ddp"]) <= limit]
    if not feasible:
        return None
    return min(feasible, key=lambda r: (-r["accuracy"], abs(r["ddp"]), r["lambda_or_bound"]))


def cmd_table1(
    cfg: ExperimentConfig, reduction: float, logger: log.Logger | None = None
) -> Path:
    """Most accurate test-split model per method and seed with
    ``|DDP| ≤ (1 − reduction)·|DDP_unconstrained|``; ``X`` marks failure."""
    if reduction not in REDUCTIONS:
        raise ValidationError("reduction", f"must be one of {REDUCTIONS}, got {reduction}")
    logger = logger or log.Default()
    ctx = _prepare(cfg, logger)
    manifest = RunManifest.open(cfg.out, config_hash(cfg))
    first, second = plan_runs(cfg)
    reporting = [s for s in first + second if s.reports]

    records = [TABLE1_HEADER]
    test = Split.TEST.value
    for method in sorted(cfg.methods, key=METHOD_ORDER.__getitem__):
        for seed in cfg.seeds:
            base = _required_rows(ctx, manifest, RunSpec(Method.UNCONSTRAINED, 0.0, seed))
            ddp_u = next(r["ddp"] for r in base if r["split"] == test)
            limit = (1.0 - reduction) * abs(ddp_u)
            rows = [
                r
                for spec in reporting
                if spec.method is method and spec.seed == seed
                for r in _required_rows(ctx, manifest, spec)
                if r["split"] == test
            ]
            best = _best(rows, limit)
            if best is None:
                records.append([method.value, str(seed), FAILURE_MARKER, FAILURE_MARKER])
            else:
                acc, gap = csvio.FormatFloat(best["accuracy"]), csvio.FormatFloat(best["ddp"])
                records.append([method.value, str(seed), acc, gap])

    path = cfg.out / f"table1_{round(reduction * 100)}.csv"
    csvio.WriteFileAtomic(path, records)
    logger.Printf("wrote %s", path)
    return path


def _section(fn: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    """Runs one audit step; library errors become JSON error entries."""
    match attempt(functools.partial(fn, *args, **kwargs)):
        case Ok(value):
            return value.to_dict() if hasattr(value, "to_dict") else value
        case Err(e):
            return {"error": e.to_dict()}
    return None


def _required_scores(
    ctx: _Context, manifest: RunManifest, spec: RunSpec
) -> dict[Split, Scores]:
    entry = manifest.require(spec.run_id, ctx.fingerprint(spec))
    return _load_scores(manifest.resolve(entry.files["scores"]))


def _required_model(ctx: _Context, manifest: RunManifest, spec: RunSpec) -> nn.TwoHeadModel:
    entry = manifest.require(spec.run_id, ctx.fingerprint(spec))
    return nn.load_model(manifest.resolve(entry.files["model"]))


def _baseline(ctx: _Context, manifest: RunManifest) -> dict[str, Any]:
    preds = [
        _decisions(
            _required_scores(ctx, manifest, RunSpec(Method.UNCONSTRAINED, 0.0, seed))[
                Split.TEST
            ].f_scores
        )
        for seed in ctx.cfg.seeds
    ]

    def measure() -> dict[str, Any]:
        dis = pairwise_disagreement(preds)
        return {"disagreement": dis, "agreement": 1.0 - dis, "n_seeds": len(preds)}

    return _section(measure)


def _audit_method(
    ctx: _Context,
    manifest: RunManifest,
    method: Method,
    seed: int,
    baseline_agreement: float,
    logger: log.Logger,
) -> dict[str, Any]:
    """Audits one fair method. Without a two-head run in the sweep only the
    awareness probe runs; the other steps carry a dependency error entry."""
    ds = ctx.ds
    grid = ctx.cfg.massaging_grid if method is Method.MASSAGING else ctx.cfg.lambda_grid
    specs = [RunSpec(method, p, seed) for p in grid]
    two_head = RunSpec(Method.TWO_HEAD, 0.0, seed)
    heads: dict[Split, Scores] | None = None
    g: dict[Split, Any] = {}
    if Method.TWO_HEAD in ctx.cfg.methods:
        heads = _required_scores(ctx, manifest, two_head)
        g = {sp: s.require_g() for sp, s in heads.items()}
    missing = DependencyError(two_head.run_id, "sweep has no two-head run")
    no_heads: dict[str, Any] = {"error": missing.to_dict()}
    unconstrained = _required_scores(ctx, manifest, RunSpec(Method.UNCONSTRAINED, 0.0, seed))
    u_preds = {sp: _decisions(s.f_scores) for sp, s in unconstrained.items()}

    models = [(spec.param, _required_model(ctx, manifest, spec)) for spec in specs]
    awareness = _section(probe_awareness, models, ds, workers=ctx.cfg.jobs, logger=logger)

    reconstruction: list[dict[str, Any]] = []
    counterfactual: list[dict[str, Any]] = []
    region: list[dict[str, Any]] = []
    test = Split.TEST
    for spec in specs:
        fair = _required_scores(ctx, manifest, spec)
        fair_preds = {sp: _decisions(s.f_scores) for sp, s in fair.items()}
        fair_f = {sp: s.f_scores for sp, s in fair.items()}
        forward: ReconstructionResult | None = None
        backward: ReconstructionResult | None = None
        forward_doc: dict[str, Any] = no_heads
        backward_doc: dict[str, Any] = no_heads
        if heads is not None:
            try:
                forward = reconstruct_fair(
                    heads, fair_preds, baseline_agreement=baseline_agreement
                )
            except Error as e:
                forward_doc = {"error": e.to_dict()}
            else:
                forward_doc = forward.to_dict()
            try:
                backward = recover_unconstrained(
                    fair_f, g, u_preds, baseline_agreement=baseline_agreement
                )
            except Error as e:
                backward_doc = {"error": e.to_dict()}
            else:
                backward_doc = backward.to_dict()
        reconstruction.append(
            {
                "param": spec.param,
                "fair_from_heads": forward_doc,
                "unconstrained_from_fair": backward_doc,
            }
        )

        if heads is not None and forward is not None:
            a1, a2 = forward.rule()
            clf = CombinedClassifier(a1, a2, math.nan)
            flips = _section(counterfactual_flips, heads[test].f_scores, g[test], ds.s(test), clf)
        else:
            flips = forward_doc
        counterfactual.append({"param": spec.param, **flips})

        if backward is not None:
            found = _section(disadvantaged_region, fair_f[test], g[test], backward)
        else:
            found = backward_doc
        region.append({"param": spec.param, **found})

    return {
        "method": method.value,
        "seed": seed,
        "awareness": awareness,
        "reconstruction": reconstruction,
        "counterfactual": counterfactual,
        "region": region,
    }


def _audit_two_head(ctx: _Context, manifest: RunManifest, seed: int) -> dict[str, Any]:
    ds = ctx.ds
    test = Split.TEST
    heads = _required_scores(ctx, manifest, RunSpec(Method.TWO_HEAD, 0.0, seed))
    f, g, s = heads[test].f_scores, heads[test].require_g(), ds.s(test)
    doc: dict[str, Any] = {
        "seed": seed,
        "g_accuracy": float(np.mean((g > 0.5).astype(np.int64) == s)),
        "counterfactual": [],
    }
    bounds = RunSpec(Method.TWO_HEAD, 0.0, seed, DERIVED)
    entry = manifest.require(bounds.run_id, ctx.fingerprint(bounds))
    rules = jsonio.ReadFile(manifest.resolve(entry.files["report"])).unwrap()["rules"]
    for rule in rules:
        clf = CombinedClassifier.from_dict(rule)
        flips = _section(counterfactual_flips, f, g, s, clf)
        doc["counterfactual"].append({"bound": clf.constraint, "rule": clf.to_dict(), **flips})
    return doc


def _embeddings(ctx: _Context, manifest: RunManifest, seed: int) -> list[list[str]]:
    model = _required_model(ctx, manifest, RunSpec(Method.TWO_HEAD, 0.0, seed))
    z = nn.last_layer(model, ctx.ds, Split.TEST)
    s, y = ctx.ds.s(Split.TEST), ctx.ds.y(Split.TEST)
    records = [[*(f"z{j}" for j in range(z.shape[1])), "protected", "target"]]
    for i in range(z.shape[0]):
        records.append([*(csvio.FormatFloat(v) for v in z[i]), str(int(s[i])), str(int(y[i]))])
    return records


def cmd_audit(cfg: ExperimentConfig, logger: log.Logger | None = None) -> list[Path]:
    """Audits every fair model of the sweep against the two-head model of its seed.

    Without two_head in the methods the two-head document and the embeddings
    are not written.
    """
    logger = logger or log.Default()
    ctx = _prepare(cfg, logger)
    manifest = RunManifest.open(cfg.out, config_hash(cfg))
    audit_dir = cfg.out / "audit"
    baseline = _baseline(ctx, manifest)
    agreement = baseline.get("agreement", math.nan)

    written: list[Path] = []
    for seed in cfg.seeds:
        for method in FAIR_METHODS:
            if method not in cfg.methods:
                continue
            doc = _audit_method(ctx, manifest, method, seed, agreement, logger)
            doc["baseline"] = baseline
            path = audit_dir / f"{method.value}_seed{seed}.json"
            jsonio.WriteFileAtomic(path, doc)
            written.append(path)
            logger.Printf("wrote %s", path)
        if Method.TWO_HEAD not in cfg.methods:
            continue
        path = audit_dir / f"two_head_seed{seed}.json"
        jsonio.WriteFileAtomic(path, _audit_two_head(ctx, manifest, seed))
        written.append(path)
        path = audit_dir / f"embeddings_seed{seed}.csv"
        csvio.WriteFileAtomic(path, _embeddings(ctx, manifest, seed))
        written.append(path)
        logger.Printf("wrote %s", path)
    return written


def cmd_plot_data(cfg: ExperimentConfig, logger: log.Logger | None = None) -> Path:
    """Aggregates ``tradeoff.csv`` over seeds into ``tradeoff_plot.csv``.

    Rows are matched across seeds by their position within (method, split),
    since DDP bounds differ per seed.
    """
    logger = logger or log.Default()
    source = cfg.out / "tradeoff.csv"
    if not source.exists():
        raise DependencyError("tradeoff.csv", "run the sweep first; missing")
    records = csvio.ReadFile(source).unwrap()
    if not records or records[0] != TRADEOFF_HEADER:
        raise errors.SchemaError(f"{source}: unexpected header")

    per_seed: dict[tuple[str, str, str], list[list[str]]] = {}
    for row in records[1:]:
        method, _, _, _, split, seed = row
        per_seed.setdefault((method, split, seed), []).append(row)

    groups: dict[tuple[int, str, int], list[list[str]]] = {}
    for (method, split, _), rows in per_seed.items():
        for k, row in enumerate(rows):
            key = (METHOD_ORDER[Method(method)], split, k)
            groups.setdefault(key, []).append(row)

    out = [PLOT_HEADER]
    for key in sorted(groups, key=lambda t: (t[0], SPLIT_ORDER[t[1]], t[2])):
        rows = groups[key]
        params = np.array([float(r[1]) for r in rows])
        acc = np.array([float(r[2]) for r in rows])
        gap = np.array([float(r[3]) for r in rows])
        out.append(
            [
                rows[0][0],
                csvio.FormatFloat(float(np.mean(params))),
                key[1],
                csvio.FormatFloat(float(np.mean(acc))),
                csvio.FormatFloat(float(np.min(acc))),
                csvio.FormatFloat(float(np.max(acc))),
                csvio.FormatFloat(float(np.mean(gap))),
                csvio.FormatFloat(float(np.min(gap))),
                csvio.FormatFloat(float(np.max(gap))),
                str(len(rows)),
            ]
        )
    path = cfg.out / "tradeoff_plot.csv"
    csvio.WriteFileAtomic(path, out)
    logger.Printf("wrote %s", path)
    return path


# =============================================================================
# Entry point
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairlens", description="Fairness trade-off sweeps and disparate-treatment audits."
    )
    parser.add_argument("--version", action="version", version=f"fairlens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, help="path to the experiment JSON file")
        p.add_argument("--jobs", type=int, default=None, help="worker threads (default: config)")
        p.add_argument("--quiet", action="store_true", help="suppress progress logging")
        return p

    command("generate", "write the configured dataset as CSV")
    sweep = command("sweep", "train every method and write tradeoff.csv")
    sweep.add_argument("--resume", action="store_true", help="do not retry failed runs")
    table = command("table1", "compare methods at a disparity reduction")
    table.add_argument("--reduction", type=float, choices=REDUCTIONS, default=0.8)
    command("audit", "run the disparate-treatment audit over a finished sweep")
    command("tradeoff-plot-data", "aggregate tradeoff.csv over seeds")
    return parser


def _dispatch(args: argparse.Namespace, cfg: ExperimentConfig, logger: log.Logger) -> None:
    if args.command == "generate":
        cmd_generate(cfg, logger)
    elif args.command == "sweep":
        cmd_sweep(cfg, resume=args.resume, logger=logger)
    elif args.command == "table1":
        cmd_table1(cfg, args.reduction, logger)
    elif args.command == "audit":
        cmd_audit(cfg, logger)
    else:
        cmd_plot_data(cfg, logger)


def _exit_code(err: Error) -> int:
    if errors.As(err, ConfigError) or errors.As(err, ValidationError):
        return EXIT_CONFIG
    if errors.As(err, DependencyError):
        return EXIT_DEPENDENCY
    if errors.As(err, RunFailuresError):
        return EXIT_RUN_FAILURES
    return EXIT_ERROR


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logger = log.Default()
    logger.SetQuiet(args.quiet)
    try:
        cfg = load_config(args.config)
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError(f"--jobs must be positive, got {args.jobs}")
            cfg = replace(cfg, jobs=args.jobs)
        _dispatch(args, cfg, logger)
    except Error as e:
        print(f"fairlens {args.command}: {e}", file=sys.stderr)
        return _exit_code(e)
    except OSError as e:
        print(f"fairlens {args.command}: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
