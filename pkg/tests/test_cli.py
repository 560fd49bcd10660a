import io
import json
import math
import shutil

import pytest

from fairlens import csvio, jsonio, log, nn
from fairlens.cli import (
    EXIT_CONFIG,
    EXIT_DEPENDENCY,
    EXIT_ERROR,
    EXIT_OK,
    EXIT_RUN_FAILURES,
    FAILURE_MARKER,
    PLOT_HEADER,
    TABLE1_HEADER,
    TRADEOFF_HEADER,
    RunSpec,
    cmd_audit,
    cmd_generate,
    cmd_plot_data,
    cmd_sweep,
    cmd_table1,
    main,
    plan_runs,
)
from fairlens.config import parse_config
from fairlens.errors import (
    DependencyError,
    RunFailuresError,
    TrainingDivergedError,
    ValidationError,
)
from fairlens.manifest import MANIFEST_NAME, RunManifest
from fairlens.types import Method, Split

TINY = {
    "dataset": {"n_samples": 1200, "n_features": 4, "seed": 5},
    "lambda_grid": [0, 1],
    "massaging_grid": [0, 0.5],
    "n_bounds": 3,
    "seeds": [0, 1],
    "train": {"epochs": 2, "hidden_widths": [8]},
    "jobs": 1,
}


def tiny_config(out, **overrides):
    return parse_config({**TINY, **overrides, "output_dir": str(out)}, env={})


def write_config(path, out, **overrides):
    path.write_text(json.dumps({**TINY, **overrides, "output_dir": str(out)}), encoding="utf-8")
    return path


def capture():
    buf = io.StringIO()
    return buf, log.New(buf, "", 0)


def read_csv(path):
    return csvio.ReadFile(path).unwrap()


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    """A finished sweep shared by the read-only tests; copy it before mutating."""
    out = tmp_path_factory.mktemp("sweep")
    cfg = tiny_config(out)
    _, logger = capture()
    cmd_sweep(cfg, logger=logger)
    return cfg


def copy_sweep(cfg, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(cfg.out, dst)
    return tiny_config(dst)


class TestRunSpec:
    def test_run_ids(self):
        assert RunSpec(Method.UNCONSTRAINED, 0.0, 3).run_id == "unconstrained/seed3"
        assert RunSpec(Method.REG_SQUARED, 0.5, 0).run_id == "reg_squared/lam0.5/seed0"
        assert RunSpec(Method.REG_ABS, 2.0, 1).run_id == "reg_abs/lam2.0/seed1"
        assert RunSpec(Method.MASSAGING, 0.3, 2).run_id == "massaging/frac0.3/seed2"
        assert RunSpec(Method.TWO_HEAD, 0.0, 4).run_id == "two_head/seed4"
        assert RunSpec(Method.TWO_HEAD, 0.0, 4, "bounds").run_id == "two_head/bounds/seed4"
        assert RunSpec(Method.LIPTON, 0.0, 0, "bounds").run_id == "lipton/seed0"

    def test_reports(self):
        assert not RunSpec(Method.TWO_HEAD, 0.0, 0).reports
        assert RunSpec(Method.TWO_HEAD, 0.0, 0, "bounds").reports
        assert RunSpec(Method.REG_ABS, 1.0, 0).reports

    def test_requires(self):
        base = RunSpec(Method.UNCONSTRAINED, 0.0, 2)
        assert RunSpec(Method.REG_SQUARED, 1.0, 2).requires() == []
        assert RunSpec(Method.MASSAGING, 0.5, 2).requires() == [base]
        assert RunSpec(Method.LIPTON, 0.0, 2, "bounds").requires() == [base]
        assert RunSpec(Method.TWO_HEAD, 0.0, 2, "bounds").requires() == [
            base,
            RunSpec(Method.TWO_HEAD, 0.0, 2),
        ]


class TestPlanRuns:
    def test_stages(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=[0], massaging_grid=[0.5])
        first, second = plan_runs(cfg)
        assert [s.run_id for s in first] == [
            "unconstrained/seed0",
            "reg_squared/lam0.0/seed0",
            "reg_squared/lam1.0/seed0",
            "reg_abs/lam0.0/seed0",
            "reg_abs/lam1.0/seed0",
            "two_head/seed0",
        ]
        assert [s.run_id for s in second] == [
            "massaging/frac0.5/seed0",
            "two_head/bounds/seed0",
            "lipton/seed0",
        ]

    def test_dependencies_come_from_first_stage(self, tmp_path):
        first, second = plan_runs(tiny_config(tmp_path))
        ids = {s.run_id for s in first}
        for spec in second:
            assert all(d.run_id in ids for d in spec.requires())

    def test_methods_subset(self, tmp_path):
        first, second = plan_runs(tiny_config(tmp_path, methods=["lipton"], seeds=[7]))
        assert [s.run_id for s in first] == ["unconstrained/seed7"]
        assert [s.run_id for s in second] == ["lipton/seed7"]


class TestGenerate:
    def test_writes_dataset(self, tmp_path):
        cfg = tiny_config(tmp_path / "a")
        path = cmd_generate(cfg, capture()[1])
        records = read_csv(path)
        assert records[0] == ["x0", "x1", "x2", "x3", "target", "protected", "split"]
        assert len(records) == 1201
        echo = jsonio.ReadFile(cfg.out / "dataset.json").unwrap()
        assert echo["n_rows"] == 1200
        assert echo["dataset"]["kind"] == "synthetic"
        assert (cfg.out / "config.resolved.json").exists()

    def test_deterministic(self, tmp_path):
        a = cmd_generate(tiny_config(tmp_path / "a"), capture()[1])
        b = cmd_generate(tiny_config(tmp_path / "b"), capture()[1])
        assert a.read_bytes() == b.read_bytes()

    def test_written_csv_loads_back(self, tmp_path):
        cfg = tiny_config(tmp_path / "a")
        path = cmd_generate(cfg, capture()[1])
        doc = {
            "kind": "csv",
            "path": str(path),
            "target_col": "target",
            "protected_col": "protected",
            "split_col": "split",
        }
        back = tiny_config(tmp_path / "b", dataset=doc).load_dataset()
        assert back.n == 1200
        original = cfg.load_dataset()
        assert (back.targets == original.targets).all()
        assert (back.protected == original.protected).all()
        assert list(back.split) == list(original.split)


@pytest.mark.slow
class TestSweep:
    def test_tradeoff_csv(self, swept):
        records = read_csv(swept.out / "tradeoff.csv")
        assert records[0] == TRADEOFF_HEADER
        rows = records[1:]
        assert {r[4] for r in rows} == {"test"}
        counts = {}
        for r in rows:
            counts[r[0]] = counts.get(r[0], 0) + 1
        # two seeds; two_head and lipton contribute one row per DDP bound
        assert counts == {
            "unconstrained": 2,
            "reg_squared": 4,
            "reg_abs": 4,
            "massaging": 4,
            "two_head": 6,
            "lipton": 6,
        }
        for r in rows:
            assert 0.0 <= float(r[2]) <= 1.0
            assert -1.0 <= float(r[3]) <= 1.0

    def test_rows_sorted_by_method(self, swept):
        rows = read_csv(swept.out / "tradeoff.csv")[1:]
        order = [m.value for m in Method]
        keys = [(order.index(r[0]), int(r[5]), float(r[1])) for r in rows]
        assert keys == sorted(keys)

    def test_artifacts(self, swept):
        run = swept.out / "runs" / "massaging" / "frac0.5" / "seed0"
        for name in ("model.json", "scores.json", "report.json", "plan.json"):
            assert (run / name).exists()
        report = jsonio.ReadFile(run / "report.json").unwrap()
        assert [r["split"] for r in report["rows"]] == ["train", "val", "test"]
        bounds = jsonio.ReadFile(swept.out / "runs/two_head/bounds/seed1/report.json").unwrap()
        assert len(bounds["rules"]) == 3
        assert sum(1 for r in bounds["rows"] if r["saturated"]) == 3
        assert not (swept.out / "runs/two_head/seed0/report.json").exists()

    def test_bounds_start_at_zero(self, swept):
        doc = jsonio.ReadFile(swept.out / "runs/lipton/seed0/report.json").unwrap()
        bounds = [rule["bound"] for rule in doc["rules"]]
        assert bounds[0] == 0.0
        assert bounds == sorted(bounds)

    def test_manifest(self, swept):
        manifest = RunManifest.open(swept.out, "ignored")
        first, second = plan_runs(swept)
        assert sorted(manifest.runs) == sorted(s.run_id for s in first + second)
        assert manifest.failures() == []

    def test_second_sweep_trains_nothing(self, swept, tmp_path):
        cfg = copy_sweep(swept, tmp_path)
        before = (cfg.out / "tradeoff.csv").read_bytes()
        buf, logger = capture()
        cmd_sweep(cfg, logger=logger)
        assert "start " not in buf.getvalue()
        assert buf.getvalue().count("skip ") == 20
        assert (cfg.out / "tradeoff.csv").read_bytes() == before

    def test_resume_reruns_missing_run(self, swept, tmp_path):
        cfg = copy_sweep(swept, tmp_path)
        (cfg.out / "runs/reg_squared/lam1.0/seed0/report.json").unlink()
        buf, logger = capture()
        cmd_sweep(cfg, resume=True, logger=logger)
        started = [line for line in buf.getvalue().splitlines() if line.startswith("start ")]
        assert started == ["start reg_squared/lam1.0/seed0"]
        assert (cfg.out / "runs/reg_squared/lam1.0/seed0/report.json").exists()
        assert read_csv(cfg.out / "tradeoff.csv") == read_csv(swept.out / "tradeoff.csv")

    def test_changed_training_reruns(self, swept, tmp_path):
        cfg = copy_sweep(swept, tmp_path)
        train = {"epochs": 1, "hidden_widths": [8]}
        cfg = tiny_config(cfg.out, methods=["unconstrained"], seeds=[0], train=train)
        buf, logger = capture()
        cmd_sweep(cfg, logger=logger)
        assert "start unconstrained/seed0" in buf.getvalue()


class TestSweepFailures:
    def test_failed_runs_are_reported(self, tmp_path, monkeypatch):
        def diverge(ds, cfg, logger=None):
            raise TrainingDivergedError(0, 1, math.nan)

        monkeypatch.setattr(nn, "train", diverge)
        cfg = tiny_config(tmp_path, methods=["lipton"], seeds=[0])
        with pytest.raises(RunFailuresError) as exc_info:
            cmd_sweep(cfg, logger=capture()[1])
        assert "unconstrained/seed0" in str(exc_info.value)
        assert "lipton/seed0" in str(exc_info.value)
        assert read_csv(cfg.out / "tradeoff.csv") == [TRADEOFF_HEADER]

        failures = {e.run_id: e for e in RunManifest.open(cfg.out, "x").failures()}
        assert failures["unconstrained/seed0"].error["error"] == "training_diverged"
        assert failures["lipton/seed0"].error["error"] == "dependency"

    def test_resume_skips_failed_runs(self, tmp_path, monkeypatch):
        calls = []

        def diverge(ds, cfg, logger=None):
            calls.append(cfg.seed)
            raise TrainingDivergedError(0, 0, math.inf)

        monkeypatch.setattr(nn, "train", diverge)
        cfg = tiny_config(tmp_path, methods=["unconstrained"], seeds=[0])
        with pytest.raises(RunFailuresError):
            cmd_sweep(cfg, logger=capture()[1])
        with pytest.raises(RunFailuresError):
            cmd_sweep(cfg, resume=True, logger=capture()[1])
        assert calls == [0]


@pytest.mark.slow
class TestTable1:
    @pytest.mark.parametrize("reduction,name", [(0.5, "table1_50.csv"), (0.8, "table1_80.csv")])
    def test_rows(self, swept, tmp_path, reduction, name):
        cfg = copy_sweep(swept, tmp_path)
        path = cmd_table1(cfg, reduction, capture()[1])
        assert path.name == name
        records = read_csv(path)
        assert records[0] == TABLE1_HEADER
        assert len(records) == 1 + 6 * 2

        limits = {}
        for seed in (0, 1):
            doc = jsonio.ReadFile(cfg.out / f"runs/unconstrained/seed{seed}/report.json").unwrap()
            gap = next(r["ddp"] for r in doc["rows"] if r["split"] == "test")
            limits[str(seed)] = (1.0 - reduction) * abs(gap)
        for method, seed, acc, gap in records[1:]:
            if acc == FAILURE_MARKER:
                assert gap == FAILURE_MARKER
                continue
            assert abs(float(gap)) <= limits[seed] + 1e-12
            assert 0.0 <= float(acc) <= 1.0

    def test_bad_reduction(self, swept):
        with pytest.raises(ValidationError) as exc_info:
            cmd_table1(swept, 0.3, capture()[1])
        assert exc_info.value.field == "reduction"


class TestTable1Dependencies:
    def test_missing_sweep(self, tmp_path):
        with pytest.raises(DependencyError):
            cmd_table1(tiny_config(tmp_path, seeds=[0]), 0.8, capture()[1])


class TestAuditWithoutTwoHead:
    def test_awareness_runs_and_reconstruction_reports_dependency(self, tmp_path):
        cfg = tiny_config(tmp_path, methods=["reg_squared"], seeds=[0])
        _, logger = capture()
        cmd_sweep(cfg, logger=logger)
        written = cmd_audit(cfg, logger)
        assert [p.name for p in written] == ["reg_squared_seed0.json"]

        doc = jsonio.ReadFile(written[0]).unwrap()
        awareness = doc["awareness"]
        assert "error" not in awareness or awareness["error"]["error"] == "insufficient_data"
        assert [e["param"] for e in doc["reconstruction"]] == [0.0, 1.0]
        for entry in doc["reconstruction"]:
            for side in ("fair_from_heads", "unconstrained_from_fair"):
                assert entry[side]["error"]["error"] == "dependency"
                assert "two_head/seed0" in entry[side]["error"]["message"]
        for entry in doc["counterfactual"] + doc["region"]:
            assert entry["error"]["error"] == "dependency"
        assert not (cfg.out / "audit/two_head_seed0.json").exists()
        assert not (cfg.out / "audit/embeddings_seed0.csv").exists()


@pytest.mark.slow
class TestAudit:
    @pytest.fixture(scope="class")
    def audited(self, swept):
        return swept, cmd_audit(swept, capture()[1])

    def test_files(self, audited):
        cfg, written = audited
        names = sorted(p.name for p in written)
        expected = []
        for seed in (0, 1):
            expected += [
                f"reg_squared_seed{seed}.json",
                f"reg_abs_seed{seed}.json",
                f"massaging_seed{seed}.json",
                f"two_head_seed{seed}.json",
                f"embeddings_seed{seed}.csv",
            ]
        assert names == sorted(expected)
        assert all(p.parent == cfg.out / "audit" for p in written)

    def test_method_document(self, audited):
        cfg, _ = audited
        doc = jsonio.ReadFile(cfg.out / "audit/reg_squared_seed0.json").unwrap()
        assert doc["method"] == "reg_squared"
        assert doc["seed"] == 0
        assert [e["param"] for e in doc["reconstruction"]] == [0.0, 1.0]
        assert len(doc["counterfactual"]) == 2
        assert len(doc["region"]) == 2
        assert doc["baseline"]["n_seeds"] == 2
        assert 0.0 <= doc["baseline"]["agreement"] <= 1.0
        # two models cannot support a rank correlation
        assert doc["awareness"]["error"]["error"] == "insufficient_data"

    def test_reconstruction_entries(self, audited):
        cfg, _ = audited
        doc = jsonio.ReadFile(cfg.out / "audit/massaging_seed1.json").unwrap()
        for entry in doc["reconstruction"]:
            assert set(entry) == {"param", "fair_from_heads", "unconstrained_from_fair"}

    def test_two_head_document(self, audited):
        cfg, _ = audited
        doc = jsonio.ReadFile(cfg.out / "audit/two_head_seed0.json").unwrap()
        assert 0.0 <= doc["g_accuracy"] <= 1.0
        assert len(doc["counterfactual"]) == 3

    def test_embeddings(self, audited):
        cfg, _ = audited
        records = read_csv(cfg.out / "audit/embeddings_seed0.csv")
        assert records[0] == [f"z{j}" for j in range(8)] + ["protected", "target"]
        n_test = len(cfg.load_dataset().y(Split.TEST))
        assert len(records) == 1 + n_test
        assert {r[8] for r in records[1:]} <= {"0", "1"}


@pytest.mark.slow
class TestPlotData:
    def test_aggregates_seeds(self, swept, tmp_path):
        cfg = copy_sweep(swept, tmp_path)
        records = read_csv(cmd_plot_data(cfg, capture()[1]))
        assert records[0] == PLOT_HEADER
        rows = records[1:]
        assert [r[0] for r in rows].count("lipton") == 3
        assert [r[0] for r in rows].count("reg_abs") == 2
        for r in rows:
            assert r[9] == "2"
            assert float(r[4]) <= float(r[3]) <= float(r[5])
            assert float(r[7]) <= float(r[6]) <= float(r[8])

    def test_missing_tradeoff(self, tmp_path):
        with pytest.raises(DependencyError):
            cmd_plot_data(tiny_config(tmp_path), capture()[1])


class TestMain:
    @pytest.fixture(autouse=True)
    def restore_logger(self):
        yield
        log.SetQuiet(False)

    def test_generate(self, tmp_path):
        path = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["generate", "--config", str(path), "--quiet"]) == EXIT_OK
        assert (tmp_path / "out" / "dataset.csv").exists()

    def test_config_error(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", tmp_path / "out", n_bounds=1)
        assert main(["generate", "--config", str(path), "--quiet"]) == EXIT_CONFIG
        assert capsys.readouterr().err.startswith("fairlens generate: ")

    def test_missing_config_file(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG

    def test_bad_jobs(self, tmp_path):
        path = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["generate", "--config", str(path), "--jobs", "0"]) == EXIT_CONFIG

    def test_missing_sweep_artifacts(self, tmp_path, capsys):
        path = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["tradeoff-plot-data", "--config", str(path), "--quiet"]) == EXIT_DEPENDENCY
        assert "tradeoff.csv" in capsys.readouterr().err

    def test_run_failures(self, tmp_path, monkeypatch):
        def diverge(ds, cfg, logger=None):
            raise TrainingDivergedError(0, 0, math.nan)

        monkeypatch.setattr(nn, "train", diverge)
        path = write_config(
            tmp_path / "c.json", tmp_path / "out", methods=["unconstrained"], seeds=[0]
        )
        assert main(["sweep", "--config", str(path), "--quiet"]) == EXIT_RUN_FAILURES
        assert (tmp_path / "out" / MANIFEST_NAME).exists()

    def test_audit_without_two_head(self, tmp_path):
        path = write_config(
            tmp_path / "c.json", tmp_path / "out", methods=["reg_abs"], seeds=[0]
        )
        assert main(["sweep", "--config", str(path), "--quiet"]) == EXIT_OK
        assert main(["audit", "--config", str(path), "--quiet"]) == EXIT_OK
        assert (tmp_path / "out" / "audit" / "reg_abs_seed0.json").exists()

    def test_unwritable_output_dir(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory", encoding="utf-8")
        path = write_config(tmp_path / "c.json", blocker / "out")
        assert main(["generate", "--config", str(path), "--quiet"]) == EXIT_ERROR
        err = capsys.readouterr().err
        assert err.startswith("fairlens generate: mkdir ")
        assert "blocker" in err

    def test_csv_with_invalid_utf8(self, tmp_path, capsys):
        source = cmd_generate(tiny_config(tmp_path / "gen"), capture()[1])
        with source.open("ab") as fh:
            fh.write(b"\xff\xfe,0,0,0,1,0,train\n")
        dataset = {
            "kind": "csv",
            "path": str(source),
            "target_col": "target",
            "protected_col": "protected",
            "split_col": "split",
        }
        path = write_config(tmp_path / "c.json", tmp_path / "out", dataset=dataset)
        assert main(["generate", "--config", str(path), "--quiet"]) == EXIT_ERROR
        err = capsys.readouterr().err
        assert "row 1201" in err
        assert "invalid UTF-8" in err

    def test_csv_missing_group_in_split(self, tmp_path, capsys):
        source = tmp_path / "four.csv"
        source.write_text("a,target,group\n0.1,0,0\n0.2,1,0\n0.3,0,1\n0.4,1,1\n", encoding="utf-8")
        dataset = {
            "kind": "csv",
            "path": str(source),
            "target_col": "target",
            "protected_col": "group",
        }
        path = write_config(tmp_path / "c.json", tmp_path / "out", dataset=dataset)
        assert main(["generate", "--config", str(path), "--quiet"]) == EXIT_CONFIG
        assert "split is empty" in capsys.readouterr().err

    def test_reduction_choices(self, tmp_path):
        path = write_config(tmp_path / "c.json", tmp_path / "out")
        with pytest.raises(SystemExit):
            main(["table1", "--config", str(path), "--reduction", "0.3"])

    def test_command_required(self):
        with pytest.raises(SystemExit):
            main([])
