"""Tests for awareness probes, reconstruction, reseed baselines, flips and regions."""

import math

import numpy as np
import pytest

from fairlens import audit
from fairlens.audit import (
    Direction,
    ReconstructionResult,
    counterfactual_flips,
    disadvantaged_region,
    pairwise_disagreement,
    probe_accuracy,
    probe_awareness,
    reconstruct_fair,
    recover_unconstrained,
    reseed_baseline,
)
from fairlens.data import Dataset, SyntheticSpec, generate
from fairlens.errors import (
    ArgumentError,
    InsufficientDataError,
    UndefinedCorrelationError,
    UndefinedMetricError,
)
from fairlens.fairness import CombinedClassifier
from fairlens.nn import TrainConfig, train
from fairlens.types import Scores, Split

OFFSETS = np.r_[0.1 + 0.2 * np.arange(25), -(0.1 + 0.2 * np.arange(25))]


def heads_rule(a1, a2):
    return ReconstructionResult(Direction.FAIR_FROM_HEADS, (a1, a2), agreement=math.nan)


def both_splits(value):
    return {Split.VALIDATION: value, Split.TEST: value}


def planted_groups(t0, t1):
    """Scores placed symmetrically around a per-group threshold, with g = s."""
    s = np.r_[np.zeros(OFFSETS.size, int), np.ones(OFFSETS.size, int)]
    score = np.r_[t0 + OFFSETS, t1 + OFFSETS]
    return score, s.astype(float), s


def eval_dataset(y_test):
    n = len(y_test)
    tags = ["train"] * 4 + ["test"] * n
    y = np.r_[[0, 1, 0, 1], y_test]
    s = np.r_[[0, 0, 1, 1], np.arange(n) % 2]
    return Dataset(np.zeros((n + 4, 1)), y, s, tags)


class TestProbeAccuracy:
    def test_chance_on_random_features(self):
        rng = np.random.default_rng(0)
        Z = rng.standard_normal((4000, 5))
        s = rng.integers(0, 2, 4000)
        acc = probe_accuracy(Z[:2000], s[:2000], Z[2000:], s[2000:])
        assert abs(acc - 0.5) <= 0.05

    def test_separable_representation(self):
        rng = np.random.default_rng(1)
        s = rng.integers(0, 2, 600)
        Z = rng.standard_normal((600, 3)) + 4.0 * s[:, None]
        assert probe_accuracy(Z[:300], s[:300], Z[300:], s[300:]) >= 0.95


class TestProbeAwareness:
    def fake_probe(self, monkeypatch, table):
        monkeypatch.setattr(audit, "_probe_one", lambda model, ds: table[model])

    def test_quartile_filter_and_tau(self, monkeypatch):
        table = {
            "m0": (0.60, 0.90),
            "m1": (0.65, 0.85),
            "m2": (0.70, 0.80),
            "m3": (0.90, 0.58),
            "m4": (0.95, 0.55),
            "m5": (0.75, 0.70),
        }
        self.fake_probe(monkeypatch, table)
        ds = eval_dataset([0, 1, 0, 1])
        models = [(float(i), f"m{i}") for i in range(6)]
        curve = probe_awareness(models, ds, workers=1)
        assert curve.cutoff == pytest.approx(0.6)
        assert curve.kept_mask.tolist() == [True, True, True, False, False, True]
        assert curve.kendall.tau == 1.0
        assert curve.lambdas.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]

    def test_reference_is_smallest_lambda_without_zero(self, monkeypatch):
        table = {"a": (0.5, 0.7), "b": (0.6, 0.8), "c": (0.7, 0.75), "d": (0.8, 0.9)}
        self.fake_probe(monkeypatch, table)
        ds = eval_dataset([0, 1, 0, 1])
        curve = probe_awareness([(2.0, "b"), (1.0, "a"), (3.0, "c"), (4.0, "d")], ds, workers=1)
        assert curve.cutoff == pytest.approx(0.5 + 0.25 * 0.2)
        assert curve.kept_mask.all()

    def test_too_few_kept(self, monkeypatch):
        self.fake_probe(monkeypatch, {"a": (0.6, 0.9), "b": (0.7, 0.9)})
        ds = eval_dataset([0, 1, 0, 1])
        with pytest.raises(InsufficientDataError):
            probe_awareness([(0.0, "a"), (1.0, "b")], ds, workers=1)

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            probe_awareness([], eval_dataset([0, 1]))

    def test_identical_models_have_undefined_correlation(self):
        ds = generate(SyntheticSpec(n_samples=1500, n_features=4, seed=3))
        model = train(ds, TrainConfig(epochs=3, learning_rate=1e-2, hidden_widths=(8,)))
        models = [(lam, model) for lam in (0.0, 1.0, 2.0, 3.0)]
        with pytest.raises(UndefinedCorrelationError):
            probe_awareness(models, ds, workers=2)


class TestReconstructFair:
    def test_identity_target(self):
        f = np.r_[OFFSETS * 10, OFFSETS * 10]
        g = np.r_[np.zeros(OFFSETS.size), np.ones(OFFSETS.size)]
        scores = both_splits(Scores(f, g, Split.TEST))
        result = reconstruct_fair(scores, both_splits((f > 0).astype(int)))
        assert result.direction is Direction.FAIR_FROM_HEADS
        assert abs(result.coefficients[0]) <= 1e-6
        assert result.agreement >= 1 - 1e-3

    def test_plant_and_recover(self):
        f, g, _ = planted_groups(-2.0, 2.0)
        preds = (f - 4.0 * g + 2.0 > 0).astype(int)
        result = reconstruct_fair(both_splits(Scores(f, g, Split.TEST)), both_splits(preds))
        assert result.converged
        assert result.coefficients[0] == pytest.approx(-4.0, abs=1e-3)
        assert result.coefficients[1] == pytest.approx(2.0, abs=1e-3)
        assert result.agreement == 1.0

    def test_plant_and_recover_near_binary(self):
        f, g, _ = planted_groups(-2.0, 2.0)
        g = g + np.random.default_rng(2).uniform(-0.01, 0.01, g.size)
        preds = (f - 4.0 * g + 2.0 > 0).astype(int)
        result = reconstruct_fair(both_splits(Scores(f, g, Split.TEST)), both_splits(preds))
        assert result.agreement >= 0.99

    def test_degenerate_target(self):
        f, g, _ = planted_groups(0.0, 1.0)
        result = reconstruct_fair(
            both_splits(Scores(f, g, Split.TEST)), both_splits(np.ones(f.size, int))
        )
        assert result.degenerate
        assert result.coefficients == (0.0, math.inf)
        assert result.agreement == 1.0

    def test_baseline_is_carried(self):
        f, g, _ = planted_groups(-1.0, 1.0)
        result = reconstruct_fair(
            both_splits(Scores(f, g, Split.TEST)),
            both_splits((f > 0).astype(int)),
            baseline_agreement=0.93,
        )
        assert result.baseline_agreement == 0.93
        assert result.to_dict()["baseline_agreement"] == 0.93

    def test_missing_split(self):
        f, g, _ = planted_groups(0.0, 0.0)
        with pytest.raises(ArgumentError):
            reconstruct_fair({Split.TEST: Scores(f, g, Split.TEST)}, both_splits(f > 0))

    def test_requires_group_head(self):
        f, _, _ = planted_groups(0.0, 0.0)
        with pytest.raises(ArgumentError):
            reconstruct_fair(both_splits(Scores(f, None, Split.TEST)), both_splits(f > 0))


class TestRecoverUnconstrained:
    def test_plant_and_recover(self):
        r, g, _ = planted_groups(-1.0, -4.0)
        preds = (r + 3.0 * g + 1.0 > 0).astype(int)
        result = recover_unconstrained(both_splits(r), both_splits(g), both_splits(preds))
        assert result.direction is Direction.UNCONSTRAINED_FROM_FAIR
        assert result.coefficients[0] == pytest.approx(-3.0, abs=1e-3)
        assert result.coefficients[1] == pytest.approx(-1.0, abs=1e-3)
        assert result.rule() == pytest.approx((3.0, 1.0), abs=1e-3)
        assert result.agreement == 1.0

    def test_constant_group_scores(self):
        r = 0.7 + OFFSETS
        g = np.full(r.size, 0.5)
        preds = (r > 0.7).astype(int)
        result = recover_unconstrained(both_splits(r), both_splits(g), both_splits(preds))
        assert result.agreement == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            recover_unconstrained(
                both_splits(np.zeros(4)), both_splits(np.zeros(3)), both_splits(np.zeros(4))
            )


class TestReseedBaseline:
    def test_pairwise_disagreement(self):
        preds = [[0, 1, 1], [0, 1, 0], [1, 1, 0]]
        assert pairwise_disagreement(preds) == pytest.approx(4 / 9)

    def test_pairwise_needs_two(self):
        with pytest.raises(ArgumentError):
            pairwise_disagreement([[0, 1]])

    def test_identical_seeds_agree(self):
        ds = generate(SyntheticSpec(n_samples=1000, n_features=3, seed=1))
        cfg = TrainConfig(epochs=2, hidden_widths=(4,))
        assert reseed_baseline(ds, cfg, 2, seeds=[3, 3], workers=1) == 0.0

    def test_distinct_seeds(self):
        ds = generate(SyntheticSpec(n_samples=1000, n_features=3, seed=1))
        cfg = TrainConfig(epochs=2, hidden_widths=(4,))
        value = reseed_baseline(ds, cfg, 3, workers=3)
        assert 0.0 <= value < 0.5

    def test_needs_two_seeds(self):
        ds = generate(SyntheticSpec(n_samples=1000, n_features=3, seed=1))
        with pytest.raises(ArgumentError):
            reseed_baseline(ds, TrainConfig(), 1)

    def test_seed_count_mismatch(self):
        ds = generate(SyntheticSpec(n_samples=1000, n_features=3, seed=1))
        with pytest.raises(ArgumentError):
            reseed_baseline(ds, TrainConfig(), 3, seeds=[0, 1])


class TestCounterfactualFlips:
    def test_no_group_weight_no_flips(self):
        rng = np.random.default_rng(0)
        f, g = rng.standard_normal(50), rng.random(50)
        s = np.r_[0, 1, rng.integers(0, 2, 48)]
        report = counterfactual_flips(f, g, s, CombinedClassifier(0.0, 0.3, 0.1))
        assert report.flip_fraction_total == 0.0
        assert report.flips_0to1_group == (0.0, 0.0)
        assert report.flips_1to0_group == (0.0, 0.0)

    def test_matches_pointwise_oracle(self):
        rng = np.random.default_rng(1)
        s = np.r_[np.zeros(10, int), np.ones(10, int)]
        f = rng.uniform(-2.0, 2.0, 20)
        g = s.astype(float)
        a1, a2 = -1.5, 0.3
        report = counterfactual_flips(f, g, s, CombinedClassifier(a1, a2, 0.0))
        up, down = [0, 0], [0, 0]
        for i in range(20):
            orig = f[i] + a1 * g[i] + a2 > 0
            cf = f[i] + a1 * (1 - s[i]) + a2 > 0
            if not orig and cf:
                up[s[i]] += 1
            if orig and not cf:
                down[s[i]] += 1
        assert report.medians == (0.0, 1.0)
        assert report.flips_0to1_count == tuple(up)
        assert report.flips_1to0_count == tuple(down)
        assert report.flip_fraction_total == (sum(up) + sum(down)) / 20

    def test_one_direction_per_group(self):
        rng = np.random.default_rng(2)
        s = np.r_[0, 1, rng.integers(0, 2, 98)]
        f = rng.standard_normal(100)
        report = counterfactual_flips(f, s.astype(float), s, CombinedClassifier(-2.0, 0.5, 0.0))
        assert report.flips_1to0_group[1] == 0.0
        assert report.flips_0to1_group[0] == 0.0
        assert report.flips_0to1_group[1] > 0.0
        assert report.flips_1to0_group[0] > 0.0

    def test_decomposition(self):
        rng = np.random.default_rng(3)
        s = np.r_[0, 1, rng.integers(0, 2, 198)]
        g = np.clip(s + rng.normal(0, 0.2, 200), -0.5, 1.5)
        f = rng.standard_normal(200)
        report = counterfactual_flips(f, g, s, CombinedClassifier(-1.2, 0.1, 0.0))
        n0, n1 = report.n_per_group
        weighted = (
            n0 * (report.flips_0to1_group[0] + report.flips_1to0_group[0])
            + n1 * (report.flips_0to1_group[1] + report.flips_1to0_group[1])
        ) / (n0 + n1)
        assert report.flip_fraction_total == pytest.approx(weighted, abs=1e-15)

    def test_missing_group(self):
        with pytest.raises(UndefinedMetricError):
            counterfactual_flips(np.zeros(3), np.zeros(3), np.zeros(3), CombinedClassifier(1, 0, 0))

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            counterfactual_flips(np.zeros(3), np.zeros(2), [0, 1, 1], CombinedClassifier(1, 0, 0))


class TestDisadvantagedRegion:
    def test_hand_case(self):
        f = np.array([-2.0, -0.5, 0.0, 0.5, 2.0, 1.0])
        region = disadvantaged_region(f, np.zeros(6), heads_rule(2.0, -1.0))
        assert region.indices.tolist() == [1, 2, 3, 5]
        assert region.interval == (-1.0, 1.0)

    def test_mirrored_rule(self):
        f = np.array([-2.0, -0.5, 0.0, 0.5, 2.0, 1.0])
        a = disadvantaged_region(f, np.zeros(6), heads_rule(2.0, -1.0))
        b = disadvantaged_region(f, np.zeros(6), heads_rule(-2.0, 1.0))
        assert a.indices.tolist() == b.indices.tolist()

    def test_zero_weight(self):
        region = disadvantaged_region(np.arange(5.0), np.zeros(5), heads_rule(0.0, 1.0))
        assert region.indices.size == 0
        assert region.interval == (0.0, 0.0)

    def test_recovery_direction_uses_rule(self):
        f = np.array([-5.0, 1.5, 2.0, 4.0, 4.5])
        recovery = ReconstructionResult(
            Direction.UNCONSTRAINED_FROM_FAIR, (3.0, 1.0), agreement=math.nan
        )
        region = disadvantaged_region(f, np.zeros(5), recovery)
        assert region.rule == (-3.0, -1.0)
        assert region.indices.tolist() == [1, 2, 3]

    def test_near_binary_fraction(self):
        region = disadvantaged_region(
            np.zeros(4), np.array([0.0, 0.05, 0.5, 1.08]), heads_rule(1.0, 0.0)
        )
        assert region.near_binary_fraction == 0.75

    def test_equivalent_to_counterfactual_flips(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(4, 101))
            s = np.r_[0, 1, rng.integers(0, 2, n - 2)]
            f = rng.uniform(-3.0, 3.0, n)
            a1, a2 = rng.uniform(-3.0, 3.0, 2)
            region = disadvantaged_region(f, s.astype(float), heads_rule(a1, a2))
            report = counterfactual_flips(f, s.astype(float), s, CombinedClassifier(a1, a2, 0.0))
            for k in (0, 1):
                in_group = int(np.count_nonzero(s[region.indices] == k))
                assert in_group == report.flips_0to1_count[k] + report.flips_1to0_count[k]
