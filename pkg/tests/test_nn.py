"""Tests for the MLP trainer: losses, hand-derived gradients, training and persistence."""

import math

import numpy as np
import pytest

from fairlens import nn
from fairlens.data import Dataset, SyntheticSpec, generate
from fairlens.errors import ArgumentError, SchemaError, TrainingDivergedError, ValidationError
from fairlens.fairness import ddp
from fairlens.nn import (
    TrainConfig,
    TwoHeadModel,
    bce_loss,
    compress,
    forward_scores,
    init_model,
    last_layer,
    load_model,
    loss_and_gradients,
    parameters,
    save_model,
    score,
    train,
    with_parameters,
)
from fairlens.types import Method, Split


@pytest.fixture(scope="module")
def small_ds():
    return generate(SyntheticSpec(n_samples=1200, n_features=4, seed=2))


def tiny_config(method=Method.UNCONSTRAINED, **kw):
    kw.setdefault("epochs", 3)
    kw.setdefault("hidden_widths", (8,))
    return TrainConfig(method=method, **kw)


def numeric_gradient(model, X, y, s, method, lam, h=1e-5):
    params = parameters(model)
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            down = [q.copy() for q in params]
            up[k][i] += h
            down[k][i] -= h
            lu, _ = loss_and_gradients(with_parameters(model, up), X, y, s, method, lam)
            ld, _ = loss_and_gradients(with_parameters(model, down), X, y, s, method, lam)
            g[i] = (lu - ld) / (2 * h)
        out.append(g)
    return out


class TestBceLoss:
    def test_zero_logit(self):
        assert bce_loss([0.0], [1]) == pytest.approx(math.log(2.0))

    def test_saturated_without_overflow(self):
        assert bce_loss([50.0], [1]) <= 1e-20
        assert bce_loss([-800.0], [0]) == 0.0
        assert math.isfinite(bce_loss([800.0], [0]))

    def test_hand_case(self):
        assert bce_loss([1.0, -1.0], [1, 0]) == pytest.approx(0.313262, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            bce_loss([0.0, 1.0], [1])


class TestTrainConfig:
    def test_dict_round_trip(self):
        cfg = TrainConfig(method=Method.REG_ABS, lam=0.5, hidden_widths=(16, 8))
        doc = cfg.to_dict()
        assert doc["lambda"] == 0.5
        assert TrainConfig.from_dict(doc) == cfg

    def test_unknown_option(self):
        with pytest.raises(ValidationError):
            TrainConfig.from_dict({"momentum": 0.9})

    @pytest.mark.parametrize(
        "kw,field",
        [
            ({"method": Method.MASSAGING}, "method"),
            ({"lam": -1.0}, "lambda"),
            ({"epochs": 0}, "epochs"),
            ({"learning_rate": 0.0}, "learning_rate"),
            ({"batch_size": 0}, "batch_size"),
            ({"hidden_widths": ()}, "hidden_widths"),
            ({"selection": "f1"}, "selection"),
        ],
    )
    def test_validate_names_field(self, kw, field):
        with pytest.raises(ValidationError) as exc_info:
            TrainConfig(**kw).validate()
        assert exc_info.value.field == field

    def test_effective_lambda(self):
        assert TrainConfig(method=Method.TWO_HEAD, lam=3.0).effective_lambda == 0.0
        assert TrainConfig(method=Method.REG_SQUARED, lam=3.0).effective_lambda == 3.0


class TestModel:
    def test_hand_computed_network(self):
        model = TwoHeadModel(
            layers=((np.array([[2.0]]), np.array([-1.0])),),
            w_f=np.array([3.0]),
            b_f=0.5,
            w_g=np.array([0.25]),
            b_g=0.1,
        )
        f, g = forward_scores(model, np.array([[1.5], [0.2]]))
        assert f[0] == pytest.approx(6.5, abs=1e-12)
        assert g[0] == pytest.approx(0.6, abs=1e-12)
        assert f[1] == pytest.approx(0.5, abs=1e-12)

    def test_zero_parameters_score_zero(self, small_ds):
        model = init_model(4, (5,), False, np.random.default_rng(0))
        zeros = with_parameters(model, [np.zeros_like(p) for p in parameters(model)])
        scores = score(zeros, small_ds, Split.TEST)
        assert np.all(scores.f_scores == 0.0)
        assert scores.g_scores is None

    def test_score_is_pure(self, small_ds):
        model = init_model(4, (6, 3), True, np.random.default_rng(1))
        a = score(model, small_ds, Split.VALIDATION)
        b = score(model, small_ds, Split.VALIDATION)
        assert np.array_equal(a.f_scores, b.f_scores)
        assert np.array_equal(a.g_scores, b.g_scores)
        assert len(a) == small_ds.indices(Split.VALIDATION).size

    def test_last_layer(self, small_ds):
        model = init_model(4, (6, 5), True, np.random.default_rng(2))
        z = last_layer(model, small_ds, Split.TEST)
        assert z.shape == (small_ds.indices(Split.TEST).size, 5)
        assert np.all(z >= 0.0)
        f = score(model, small_ds, Split.TEST).f_scores
        assert np.allclose(f, z @ model.w_f + model.b_f, atol=1e-10)

    def test_dimension_mismatch(self, small_ds):
        model = init_model(3, (4,), False, np.random.default_rng(0))
        with pytest.raises(ArgumentError):
            score(model, small_ds, Split.TEST)

    def test_inconsistent_shapes(self):
        with pytest.raises(ArgumentError):
            TwoHeadModel(layers=((np.zeros((2, 3)), np.zeros(3)),), w_f=np.zeros(2), b_f=0.0)

    def test_compress_identity(self, small_ds):
        model = init_model(4, (8, 8), True, np.random.default_rng(3))
        model = with_parameters(model, [p + 0.1 for p in parameters(model)])
        f, g = forward_scores(model, small_ds.X(Split.TEST))
        for a1, a2 in ((0.0, 0.0), (-2.5, 1.25), (7.0, -3.0)):
            single = compress(model, a1, a2)
            assert not single.has_group_head
            combined, none = forward_scores(single, small_ds.X(Split.TEST))
            assert none is None
            assert np.allclose(combined, f + a1 * g + a2, atol=1e-10)

    def test_compress_needs_group_head(self):
        model = init_model(2, (3,), False, np.random.default_rng(0))
        with pytest.raises(ArgumentError):
            compress(model, 1.0, 0.0)

    def test_compress_rejects_infinite(self):
        model = init_model(2, (3,), True, np.random.default_rng(0))
        with pytest.raises(ArgumentError):
            compress(model, 0.0, math.inf)


class TestGradients:
    @pytest.mark.parametrize(
        "method,lam",
        [
            (Method.UNCONSTRAINED, 0.0),
            (Method.REG_SQUARED, 2.0),
            (Method.REG_ABS, 1.5),
            (Method.TWO_HEAD, 0.0),
        ],
    )
    def test_matches_finite_differences(self, method, lam):
        rng = np.random.default_rng(7)
        for _ in range(20):
            model = init_model(3, (4,), method is Method.TWO_HEAD, rng)
            X = rng.standard_normal((12, 3))
            y = rng.integers(0, 2, 12)
            s = np.r_[0, 1, rng.integers(0, 2, 10)]
            _, analytic = loss_and_gradients(model, X, y, s, method, lam)
            numeric = numeric_gradient(model, X, y, s, method, lam)
            for a, n in zip(analytic, numeric):
                assert np.allclose(a, n, rtol=1e-4, atol=1e-7)

    def test_gradient_order_matches_parameters(self):
        model = init_model(3, (4, 2), True, np.random.default_rng(0))
        X = np.ones((5, 3))
        _, grads = loss_and_gradients(model, X, [0, 1, 0, 1, 1], [0, 0, 1, 1, 0], Method.TWO_HEAD)
        assert [g.shape for g in grads] == [p.shape for p in parameters(model)]

    def test_single_group_batch_skips_regularizer(self):
        model = init_model(3, (4,), False, np.random.default_rng(0))
        X = np.random.default_rng(1).standard_normal((6, 3))
        y = [0, 1, 0, 1, 1, 0]
        s = [1] * 6
        plain, _ = loss_and_gradients(model, X, y, s, Method.UNCONSTRAINED)
        reg, _ = loss_and_gradients(model, X, y, s, Method.REG_SQUARED, 5.0)
        assert reg == plain


class TestTrain:
    def test_deterministic(self, small_ds):
        cfg = tiny_config(Method.TWO_HEAD, seed=4)
        a, b = train(small_ds, cfg), train(small_ds, cfg)
        for p, q in zip(parameters(a), parameters(b)):
            assert np.array_equal(p, q)

    def test_zero_lambda_matches_unconstrained(self, small_ds):
        base = train(small_ds, tiny_config(seed=5))
        for method in (Method.REG_SQUARED, Method.REG_ABS):
            reg = train(small_ds, tiny_config(method, lam=0.0, seed=5))
            for p, q in zip(parameters(base), parameters(reg)):
                assert np.array_equal(p, q)

    def test_history_and_selection(self, small_ds):
        model = train(small_ds, tiny_config(epochs=4, selection="last"))
        assert len(model.history) == 4
        assert model.selected_epoch == 3
        assert model.config is not None
        assert [h["epoch"] for h in model.history] == [0, 1, 2, 3]

    def test_selected_epoch_in_range(self, small_ds):
        model = train(small_ds, tiny_config(epochs=3))
        assert 0 <= model.selected_epoch < 3

    def test_regularizer_lowers_disparity(self, small_ds):
        opts = {"epochs": 10, "seed": 1, "learning_rate": 1e-2, "selection": "last"}
        base = train(small_ds, tiny_config(**opts))
        fair = train(small_ds, tiny_config(Method.REG_SQUARED, lam=50.0, **opts))

        def gap(model):
            f = score(model, small_ds, Split.TRAIN).f_scores
            return abs(ddp((f > 0).astype(int), small_ds.s(Split.TRAIN)))

        assert gap(fair) < gap(base)

    def test_divergence_reports_position(self, small_ds, monkeypatch):
        calls = {"n": 0}
        real = nn.loss_and_gradients

        def failing(*args, **kwargs):
            calls["n"] += 1
            loss, grads = real(*args, **kwargs)
            return (math.nan if calls["n"] == 3 else loss), grads

        monkeypatch.setattr(nn, "loss_and_gradients", failing)
        with pytest.raises(TrainingDivergedError) as exc_info:
            train(small_ds, tiny_config())
        assert exc_info.value.epoch == 0
        assert exc_info.value.batch == 2

    def test_invalid_config(self, small_ds):
        with pytest.raises(ValidationError):
            train(small_ds, TrainConfig(method=Method.LIPTON))

    def test_logger_receives_epochs(self, small_ds):
        import io

        from fairlens import log

        buf = io.StringIO()
        train(small_ds, tiny_config(epochs=2), logger=log.New(buf, "", 0))
        lines = buf.getvalue().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("unconstrained lambda=0 seed=0 epoch 0:")

    @pytest.mark.slow
    def test_group_head_recovers_protected(self):
        ds = generate(SyntheticSpec(n_samples=20000, separability=3.0))
        model = train(ds, TrainConfig(method=Method.TWO_HEAD, epochs=5))
        g = score(model, ds, Split.TEST).require_g()
        assert np.mean((g > 0.5) == ds.s(Split.TEST)) >= 0.95

    @pytest.mark.slow
    def test_unconstrained_inherits_base_rate_gap(self):
        ds = generate(SyntheticSpec(n_samples=8000, base_rate_gap=0.3))
        model = train(ds, TrainConfig(epochs=5))
        f = score(model, ds, Split.TEST).f_scores
        assert abs(ddp((f > 0).astype(int), ds.s(Split.TEST))) >= 0.15


class TestPersistence:
    def test_round_trip_bit_exact(self, small_ds, tmp_path):
        model = train(small_ds, tiny_config(Method.TWO_HEAD, epochs=2))
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        for p, q in zip(parameters(model), parameters(back)):
            assert np.array_equal(p, q)
        assert back.config == model.config
        assert back.selected_epoch == model.selected_epoch

    def test_single_head_round_trip(self, tmp_path):
        model = init_model(3, (2,), False, np.random.default_rng(0))
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert not back.has_group_head
        assert back.config is None

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format_version": 99}', encoding="utf-8")
        with pytest.raises(SchemaError):
            load_model(path)

    def test_malformed(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format_version": 1, "layers": [{"weights": 1}]}', encoding="utf-8")
        with pytest.raises(ValueError):
            load_model(path)


def test_dataset_without_features_is_rejected_by_model():
    ds = Dataset(np.zeros((4, 2)), [0, 1, 0, 1], [0, 0, 1, 1], ["train"] * 4)
    model = init_model(3, (2,), False, np.random.default_rng(0))
    with pytest.raises(ArgumentError):
        last_layer(model, ds, Split.TRAIN)
