import hashlib

import numpy as np
import pytest
from sklearn.base import clone

from adjointnet.autograd import Tensor
from adjointnet.exceptions import DimensionError, DomainError, TrainingError, ValidationError
from adjointnet.model import AdjointForecaster, combine
from conftest import tiny_model

# Regenerate with: tiny_model().build(2, (4, 2)).forward_main(np.linspace(-1, 1, 12).reshape(6, 2))
GOLDEN_MAIN = np.array([0.16364814713435658, -0.00235276247862693, -0.09353435520495454, 0.06521688732763686])


def zero_all(model):
    for p in model.parameters():
        p.data[...] = 0.0
    return model


def toy_data(rng, n=40, L=6, H=4, m=2):
    X = rng.normal(size=(n, L, m))
    A = (rng.random((n, H, 2)) < 0.3).astype(float)
    y = 70 + 2 * X[:, -1, :1] + 3 * A[:, :, 0] + rng.normal(0, 0.1, size=(n, H))
    return X, A, y


class TestCombine:
    def test_average(self):
        np.testing.assert_array_equal(combine(np.full(96, 20.0), np.full(96, 22.0), 0.5, 0.5), np.full(96, 21.0))

    def test_identity_weight(self, rng):
        y = rng.normal(size=8)
        np.testing.assert_array_equal(combine(y, rng.normal(size=8), 1.0, 0.0), np.maximum(y, 0))

    def test_relu_clamp(self):
        np.testing.assert_array_equal(combine([-4.0], [-2.0], 0.5, 0.5), [0.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            combine(np.ones(3), np.ones(4), 0.5, 0.5)

    def test_per_step_weights(self):
        out = combine([1.0, 2.0], [3.0, 4.0], np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        np.testing.assert_array_equal(out, [1.0, 4.0])


class TestForward:
    def test_zero_weight_main(self):
        m = zero_all(AdjointForecaster(lstm_hidden=4, main_widths=(8,), anc_widths=(4,)).build(3, (96, 3)))
        out = m.forward_main(np.random.default_rng(0).normal(size=(96, 3)))
        np.testing.assert_array_equal(out, np.zeros(96))

    def test_zero_weight_ancillary(self):
        m = zero_all(AdjointForecaster(lstm_hidden=4, main_widths=(8,), anc_widths=(4,)).build(3, (96, 3)))
        np.testing.assert_array_equal(m.forward_ancillary(np.zeros((96, 3))), np.zeros(96))

    def test_single_step_horizon(self):
        m = tiny_model(horizon=1).build(2, (1, 2))
        assert m.forward_main(np.zeros((6, 2))).shape == (1,)

    def test_golden_vector(self):
        m = tiny_model().build(2, (4, 2))
        out = m.forward_main(np.linspace(-1, 1, 12).reshape(6, 2))
        np.testing.assert_allclose(out, GOLDEN_MAIN, rtol=0, atol=1e-14)

    def test_window_shape_checked(self, built_tiny):
        with pytest.raises(DimensionError):
            built_tiny.forward_main(np.zeros((5, 2)))
        with pytest.raises(DimensionError):
            built_tiny.forward_ancillary(np.zeros((4, 3)))

    def test_non_binary_ancillary(self, built_tiny):
        anc = np.zeros((4, 2))
        anc[1, 0] = 0.5
        with pytest.raises(ValidationError, match="0.5"):
            built_tiny.forward_ancillary(anc)

    def test_predict_is_composition(self, built_tiny, rng):
        X = rng.normal(size=(7, 6, 2))
        A = (rng.random((7, 4, 2)) < 0.5).astype(float)
        expected = combine(built_tiny.forward_main(X), built_tiny.forward_ancillary(A),
                           built_tiny.w1_.data, built_tiny.w2_.data)
        np.testing.assert_array_equal(built_tiny.predict(X, A), expected)

    def test_predict_non_negative(self, built_tiny, rng):
        built_tiny.w1_.data[...] = 3.0
        built_tiny.w2_.data[...] = -2.0
        X = rng.normal(scale=5, size=(1000, 6, 2))
        A = (rng.random((1000, 4, 2)) < 0.5).astype(float)
        assert np.all(built_tiny.predict(X, A) >= 0)

    def test_w2_zero_is_relu_of_main(self, built_tiny, rng):
        built_tiny.w1_.data[...] = 1.0
        built_tiny.w2_.data[...] = 0.0
        X = rng.normal(size=(50, 6, 2))
        A = np.ones((50, 4, 2))
        np.testing.assert_array_equal(built_tiny.predict(X, A), np.maximum(built_tiny.forward_main(X), 0.0))

    def test_predict_requires_ancillary(self, built_tiny):
        with pytest.raises(DomainError):
            built_tiny.predict(np.zeros((1, 6, 2)))

    def test_one_step_is_element_zero(self, built_tiny, rng):
        X = rng.normal(size=(3, 6, 2))
        A = np.zeros((3, 4, 2))
        full = built_tiny.predict(X, A)
        for k in range(3):
            assert built_tiny.predict(X[k:k + 1], A[k:k + 1])[0, 0] == pytest.approx(full[k, 0], abs=1e-14)


class TestParameters:
    def test_tiny_count(self, built_tiny):
        assert built_tiny.n_parameters() == 310

    def test_default_closed_form(self):
        m = AdjointForecaster().build(20, (96, 3))
        h, L, n_in = 64, 2, 20
        lstm = 4 * h * (n_in + h + 1) + 4 * h * (h + h + 1)

        def dense(n, widths, out):
            sizes = [n, *widths, out]
            return sum(a * b + b for a, b in zip(sizes, sizes[1:]))

        main = dense(2 * h * L, (128, 128, 128, 112, 112, 96), 96)
        anc = dense(96 * 3, (32, 48, 64), 96)
        assert m.n_parameters() == lstm + main + anc + 2

    def test_groups_partition(self, built_tiny):
        groups = built_tiny.parameter_groups()
        ids = [id(p) for ps in groups.values() for p in ps]
        assert len(ids) == len(set(ids)) == len(built_tiny.parameters())
        assert [p.name for p in groups["combiner"]] == ["combiner.w1", "combiner.w2"]

    def test_sklearn_clone(self):
        m = tiny_model(dropout=0.2)
        c = clone(m)
        assert c.get_params() == m.get_params()

    def test_main_only_copies_main(self, built_tiny, rng):
        plain = built_tiny.main_only()
        X = rng.normal(size=(4, 6, 2))
        np.testing.assert_array_equal(plain.predict(X), built_tiny.forward_main(X))
        assert not plain.use_ancillary
        plain.main_net_[0].W.data[...] = 0.0
        assert np.any(built_tiny.main_net_[0].W.data != 0.0)

    def test_invalid_combiner(self):
        with pytest.raises(DomainError):
            tiny_model(combiner="matrix").build(2, (4, 2))


def param_hash(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.data.tobytes())
    return h.hexdigest()


class TestFit:
    def test_zero_epochs_keeps_initialisation(self, rng):
        X, A, y = toy_data(rng)
        init = tiny_model().build(2, (4, 2))
        m = tiny_model().fit(X, y, A, eval_set=(X, y, A))
        for (n1, p1), (n2, p2) in zip(init.named_parameters(), m.named_parameters()):
            assert n1 == n2
            np.testing.assert_array_equal(p1.data, p2.data)
        for stage in m.training_report_.stages.values():
            assert stage.train_rmse == [] and stage.val_rmse == []

    def test_same_seed_bit_identical(self, rng):
        X, A, y = toy_data(rng)
        kw = dict(epochs=2, combiner_epochs=2)
        a = tiny_model(**kw).fit(X, y, A, eval_set=(X[:10], y[:10], A[:10]))
        b = tiny_model(**kw).fit(X, y, A, eval_set=(X[:10], y[:10], A[:10]))
        assert a.training_report_ == b.training_report_
        assert param_hash(a.parameters()) == param_hash(b.parameters())

    def test_different_seed_differs(self, rng):
        X, A, y = toy_data(rng)
        a = tiny_model(epochs=1, random_state=0).fit(X, y, A)
        b = tiny_model(epochs=1, random_state=1).fit(X, y, A)
        assert param_hash(a.parameters()) != param_hash(b.parameters())

    def test_stage_three_touches_only_combiner(self, rng):
        X, A, y = toy_data(rng)
        before = tiny_model(epochs=2, combiner_epochs=0).fit(X, y, A)
        after = tiny_model(epochs=2, combiner_epochs=3).fit(X, y, A)
        for group in ("main", "ancillary"):
            assert param_hash(before.parameter_groups()[group]) == param_hash(after.parameter_groups()[group])
        assert param_hash(before.parameter_groups()["combiner"]) != param_hash(after.parameter_groups()["combiner"])

    def test_early_stopping_consistent_with_history(self, rng):
        X, A, y = toy_data(rng, n=60)
        m = tiny_model(epochs=12, combiner_epochs=4, patience=2).fit(X, y, A, eval_set=(X[:15], y[:15], A[:15]))
        for log in m.training_report_.stages.values():
            assert log.best_epoch == int(np.argmin(log.val_rmse))
            if log.stopped_early:
                tail = log.val_rmse[log.best_epoch + 1:]
                assert len(tail) == m.patience and min(tail) >= log.val_rmse[log.best_epoch]

    def test_learnability(self):
        r = np.random.default_rng(0)
        X = r.normal(size=(400, 4, 2))
        y = np.repeat(3.0 * X[:, -1, :1] + 60.0, 2, axis=1)
        m = AdjointForecaster(lookback=4, horizon=2, lstm_hidden=6, main_widths=(16,), use_ancillary=False,
                              dropout=0.0, epochs=60, batch_size=32, learning_rate=1e-2, patience=60)
        m.fit(X[:300], y[:300], eval_set=(X[300:], y[300:]))
        val = m.training_report_.stages["main"].val_rmse[m.training_report_.stages["main"].best_epoch]
        assert val < 0.1 * y[300:].std()

    def test_indicator_flip_changes_output(self, rng):
        X, A, y = toy_data(rng, n=80)
        m = tiny_model(epochs=5, combiner_epochs=2).fit(X, y, A)
        weekday = np.zeros((4, 2))
        holiday = weekday.copy()
        holiday[:, 0] = 1.0
        assert np.any(m.forward_ancillary(weekday) != m.forward_ancillary(holiday))

    def test_divergence_raises(self, rng, monkeypatch):
        import adjointnet.model as model_mod

        def nan_loss(pred, target):
            return Tensor._result(np.asarray(np.nan), (pred,), lambda g: (np.zeros_like(pred.data),), "nan")

        monkeypatch.setattr(model_mod, "rmse_loss", nan_loss)
        X, A, y = toy_data(rng)
        with pytest.raises(TrainingError) as info:
            tiny_model(epochs=2).fit(X, y, A)
        assert info.value.last_finite_epoch is None

    def test_empty_training_split(self):
        with pytest.raises(DomainError):
            tiny_model().fit(np.zeros((0, 6, 2)), np.zeros((0, 4)), np.zeros((0, 4, 2)))

    def test_empty_validation_split(self, rng):
        X, A, y = toy_data(rng)
        with pytest.raises(DomainError):
            tiny_model().fit(X, y, A, eval_set=(X[:0], y[:0], A[:0]))

    def test_requires_ancillary(self, rng):
        X, _, y = toy_data(rng)
        with pytest.raises(DomainError):
            tiny_model().fit(X, y)

    def test_target_shape_checked(self, rng):
        X, A, y = toy_data(rng)
        with pytest.raises(DimensionError):
            tiny_model().fit(X, y[:, :3], A)

    def test_non_binary_training_indicators(self, rng):
        X, A, y = toy_data(rng)
        A[0, 0, 0] = 2.0
        with pytest.raises(ValidationError):
            tiny_model().fit(X, y, A)

    def test_report_serialisation_excludes_timing(self, rng):
        X, A, y = toy_data(rng)
        m = tiny_model(epochs=1).fit(X, y, A)
        d = m.training_report_.to_dict()
        assert "wall_clock_seconds" not in d
        assert m.training_report_.to_dict(include_timing=True)["wall_clock_seconds"] >= 0
        assert d["n_parameters"] == m.n_parameters()

    def test_score_is_r2(self, rng):
        X, A, y = toy_data(rng)
        m = tiny_model(epochs=3, combiner_epochs=3).fit(X, y, A)
        assert np.isfinite(m.score(X, y, A))

    def test_joint_finetune_stage(self, rng):
        X, A, y = toy_data(rng)
        m = tiny_model(epochs=1, combiner_epochs=1, joint_finetune=True).fit(X, y, A)
        assert list(m.training_report_.stages) == ["main", "ancillary", "combiner", "joint"]

    def test_ancillary_lstm_front_end(self, rng):
        X, A, y = toy_data(rng)
        m = tiny_model(epochs=1, anc_lstm_hidden=3).fit(X, y, A)
        assert m.predict(X, A).shape == y.shape
        assert any(name.startswith("anc.lstm0") for name, _ in m.named_parameters())
