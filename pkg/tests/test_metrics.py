import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adjointnet.data import STEP, RawSeries, window
from adjointnet.exceptions import ContractError, DimensionError, DomainError
from adjointnet.metrics import (
    CIConfig,
    EvaluationReport,
    compare,
    error_all,
    error_extremum,
    evaluate,
    extremum_windows,
    mape_with_exclusions,
    truth_series,
    window_mask,
)
from oracles import errors_streaming


class StubModel:
    """Forecasts truth plus a fixed bias with a fixed spread."""

    use_ancillary = False

    def __init__(self, test, bias=0.0, std=1.0):
        self.test, self.bias, self.std = test, bias, std

    def predict(self, X, X_anc=None):
        return np.asarray(self.test.targets) + self.bias

    def predict_moments(self, X, X_anc=None, n_samples=100, seed=0):
        return self.predict(X), np.full(self.test.targets.shape, self.std)


def day_series(days=3, lookback=4, horizon=3):
    n = days * 96
    ts = np.datetime64("2014-06-29T00:00", "m") + np.arange(n) * STEP
    target = 70.0 + 3 * np.sin(np.arange(n) * 2 * np.pi / 96)
    s = RawSeries(ts, np.zeros((n, 10)), np.zeros((n, 3)), target)
    return window(s, lookback, horizon)


class TestErrorAll:
    def test_hand_example(self):
        assert error_all([11.0], [10.0]) == (1.0, 1.0, 10.0)

    def test_perfect(self):
        assert error_all([70.0, 71.0], [70.0, 71.0]) == (0.0, 0.0, 0.0)

    def test_rmse_at_least_mae(self, rng):
        p, t = rng.normal(70, 2, 50), rng.normal(70, 2, 50)
        rmse, mae, _ = error_all(p, t)
        assert rmse >= mae

    @pytest.mark.parametrize("seed", range(15))
    def test_streaming_oracle(self, seed):
        r = np.random.default_rng(seed)
        p, t = r.normal(70, 3, 97), r.normal(70, 3, 97)
        for got, want in zip(error_all(p, t), errors_streaming(p, t)):
            assert abs(got - want) < 1e-10

    def test_zero_truth_excluded(self):
        mape, excl = mape_with_exclusions([1.0, 11.0], [0.0, 10.0])
        assert (mape, excl) == (pytest.approx(10.0), 1)

    def test_all_zero_truth(self):
        with pytest.raises(DomainError):
            error_all([1.0, 2.0], [0.0, 0.0])

    def test_misaligned(self):
        with pytest.raises(DimensionError):
            error_all([1.0, 2.0], [1.0])

    def test_empty(self):
        with pytest.raises(DomainError):
            error_all([], [])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(40, 100)),
           st.floats(-5, 5))
    def test_constant_bias(self, t, b):
        rmse, mae, _ = error_all(t + b, t)
        assert rmse == pytest.approx(abs(b), abs=1e-9)
        assert mae == pytest.approx(abs(b), abs=1e-9)


class TestExtremum:
    def test_single_day_hand_case(self):
        truth = np.zeros(96)
        truth[10], truth[50] = 5.0, -5.0
        ws = extremum_windows(truth)
        assert [(w.kind, w.center, w.members) for w in ws] == [
            ("max", 10, (8, 9, 10, 11, 12)),
            ("min", 50, (48, 49, 50, 51, 52)),
        ]

    def test_clipped_at_day_start(self):
        truth = np.zeros(96)
        truth[0] = 9.0
        assert extremum_windows(truth)[0].members == (0, 1, 2)

    def test_clipped_at_day_end(self):
        truth = np.zeros(192)
        truth[95] = 9.0
        assert extremum_windows(truth)[0].members == (93, 94, 95)

    def test_ties_take_earliest(self):
        truth = np.zeros(96)
        truth[[20, 70]] = 4.0
        assert extremum_windows(truth)[0].center == 20

    def test_partial_day_flag(self):
        ws = extremum_windows(np.arange(140.0))
        assert [w.partial for w in ws] == [False, False, True, True]

    def test_timestamps_define_days(self):
        ts = np.datetime64("2014-06-02T23:00", "m") + np.arange(8) * STEP
        truth = np.array([1, 2, 3, 4, 9, 0, 0, 0], dtype=float)
        ws = extremum_windows(truth, ts)
        assert [w.date for w in ws] == [np.datetime64("2014-06-02")] * 2 + [np.datetime64("2014-06-03")] * 2
        assert ws[2].members == (4, 5, 6)

    def test_restricted_error(self):
        truth = np.zeros(96)
        truth[10], truth[50] = 5.0, -5.0
        pred = truth.copy()
        pred[9] += 2.0
        pred[30] += 100.0
        rmse, mae, _ = error_extremum(pred + 70, truth + 70, extremum_windows(truth))
        assert rmse == pytest.approx(np.sqrt(4 / 10))
        assert mae == pytest.approx(0.2)

    def test_empty_union(self):
        with pytest.raises(DomainError):
            error_extremum([1.0], [1.0], [])

    def test_mask(self):
        ws = extremum_windows(np.r_[np.zeros(40), 1.0, np.zeros(55)])
        assert window_mask(96, ws).sum() == 8


class TestEvaluate:
    def test_truth_series_unique(self):
        test = day_series()
        t, v = truth_series(test)
        assert v.size == len(test) + test.horizon - 1
        np.testing.assert_array_equal(v[:len(test)], test.targets[:, 0])

    def test_perfect_model(self):
        test = day_series()
        rep = evaluate(StubModel(test), test, "multi_step")
        assert rep.overall.rmse == 0.0 and rep.overall.nc95 == 0.0
        assert rep.overall.n == test.targets.size

    def test_one_step_uses_step_zero(self):
        test = day_series()
        rep = evaluate(StubModel(test, bias=1.0), test, "one_step")
        assert rep.overall.n == len(test)
        assert rep.overall.rmse == pytest.approx(1.0)
        assert rep.per_step is None

    def test_monthly_groups_partition(self):
        test = day_series()
        rep = evaluate(StubModel(test, bias=0.5), test, "multi_step")
        assert set(rep.monthly) == {"2014-06", "2014-07"}
        assert sum(r.n for r in rep.monthly.values()) == rep.overall.n

    def test_bias_outside_interval(self):
        test = day_series()
        rep = evaluate(StubModel(test, bias=3.0, std=1.0), test, "multi_step")
        assert rep.overall.nc95 == 1.0 and rep.overall.nc68 == 1.0

    def test_per_step_vector(self):
        test = day_series()
        rep = evaluate(StubModel(test, bias=2.0), test, "multi_step")
        assert rep.per_step["rmse"] == pytest.approx([2.0] * test.horizon)

    def test_unknown_mode(self):
        test = day_series()
        with pytest.raises(DomainError):
            evaluate(StubModel(test), test, "two_step")

    def test_non_contiguous(self):
        test = day_series().subset(np.array([0, 2, 4]))
        with pytest.raises(ContractError):
            evaluate(StubModel(test), test)

    def test_report_round_trip(self, tmp_path):
        test = day_series()
        rep = evaluate(StubModel(test, bias=0.3), test, "multi_step", CIConfig(7, 1), model_tag="adjoint")
        back = EvaluationReport.from_dict(json.loads(rep.to_json()))
        assert back == rep
        rep.write(tmp_path)
        assert (tmp_path / "adjoint_multi_step.json").read_text() == rep.to_json()
        rows = list(csv.reader((tmp_path / "adjoint_multi_step_monthly.csv").open()))
        assert rows[-1][0] == "all"
        assert len(list(csv.reader((tmp_path / "adjoint_multi_step_per_step.csv").open()))) == test.horizon + 1

    def test_foreign_schema(self):
        with pytest.raises(ContractError):
            EvaluationReport.from_dict({"schema": "other/1"})


class TestCompare:
    def test_better_model_improves(self):
        test = day_series()
        a = evaluate(StubModel(test, bias=0.1), test, "multi_step", model_tag="adjoint")
        b = evaluate(StubModel(test, bias=0.5), test, "multi_step", model_tag="plain")
        c = compare(a, b)
        assert c.improved("rmse") and c.improved("ext_rmse")
        assert c.delta("rmse") == pytest.approx(-0.4)

    def test_split_mismatch(self):
        a_test, b_test = day_series(3), day_series(4)
        with pytest.raises(ContractError, match="different splits"):
            compare(evaluate(StubModel(a_test), a_test), evaluate(StubModel(b_test), b_test))

    def test_mode_mismatch(self):
        test = day_series()
        with pytest.raises(ContractError, match="modes"):
            compare(evaluate(StubModel(test), test, "one_step"), evaluate(StubModel(test), test, "multi_step"))

    def test_csv(self, tmp_path):
        test = day_series()
        c = compare(evaluate(StubModel(test, 0.1), test), evaluate(StubModel(test, 0.2), test))
        c.write_csv(tmp_path / "c.csv")
        rows = list(csv.reader((tmp_path / "c.csv").open()))
        assert rows[0] == ["mode", "scope", "metric", "adjoint", "plain", "delta", "improved"]
        assert rows[1][:3] == ["multi_step", "all", "rmse"]
