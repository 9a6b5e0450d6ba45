"""Tests unitaires : métriques et séries d'erreur (ml/metrics.py)."""

import numpy as np
import pandas as pd
import pytest

from ml.metrics import REPORT_COLUMNS, compute_metrics, rul_error_series, soh_error_series, write_report
from utils.errors import DataError, ShapeError


class TestComputeMetrics:

    def test_perfect(self):
        r = compute_metrics([1.0, 0.9], [1.0, 0.9], "SOH")
        assert (r.mae, r.rmse, r.mape) == (0.0, 0.0, 0.0)

    def test_hand_example_soh(self):
        r = compute_metrics([2.0, 4.0], [1.0, 6.0], "SOH", "b1")
        assert r.mae == pytest.approx(1.5)
        assert r.rmse == pytest.approx(np.sqrt(2.5))
        assert r.mape == pytest.approx(50.0)
        assert r.medae is None
        assert r.n == 2

    def test_hand_example_rul(self):
        r = compute_metrics([2.0, 4.0], [1.0, 6.0], "RUL")
        assert r.medae == pytest.approx(1.5)
        assert r.mape is None
        assert r.mape_or_medae == r.medae

    def test_rmse_dominates_mae(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 20))
            r = compute_metrics(rng.uniform(0.5, 1.5, n), rng.uniform(0.5, 1.5, n), "SOH")
            assert r.rmse >= r.mae - 1e-15
            assert r.mape >= 0.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        y, yhat = rng.uniform(1, 5, 9), rng.uniform(1, 5, 9)
        perm = rng.permutation(9)
        a, b = compute_metrics(y, yhat, "RUL"), compute_metrics(y[perm], yhat[perm], "RUL")
        assert (a.mae, a.medae) == pytest.approx((b.mae, b.medae))
        assert a.rmse == pytest.approx(b.rmse)

    def test_scaling(self):
        rng = np.random.default_rng(2)
        y, yhat = rng.uniform(1, 5, 7), rng.uniform(1, 5, 7)
        a, b = compute_metrics(y, yhat, "SOH"), compute_metrics(3.0 * y, 3.0 * yhat, "SOH")
        assert b.mae == pytest.approx(3.0 * a.mae)
        assert b.rmse == pytest.approx(3.0 * a.rmse)
        assert b.mape == pytest.approx(a.mape)

    def test_odd_medae_is_attained(self):
        y = np.array([10.0, 20.0, 30.0])
        yhat = np.array([12.0, 15.0, 30.5])
        r = compute_metrics(y, yhat, "RUL")
        assert r.medae in np.abs(y - yhat)

    def test_zero_reference_lists_indices(self):
        with pytest.raises(DataError, match=r"\[1\]"):
            compute_metrics([1.0, 0.0, 2.0], [1.0, 0.1, 2.0], "SOH")

    def test_zero_reference_allowed_for_rul(self):
        r = compute_metrics([3.0, 0.0], [2.0, 1.0], "RUL")
        assert r.mae == pytest.approx(1.0)

    def test_empty_and_mismatch(self):
        with pytest.raises(DataError):
            compute_metrics([], [], "SOH")
        with pytest.raises(ShapeError):
            compute_metrics([1.0], [1.0, 2.0], "SOH")

    def test_unknown_task(self):
        with pytest.raises(DataError):
            compute_metrics([1.0], [1.0], "SOC")


class TestErrorSeries:

    def test_soh_error(self):
        np.testing.assert_allclose(soh_error_series([2.0, 2.0], [1.9, 2.0]), [5.0, 0.0])

    def test_soh_over_prediction_negative(self):
        assert soh_error_series([1.0], [1.1])[0] < 0

    def test_soh_zero_capacity(self):
        with pytest.raises(DataError):
            soh_error_series([1.0, 0.0], [1.0, 0.0])

    def test_rul_error(self):
        np.testing.assert_allclose(rul_error_series([100, 0], [90, 4]), [10.0, -4.0])


class TestReport:

    def test_csv_layout(self, tmp_path):
        reports = [
            compute_metrics([1.0, 0.9], [0.95, 0.9], "SOH", "b1"),
            compute_metrics([5.0, 0.0], [4.0, 1.0], "RUL", "b1"),
        ]
        write_report(reports, tmp_path / "metrics.csv")
        frame = pd.read_csv(tmp_path / "metrics.csv")
        assert list(frame.columns) == REPORT_COLUMNS
        assert list(frame["task"]) == ["SOH", "RUL"]
        assert frame.loc[1, "mape_or_medae"] == pytest.approx(1.0)
