"""Tests unitaires : prédiction et évaluation par cellule (ml/predict.py)."""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from battery.features import extract_feature_factors
from ml.model import init_params, model_forward
from ml.predict import ERROR_COLUMNS, PREDICTION_COLUMNS, evaluate_cell, predict_cell
from utils.errors import DataError


@pytest.fixture
def cfg8(tiny_cfg):
    """Config compatible avec les cellules de cell_factory (8 points par cycle)."""
    return replace(tiny_cfg, seq_len=8, rul_scale=4.0)


@pytest.fixture
def params8(cfg8):
    return init_params(cfg8, seed=1)


class TestPredictCell:

    def test_columns_and_rows(self, cell_factory, cfg8, params8):
        cell = cell_factory([2.0, 1.8, 1.6, 1.3])
        preds = predict_cell(cell, params8, cfg8)
        assert list(preds.columns) == PREDICTION_COLUMNS
        assert list(preds["cycle"]) == [0, 1, 2, 3]
        assert np.all(np.isfinite(preds[["soh_hat", "rul_hat"]].to_numpy()))

    def test_oc_skips_early_cycles(self, cell_factory, cfg8, params8):
        cell = cell_factory([2.0, 1.8, 1.6, 1.3])
        preds = predict_cell(cell, params8, cfg8, oc=2)
        assert list(preds["cycle"]) == [2, 3]

    def test_oc_past_end(self, cell_factory, cfg8, params8):
        with pytest.raises(DataError, match="OC=4"):
            predict_cell(cell_factory([2.0, 1.8, 1.6, 1.3]), params8, cfg8, oc=4)

    def test_batch_size_does_not_matter(self, cell_factory, cfg8, params8):
        cell = cell_factory([2.0, 1.9, 1.8, 1.7, 1.6, 1.3])
        a = predict_cell(cell, params8, cfg8, batch_size=2)
        b = predict_cell(cell, params8, cfg8, batch_size=32)
        pd.testing.assert_frame_equal(a, b, rtol=1e-10)

    def test_soh_only_cell_has_nan_rul(self, cell_factory, cfg8, params8):
        preds = predict_cell(cell_factory([2.0, 1.9, 1.8]), params8, cfg8)
        assert preds["rul_hat"].isna().all()

    def test_factor_model_reads_cycle_factors(self, cell_factory, cfg8):
        cfg = replace(
            cfg8, use_factors=True, factors=("cc_integral_vs",), factor_mean=(250.0,), factor_scale=(20.0,)
        )
        params = init_params(cfg, seed=1)
        cell = cell_factory([2.0, 1.8, 1.6, 1.3])
        preds = predict_cell(cell, params, cfg, oc=1)
        assert list(preds["cycle"]) == [1, 2, 3]
        for pos, cycle in enumerate(cell.cycles[1:]):
            ff = extract_feature_factors(cycle, cell.saturation_voltage)
            single = model_forward(cycle.voltages, params, cfg, factors=[ff.cc_integral_vs])
            assert preds["soh_hat"].iloc[pos] == pytest.approx(single.soh_hat.item(), rel=1e-10)


class TestEvaluateCell:

    def test_reports_both_tasks(self, cell_factory, cfg8, params8):
        ev = evaluate_cell(cell_factory([2.0, 1.8, 1.6, 1.3]), params8, cfg8, oc=1)
        assert [r.task for r in ev.reports] == ["SOH", "RUL"]
        assert all(r.n == 3 for r in ev.reports)
        assert list(ev.errors.columns) == ERROR_COLUMNS
        np.testing.assert_allclose(ev.errors["capacity_ah"], [1.8, 1.6, 1.3])
        np.testing.assert_array_equal(ev.errors["rul"], [2.0, 1.0, 0.0])

    def test_error_series_consistent(self, cell_factory, cfg8, params8):
        ev = evaluate_cell(cell_factory([2.0, 1.8, 1.6, 1.3]), params8, cfg8)
        e = ev.errors
        np.testing.assert_allclose(e["capacity_hat_ah"], ev.predictions["soh_hat"] * 2.0)
        np.testing.assert_allclose(
            e["soh_error_pct"], (e["capacity_ah"] - e["capacity_hat_ah"]) / e["capacity_ah"] * 100.0
        )
        np.testing.assert_allclose(e["rul_error"], e["rul"] - e["rul_hat"])

    def test_soh_only_cell(self, cell_factory, cfg8, params8, caplog):
        with caplog.at_level("INFO", logger="ml.predict"):
            ev = evaluate_cell(cell_factory([2.0, 1.9, 1.8]), params8, cfg8)
        assert [r.task for r in ev.reports] == ["SOH"]
        assert list(ev.errors.columns) == ERROR_COLUMNS
        assert ev.errors["rul_error"].isna().all()
        assert "SOH seule" in caplog.text

    def test_save_writes_both_csv(self, tmp_path, cell_factory, cfg8, params8):
        ev = evaluate_cell(cell_factory([2.0, 1.8, 1.3], cell_id="b7"), params8, cfg8)
        ev.save(tmp_path)
        preds = pd.read_csv(tmp_path / "predictions_b7.csv")
        errors = pd.read_csv(tmp_path / "errors_b7.csv")
        assert list(preds.columns) == PREDICTION_COLUMNS
        assert list(errors.columns) == ERROR_COLUMNS
        assert len(preds) == len(errors) == 3
