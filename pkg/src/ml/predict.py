"""Prédiction SOH/RUL cycle par cycle sur une cellule de test.

Fonctions exportées :
  predict_cell   : prédictions seules, à partir du cycle d'observation OC
  evaluate_cell  : prédictions + séries d'erreur par cycle + MetricsReports
                   (section RUL absente si la cellule n'atteint pas l'EOL)
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from autodiff.tensor import no_grad
from battery.cells import CellDataset
from battery.labels import derive_labels
from ml.layers import Params
from ml.metrics import MetricsReport, compute_metrics, rul_error_series, soh_error_series
from ml.model import ModelConfig, model_forward
from ml.train import samples_for
from utils.errors import DataError

log = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["cycle", "soh_hat", "rul_hat"]
ERROR_COLUMNS = ["cycle", "capacity_ah", "capacity_hat_ah", "soh_error_pct", "rul", "rul_hat", "rul_error"]


@dataclass
class CellEvaluation:
    cell_id: str
    predictions: pd.DataFrame
    errors: pd.DataFrame
    reports: list[MetricsReport]

    def save(self, out_dir: Path) -> None:
        out_dir = Path(out_dir)
        self.predictions.to_csv(out_dir / f"predictions_{self.cell_id}.csv", index=False, lineterminator="\n")
        self.errors.to_csv(out_dir / f"errors_{self.cell_id}.csv", index=False, lineterminator="\n")


def predict_cell(
    cell: CellDataset, params: Params, cfg: ModelConfig, oc: int = 0, seed: int = 0, batch_size: int = 32
) -> pd.DataFrame:
    """Colonnes cycle, soh_hat, rul_hat (NaN si la cellule n'a pas de RUL)."""
    labeled = derive_labels(cell)
    if oc >= len(cell):
        raise DataError(f"{cell.cell_id} : OC={oc} au-delà du dernier cycle ({len(cell) - 1}), rapport vide")
    samples = samples_for([labeled], cfg, start=oc)

    soh, rul = [], []
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            sl = slice(lo, lo + batch_size)
            pred = model_forward(samples.voltages[sl], params, cfg, seed, samples.factor_rows(sl))
            soh.append(np.atleast_1d(pred.soh_hat.data))
            rul.append(np.atleast_1d(pred.rul_hat))
    rul_hat = np.concatenate(rul) if labeled.has_rul else np.full(len(samples), np.nan)
    return pd.DataFrame(
        {"cycle": samples.cycles, "soh_hat": np.concatenate(soh), "rul_hat": rul_hat},
        columns=PREDICTION_COLUMNS,
    )


def evaluate_cell(
    cell: CellDataset, params: Params, cfg: ModelConfig, oc: int = 0, seed: int = 0
) -> CellEvaluation:
    labeled = derive_labels(cell)
    preds = predict_cell(cell, params, cfg, oc, seed)
    capacity = cell.capacities[oc:]
    capacity_hat = preds["soh_hat"].to_numpy() * cell.rated_capacity

    errors = pd.DataFrame(
        {
            "cycle": preds["cycle"],
            "capacity_ah": capacity,
            "capacity_hat_ah": capacity_hat,
            "soh_error_pct": soh_error_series(capacity, capacity_hat),
        }
    )
    reports = [compute_metrics(labeled.soh[oc:], preds["soh_hat"].to_numpy(), "SOH", cell.cell_id)]
    if labeled.has_rul:
        rul_real = labeled.rul[oc:].astype(np.float64)
        rul_hat = preds["rul_hat"].to_numpy()
        errors["rul"] = rul_real
        errors["rul_hat"] = rul_hat
        errors["rul_error"] = rul_error_series(rul_real, rul_hat)
        reports.append(compute_metrics(rul_real, rul_hat, "RUL", cell.cell_id))
    else:
        log.info("%s : pas d'EOL atteint, évaluation SOH seule", cell.cell_id)
        errors = errors.reindex(columns=ERROR_COLUMNS)

    for r in reports:
        log.info(
            "%s %s : MAE=%.4f RMSE=%.4f %s=%.4f (n=%d)",
            r.cell_id, r.task, r.mae, r.rmse, "MAPE%" if r.task == "SOH" else "MedAE", r.mape_or_medae, r.n,
        )
    return CellEvaluation(cell_id=cell.cell_id, predictions=preds, errors=errors, reports=reports)
