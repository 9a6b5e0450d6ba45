"""Métriques d'évaluation SOH/RUL et séries d'erreur par cycle.

SOH : MAE, RMSE, MAPE (en %, ratio brut journalisé en DEBUG).
RUL : MAE, RMSE, MedAE (médiane ; moyenne des deux valeurs centrales si n pair).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import (
    mean_absolute_error,
    mean_absolute_percentage_error,
    median_absolute_error,
    root_mean_squared_error,
)

from utils.errors import DataError, ShapeError

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["cell", "task", "mae", "rmse", "mape_or_medae", "n"]
TASKS = ("SOH", "RUL")


@dataclass(frozen=True)
class MetricsReport:
    cell_id: str
    task: str
    mae: float
    rmse: float
    mape: float | None
    medae: float | None
    n: int

    @property
    def mape_or_medae(self) -> float:
        return self.mape if self.task == "SOH" else self.medae  # type: ignore[return-value]

    def as_row(self) -> dict:
        return {
            "cell": self.cell_id,
            "task": self.task,
            "mae": self.mae,
            "rmse": self.rmse,
            "mape_or_medae": self.mape_or_medae,
            "n": self.n,
        }


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise ShapeError(f"métriques : {y.shape} réels vs {yhat.shape} prédits")
    if y.size == 0:
        raise DataError("métriques : séries vides")
    return y, yhat


def compute_metrics(y, yhat, task: str = "SOH", cell_id: str = "") -> MetricsReport:
    if task not in TASKS:
        raise DataError(f"tâche inconnue '{task}' (choix : {TASKS})")
    y, yhat = _pair(y, yhat)
    mae = float(mean_absolute_error(y, yhat))
    rmse = float(root_mean_squared_error(y, yhat))
    mape = medae = None
    if task == "SOH":
        zeros = np.flatnonzero(y == 0)
        if zeros.size:
            raise DataError(f"MAPE indéfini : valeurs réelles nulles aux indices {zeros.tolist()}")
        ratio = float(mean_absolute_percentage_error(y, yhat))
        log.debug("%s SOH : MAPE brut = %.6g", cell_id, ratio)
        mape = 100.0 * ratio
    else:
        medae = float(median_absolute_error(y, yhat))
    return MetricsReport(cell_id=cell_id, task=task, mae=mae, rmse=rmse, mape=mape, medae=medae, n=int(y.size))


def soh_error_series(c_real, c_pre) -> np.ndarray:
    """((C_réel − C_prédit) / C_réel) × 100 par cycle ; surestimation → erreur négative."""
    c_real, c_pre = _pair(c_real, c_pre)
    zeros = np.flatnonzero(c_real == 0)
    if zeros.size:
        raise DataError(f"erreur SOH : capacité réelle nulle aux indices {zeros.tolist()}")
    return (c_real - c_pre) / c_real * 100.0


def rul_error_series(rul_real, rul_pre) -> np.ndarray:
    """RUL_réel − RUL_prédit, en cycles."""
    rul_real, rul_pre = _pair(rul_real, rul_pre)
    return rul_real - rul_pre


def write_report(reports: Sequence[MetricsReport], path: Path) -> None:
    pd.DataFrame([r.as_row() for r in reports], columns=REPORT_COLUMNS).to_csv(
        path, index=False, lineterminator="\n"
    )
