"""Facteurs de caractéristiques en charge partielle + corrélation de Pearson.

Quatre facteurs par cycle, calculés sur la trace tension-temps :
  1. onset_to_peak_s  temps entre le premier échantillon CC et le maximum de
                      tension de la phase CC
  2. plateau_s        durée totale passée entre 3.9 V et 4.1 V
  3. slope_v_per_s    pente moindres carrés de V(t) entre 3.6 V et 4.0 V,
                      restreinte à la phase CC
  4. cc_integral_vs   intégrale trapézoïdale de V dt sur la phase CC

La phase CC est le préfixe qui précède le premier échantillon ≥ tension de
saturation (valeur du manifeste).
"""

import logging
from dataclasses import astuple, dataclass

import numpy as np
import pandas as pd

from battery.cells import CellDataset, CycleRecord
from utils.errors import DataError

log = logging.getLogger(__name__)

FEATURE_NAMES = ("onset_to_peak_s", "plateau_s", "slope_v_per_s", "cc_integral_vs")

PLATEAU_BAND = (3.9, 4.1)
SLOPE_BAND = (3.6, 4.0)


@dataclass(frozen=True)
class FeatureFactors:
    onset_to_peak_s: float
    plateau_s: float
    slope_v_per_s: float
    cc_integral_vs: float
    slope_degenerate: bool = False

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self)[:4], dtype=np.float64)


def cc_phase_end(voltages: np.ndarray, saturation_voltage: float) -> int:
    """Longueur du préfixe CC (nombre d'échantillons avant saturation)."""
    hits = np.flatnonzero(voltages >= saturation_voltage)
    return int(hits[0]) if hits.size else len(voltages)


def extract_feature_factors(cycle: CycleRecord, saturation_voltage: float = 4.2) -> FeatureFactors:
    t, v = cycle.times, cycle.voltages
    end = cc_phase_end(v, saturation_voltage)
    t_cc, v_cc = t[:end], v[:end]

    onset = float(t_cc[np.argmax(v_cc)] - t_cc[0]) if end else 0.0

    lo, hi = PLATEAU_BAND
    inside = (v >= lo) & (v <= hi)
    both = inside[:-1] & inside[1:]
    plateau = float(np.sum(np.diff(t)[both]))

    lo, hi = SLOPE_BAND
    window = (v_cc >= lo) & (v_cc <= hi)
    degenerate = int(window.sum()) < 2
    if degenerate:
        log.warning(
            "cycle %d : fenêtre %.1f–%.1f V avec %d échantillon(s), pente mise à 0",
            cycle.cycle_index, lo, hi, int(window.sum()),
        )
        slope = 0.0
    else:
        slope = float(np.polyfit(t_cc[window], v_cc[window], 1)[0])

    integral = float(np.trapezoid(v_cc, t_cc)) if end >= 2 else 0.0
    return FeatureFactors(onset, plateau, slope, integral, slope_degenerate=degenerate)


def feature_table(cell: CellDataset) -> pd.DataFrame:
    """Une ligne par cycle : cycle, 4 facteurs, drapeau pente dégénérée, capacité."""
    rows = []
    for cycle in cell.cycles:
        ff = extract_feature_factors(cycle, cell.saturation_voltage)
        rows.append(
            {
                "cycle": cycle.cycle_index,
                **dict(zip(FEATURE_NAMES, ff.as_array().tolist())),
                "slope_degenerate": ff.slope_degenerate,
                "capacity_ah": cycle.capacity,
            }
        )
    return pd.DataFrame(rows, columns=["cycle", *FEATURE_NAMES, "slope_degenerate", "capacity_ah"])


# ── Corrélation ───────────────────────────────────────────────────────────────


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson : séries de formes différentes {x.shape} / {y.shape}")
    if len(x) < 2:
        raise DataError("pearson : au moins 2 points requis")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DataError("pearson : variance nulle, corrélation indéfinie")
    r = float(np.corrcoef(x, y)[0, 1])
    return min(1.0, max(-1.0, r))


def screen_features(
    table: pd.DataFrame, capacities, threshold: float = 0.8
) -> dict[str, float]:
    """Facteurs retenus (|r| ≥ threshold) avec leur r ; les facteurs constants sont écartés."""
    kept: dict[str, float] = {}
    for name in FEATURE_NAMES:
        try:
            r = pearson(table[name].to_numpy(), capacities)
        except DataError as exc:
            log.warning("screen_features : %s écarté (%s)", name, exc)
            continue
        if abs(r) >= threshold:
            kept[name] = r
    log.info("screen_features : %d/%d facteurs retenus (|r| ≥ %.2f)", len(kept), len(FEATURE_NAMES), threshold)
    return kept
