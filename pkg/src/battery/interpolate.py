"""Alignement des cycles sur une longueur commune par insertion de points.

Règles :
  1. nombre d'insertions = target_len − len(v)
  2. positions réparties uniformément : p_j = round(j·len / (count + 1)),
     j = 1..count, arrondi demi-supérieur, borné à [1, len − 1] ;
     le point j est inséré entre v[p_j − 1] et v[p_j]
  3. valeur insérée = moyenne des deux voisins d'origine

Plusieurs insertions dans le même intervalle reçoivent toutes la même
moyenne. Aucun point d'origine n'est modifié ni supprimé.
"""

import logging

import numpy as np

from battery.cells import CellDataset, CycleRecord
from utils.errors import DataError

log = logging.getLogger(__name__)


def insertion_positions(length: int, count: int) -> np.ndarray:
    """Indices d'insertion (au sens de ``np.insert``), non décroissants."""
    j = np.arange(1, count + 1, dtype=np.int64)
    # round(j·len/(count+1)) demi-supérieur en arithmétique entière
    pos = (2 * j * length + (count + 1)) // (2 * (count + 1))
    return np.clip(pos, 1, length - 1)


def interpolate_to_length(v, target_len: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    if n < 2:
        raise DataError(f"interpolation : au moins 2 points requis, reçu {n}")
    if n > target_len:
        raise DataError(f"interpolation : longueur {n} > cible {target_len} (insertion uniquement)")
    count = target_len - n
    if count == 0:
        return v.copy()
    pos = insertion_positions(n, count)
    return np.insert(v, pos, 0.5 * (v[pos - 1] + v[pos]))


def _interpolate_times(t: np.ndarray, target_len: int) -> np.ndarray:
    """Temps associés : répartis linéairement dans chaque intervalle, pour rester strictement croissants."""
    n = len(t)
    count = target_len - n
    if count == 0:
        return t.copy()
    pos = insertion_positions(n, count)
    uniq, first, counts = np.unique(pos, return_index=True, return_counts=True)
    slot = np.searchsorted(uniq, pos)
    rank = np.arange(count) - first[slot]
    frac = (rank + 1) / (counts[slot] + 1)
    values = t[pos - 1] + frac * (t[pos] - t[pos - 1])
    return np.insert(t, pos, values)


def interpolate_cycle(cycle: CycleRecord, target_len: int) -> CycleRecord:
    if len(cycle) > target_len:
        raise DataError(
            f"cycle {cycle.cycle_index} : {len(cycle)} points > cible {target_len}"
        )
    return CycleRecord(
        cycle_index=cycle.cycle_index,
        times=_interpolate_times(cycle.times, target_len),
        voltages=interpolate_to_length(cycle.voltages, target_len),
        capacity=cycle.capacity,
    )


def interpolate_cell(cell: CellDataset, target_len: int) -> CellDataset:
    cycles = [interpolate_cycle(c, target_len) for c in cell.cycles]
    inserted = sum(target_len - len(c) for c in cell.cycles)
    log.info("%s : %d cycles alignés sur %d points (%d insertions)", cell.cell_id, len(cycles), target_len, inserted)
    return cell.with_cycles(cycles, target_len=target_len)
