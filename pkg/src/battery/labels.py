"""Étiquettes SOH / RUL par cycle.

SOH_i = capacité_i / capacité nominale.
n_eol = première position (0-based, dans l'ordre des cycles) où la capacité
passe sous le seuil EOL ; RUL_i = n_eol − i, puis 0 après l'EOL.
Une cellule qui ne franchit jamais le seuil n'a pas de RUL : SOH seul.
"""

import logging
from dataclasses import dataclass

import numpy as np

from battery.cells import CellDataset

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LabeledCell:
    cell: CellDataset
    soh: np.ndarray
    rul: np.ndarray | None
    n_eol: int | None

    @property
    def has_rul(self) -> bool:
        return self.rul is not None

    @property
    def cell_id(self) -> str:
        return self.cell.cell_id

    def __len__(self) -> int:
        return len(self.soh)


def derive_labels(cell: CellDataset) -> LabeledCell:
    caps = cell.capacities
    soh = caps / cell.rated_capacity
    below = np.flatnonzero(caps < cell.eol_threshold)
    if below.size == 0:
        log.info(
            "%s : capacité min %.4f Ah ≥ EOL %.4f Ah, prédiction SOH seule",
            cell.cell_id, float(caps.min()) if caps.size else float("nan"), cell.eol_threshold,
        )
        return LabeledCell(cell=cell, soh=soh, rul=None, n_eol=None)

    n_eol = int(below[0])
    rul = np.maximum(n_eol - np.arange(len(caps), dtype=np.int64), 0)
    log.debug("%s : EOL atteint à la position %d", cell.cell_id, n_eol)
    return LabeledCell(cell=cell, soh=soh, rul=rul, n_eol=n_eol)
