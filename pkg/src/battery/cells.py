"""Cellules au format canonique : un répertoire par cellule.

Disposition sur disque :

    <dir>/<cell_id>/manifest.toml   clé = valeur (cell_id, rated_capacity_ah,
                                    eol_threshold_ah, saturation_voltage_v,
                                    target_len)
    <dir>/<cell_id>/cycles.csv      en-tête "cycle,t,v"  (s, V)
    <dir>/<cell_id>/labels.csv      en-tête "cycle,capacity_ah"

Lecture/écriture via pandas ; les flottants sont écrits avec la
représentation la plus courte qui se relit à l'identique.
"""

import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd

from config.loader import dump_flat, load_flat
from utils.errors import ConfigError, DataError

log = logging.getLogger(__name__)

CYCLES_HEADER = ["cycle", "t", "v"]
LABELS_HEADER = ["cycle", "capacity_ah"]
MANIFEST_NAME = "manifest.toml"
CYCLES_NAME = "cycles.csv"
LABELS_NAME = "labels.csv"


@dataclass(eq=False)
class CycleRecord:
    """Un cycle charge/décharge : trace tension-temps + capacité mesurée."""

    cycle_index: int
    times: np.ndarray
    voltages: np.ndarray
    capacity: float

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        self.voltages = np.asarray(self.voltages, dtype=np.float64)
        if self.cycle_index < 0:
            raise DataError(f"cycle {self.cycle_index} : indice négatif")
        if self.times.shape != self.voltages.shape or self.times.ndim != 1:
            raise DataError(
                f"cycle {self.cycle_index} : {self.times.shape} temps vs {self.voltages.shape} tensions"
            )
        if len(self.times) < 2:
            raise DataError(f"cycle {self.cycle_index} : au moins 2 échantillons requis")
        bad = np.flatnonzero(np.diff(self.times) <= 0)
        if bad.size:
            raise DataError(
                f"cycle {self.cycle_index} : temps non strictement croissant à l'échantillon {bad[0] + 1}"
            )
        if not self.capacity > 0:
            raise DataError(f"cycle {self.cycle_index} : capacité {self.capacity} ≤ 0")

    def __len__(self) -> int:
        return len(self.voltages)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CycleRecord):
            return NotImplemented
        return (
            self.cycle_index == other.cycle_index
            and self.capacity == other.capacity
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.voltages, other.voltages)
        )


@dataclass(frozen=True)
class CellManifest:
    cell_id: str
    rated_capacity_ah: float
    eol_threshold_ah: float
    saturation_voltage_v: float = 4.2
    target_len: int | None = None

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], source: str = "manifest") -> "CellManifest":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{source} : clés inconnues {unknown}")
        missing = [k for k in ("cell_id", "rated_capacity_ah", "eol_threshold_ah") if k not in values]
        if missing:
            raise ConfigError(f"{source} : clés manquantes {missing}")
        return cls(
            cell_id=str(values["cell_id"]),
            rated_capacity_ah=float(values["rated_capacity_ah"]),
            eol_threshold_ah=float(values["eol_threshold_ah"]),
            saturation_voltage_v=float(values.get("saturation_voltage_v", 4.2)),
            target_len=int(values["target_len"]) if "target_len" in values else None,
        )

    @classmethod
    def load(cls, path: Path) -> "CellManifest":
        return cls.from_mapping(load_flat(path), source=str(path))

    def save(self, path: Path) -> None:
        values = {k: v for k, v in asdict(self).items() if v is not None}
        dump_flat(path, values)


@dataclass(eq=False)
class CellDataset:
    """Une cellule : suite ordonnée de cycles + seuils nominaux."""

    cell_id: str
    rated_capacity: float
    eol_threshold: float
    cycles: list[CycleRecord]
    saturation_voltage: float = 4.2
    target_len: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.eol_threshold < self.rated_capacity:
            raise DataError(
                f"cellule {self.cell_id} : seuil EOL {self.eol_threshold} hors de ]0, {self.rated_capacity}["
            )
        idx = [c.cycle_index for c in self.cycles]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DataError(f"cellule {self.cell_id} : indices de cycle non strictement croissants")

    # ── Accès ────────────────────────────────────────────────────────────────

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.cycles], dtype=np.float64)

    @property
    def cycle_indices(self) -> np.ndarray:
        return np.array([c.cycle_index for c in self.cycles], dtype=np.int64)

    @property
    def manifest(self) -> CellManifest:
        return CellManifest(
            cell_id=self.cell_id,
            rated_capacity_ah=self.rated_capacity,
            eol_threshold_ah=self.eol_threshold,
            saturation_voltage_v=self.saturation_voltage,
            target_len=self.target_len,
        )

    def with_cycles(self, cycles: list[CycleRecord], target_len: int | None = None) -> "CellDataset":
        return replace(self, cycles=cycles, target_len=target_len or self.target_len)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellDataset):
            return NotImplemented
        return self.manifest == other.manifest and self.cycles == other.cycles

    @classmethod
    def from_manifest(cls, manifest: CellManifest, cycles: list[CycleRecord]) -> "CellDataset":
        return cls(
            cell_id=manifest.cell_id,
            rated_capacity=manifest.rated_capacity_ah,
            eol_threshold=manifest.eol_threshold_ah,
            cycles=cycles,
            saturation_voltage=manifest.saturation_voltage_v,
            target_len=manifest.target_len,
        )


# ── Lecture ───────────────────────────────────────────────────────────────────


def _read_csv(path: Path, header: list[str]) -> pd.DataFrame:
    """Lecture stricte : en-tête exact, colonnes numériques, aucune case vide."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path} : CSV illisible ({exc})") from exc
    if list(df.columns) != header:
        raise DataError(f"{path} : en-tête {list(df.columns)} ≠ {header}")
    for col in header:
        if not pd.api.types.is_numeric_dtype(df[col]):
            try:
                df[col] = pd.to_numeric(df[col], errors="raise")
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path} : colonne '{col}' non numérique ({exc})") from exc
    empty = df.isna().any(axis=1).to_numpy()
    if empty.any():
        raise DataError(f"{path} : valeur manquante ligne {int(np.flatnonzero(empty)[0]) + 2}")
    return df


def load_cell(
    cycles_path: Path,
    labels_path: Path,
    manifest: "CellManifest | Path | Mapping[str, Any]",
) -> CellDataset:
    """Lit une cellule ; toute incohérence cycle/label rejette la cellule entière."""
    cycles_path, labels_path = Path(cycles_path), Path(labels_path)
    if isinstance(manifest, (str, Path)):
        manifest = CellManifest.load(Path(manifest))
    elif not isinstance(manifest, CellManifest):
        manifest = CellManifest.from_mapping(manifest)

    samples = _read_csv(cycles_path, CYCLES_HEADER)
    labels = _read_csv(labels_path, LABELS_HEADER)

    # Ligne du fichier = index + 2 (en-tête compris)
    for cycle_id, grp in samples.groupby("cycle", sort=False):
        dt = np.diff(grp["t"].to_numpy(dtype=np.float64))
        bad = np.flatnonzero(dt <= 0)
        if bad.size:
            row = int(grp.index[bad[0] + 1]) + 2
            raise DataError(
                f"{cycles_path} : temps non croissant dans le cycle {cycle_id} (ligne {row})"
            )

    capacity = dict(zip(labels["cycle"].astype(int), labels["capacity_ah"].astype(float)))
    if len(capacity) != len(labels):
        raise DataError(f"{labels_path} : cycle étiqueté plusieurs fois")
    grouped = {int(k): g for k, g in samples.groupby("cycle", sort=True)}

    for cycle_id in sorted(capacity):
        if cycle_id not in grouped:
            raise DataError(f"cellule {manifest.cell_id} : cycle {cycle_id} étiqueté mais absent de {cycles_path.name}")
    for cycle_id in grouped:
        if cycle_id not in capacity:
            raise DataError(f"cellule {manifest.cell_id} : cycle {cycle_id} sans étiquette de capacité")

    cycles = [
        CycleRecord(
            cycle_index=cycle_id,
            times=grp["t"].to_numpy(dtype=np.float64),
            voltages=grp["v"].to_numpy(dtype=np.float64),
            capacity=capacity[cycle_id],
        )
        for cycle_id, grp in sorted(grouped.items())
    ]
    cell = CellDataset.from_manifest(manifest, cycles)
    log.debug("load_cell : %s : %d cycles", cell.cell_id, len(cell))
    return cell


def load_cell_dir(cell_dir: Path) -> CellDataset:
    cell_dir = Path(cell_dir)
    return load_cell(cell_dir / CYCLES_NAME, cell_dir / LABELS_NAME, cell_dir / MANIFEST_NAME)


def load_cells_dir(root: Path) -> list[CellDataset]:
    """Toutes les cellules d'un répertoire, triées par cell_id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"Répertoire de cellules introuvable : {root}")
    cell_dirs = sorted(p.parent for p in root.glob(f"*/{MANIFEST_NAME}"))
    if not cell_dirs:
        raise DataError(f"{root} : aucune cellule (aucun {MANIFEST_NAME})")
    cells = [load_cell_dir(d) for d in cell_dirs]
    log.info("%d cellules chargées depuis %s", len(cells), root)
    return sorted(cells, key=lambda c: c.cell_id)


# ── Écriture ──────────────────────────────────────────────────────────────────


def save_cell(cell: CellDataset, root: Path) -> Path:
    """Écrit <root>/<cell_id>/ ; retourne le répertoire de la cellule."""
    cell_dir = Path(root) / cell.cell_id
    cell_dir.mkdir(parents=True, exist_ok=True)

    samples = pd.DataFrame(
        {
            "cycle": np.concatenate([np.full(len(c), c.cycle_index, dtype=np.int64) for c in cell.cycles]),
            "t": np.concatenate([c.times for c in cell.cycles]),
            "v": np.concatenate([c.voltages for c in cell.cycles]),
        }
    ) if cell.cycles else pd.DataFrame(columns=CYCLES_HEADER)
    labels = pd.DataFrame(
        {"cycle": cell.cycle_indices, "capacity_ah": cell.capacities}, columns=LABELS_HEADER
    )
    samples.to_csv(cell_dir / CYCLES_NAME, index=False, lineterminator="\n")
    labels.to_csv(cell_dir / LABELS_NAME, index=False, lineterminator="\n")
    cell.manifest.save(cell_dir / MANIFEST_NAME)
    return cell_dir

