"""Fixtures partagées pour la suite de tests unitaires."""

import numpy as np
import pytest

from battery.cells import CellDataset, CycleRecord
from battery.interpolate import interpolate_cell
from battery.synth import synth_cells
from ml.model import ModelConfig, init_params


# ── Tenseurs ─────────────────────────────────────────────────────────────────

@pytest.fixture
def rng():
    return np.random.default_rng(0)


# ── Modèle ───────────────────────────────────────────────────────────────────

@pytest.fixture
def tiny_cfg() -> ModelConfig:
    """Réseau minuscule : L=16, F=8, H=8, 2 têtes."""
    return ModelConfig(seq_len=16, channels=8, hidden=8, task_hidden=8, ffn_hidden=8, heads=2)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, seed=0)


# ── Cellules ─────────────────────────────────────────────────────────────────

def make_cell(
    capacities,
    cell_id: str = "c1",
    rated: float = 2.0,
    eol: float = 1.4,
    n_points: int = 8,
) -> CellDataset:
    """Cellule simple : une rampe de tension de n_points par cycle."""
    cycles = [
        CycleRecord(
            cycle_index=i,
            times=np.arange(n_points, dtype=np.float64) * 10.0,
            voltages=np.linspace(3.5, 4.2, n_points) - 0.01 * i,
            capacity=float(cap),
        )
        for i, cap in enumerate(capacities)
    ]
    return CellDataset(cell_id=cell_id, rated_capacity=rated, eol_threshold=eol, cycles=cycles)


@pytest.fixture
def cell_factory():
    return make_cell


@pytest.fixture
def small_cell() -> CellDataset:
    return make_cell([2.0, 1.5, 1.3])


@pytest.fixture
def synth_raw():
    """3 cellules synthétiques brutes (longueurs variables ≤ 16)."""
    return synth_cells(seed=0, n_cells=3, n_cycles=12, seq_len=16)


@pytest.fixture
def synth_aligned(synth_raw):
    """Mêmes cellules, cycles alignés sur 16 points."""
    return [interpolate_cell(c, 16) for c in synth_raw]
