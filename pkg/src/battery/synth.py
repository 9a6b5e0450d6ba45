"""Corpus synthétiques de dégradation pour les tests et les essais de bureau.

Capacité : rated·(a·e^{b·i} + c·e^{d·i}), b, d < 0, paramètres propres à
chaque cellule. La courbe est calée pour finir entre 2 et 10 points sous
le ratio EOL/nominal, donc chaque cellule franchit son seuil EOL. Un bruit
gaussien additif (écart-type commun, fraction du décrément moyen) perturbe
chaque décrément cycle à cycle ; les décréments sont planchés à 5 % de leur
valeur nominale puis renormalisés pour conserver la perte totale : sans
régénération la capacité décroît strictement. Une régénération ajoute un
saut positif ponctuel.

Trace tension : rampe CC concave depuis V0 jusqu'à la saturation puis
plateau CV. Durée totale, durée CC et V0 dépendent du SOH, donc la
séquence de tension porte un signal SOH récupérable. Pas de temps fixe,
longueurs variables ≤ seq_len.

Chaque cellule tire son générateur d'un SeedSequence enfant : le corpus
ne dépend pas de l'ordre de génération.
"""

import logging

import numpy as np

from battery.cells import CellDataset, CycleRecord
from utils.errors import UsageError

log = logging.getLogger(__name__)

DT_S = 10.0


def _fade_curve(rng: np.random.Generator, n_cycles: int, end_fraction: float) -> np.ndarray:
    """Fraction de capacité nominale par cycle, strictement décroissante."""
    start = rng.uniform(0.98, 1.02)
    c = rng.uniform(0.01, 0.05)
    a = start - c
    span = max(n_cycles - 1, 1)
    d = -rng.uniform(5.0, 15.0) / span
    # b calé pour que la courbe atteigne end_fraction au dernier cycle
    b = np.log((end_fraction - c * np.exp(d * span)) / a) / span
    i = np.arange(n_cycles, dtype=np.float64)
    return a * np.exp(b * i) + c * np.exp(d * i)


def noisy_decrements(rng: np.random.Generator, frac: np.ndarray, noise: float = 0.3) -> np.ndarray:
    """Même premier et dernier point que ``frac``, décréments bruités strictement positifs."""
    if len(frac) < 2:
        return frac.copy()
    base = -np.diff(frac)
    noisy = base + rng.normal(0.0, noise * base.mean(), size=base.shape)
    noisy = np.maximum(noisy, 0.05 * base)
    noisy *= base.sum() / noisy.sum()
    return np.concatenate([[frac[0]], frac[0] - np.cumsum(noisy)])


def _voltage_trace(
    rng: np.random.Generator, soh: float, seq_len: int, saturation: float
) -> tuple[np.ndarray, np.ndarray]:
    s = min(max(soh, 0.0), 1.0)
    n = int(np.clip(round(seq_len * (0.5 + 0.5 * s)), 2, seq_len))
    n_cc = int(np.clip(round(0.7 * n), 1, n - 1))
    v0 = saturation - 0.9 + 0.4 * (1.0 - s)

    tau = np.arange(n_cc) / n_cc
    ramp = v0 + (saturation - v0) * (1.0 - np.exp(-3.0 * tau)) / (1.0 - np.exp(-3.0))
    ramp = ramp + rng.normal(0.0, 1e-3, size=n_cc)
    ramp = np.minimum(ramp, saturation - 1e-4)
    volts = np.concatenate([ramp, np.full(n - n_cc, saturation)])
    times = DT_S * np.arange(n, dtype=np.float64)
    return times, volts


def synth_cell(
    seq: np.random.SeedSequence,
    cell_id: str,
    n_cycles: int,
    seq_len: int,
    regen_rate: float = 0.0,
    rated_capacity: float = 2.0,
    eol_threshold: float = 1.4,
    saturation_voltage: float = 4.2,
) -> CellDataset:
    rng = np.random.default_rng(seq)
    end_fraction = eol_threshold / rated_capacity - rng.uniform(0.02, 0.10)
    frac = noisy_decrements(rng, _fade_curve(rng, n_cycles, end_fraction))

    regen = rng.random(n_cycles) < regen_rate
    regen[0] = False
    frac = frac + np.where(regen, rng.uniform(0.005, 0.015, size=n_cycles), 0.0)
    capacities = rated_capacity * frac

    cycles = []
    for i, cap in enumerate(capacities):
        times, volts = _voltage_trace(rng, cap / rated_capacity, seq_len, saturation_voltage)
        cycles.append(CycleRecord(cycle_index=i, times=times, voltages=volts, capacity=float(cap)))
    log.debug("%s : %d cycles, %d régénérations", cell_id, n_cycles, int(regen.sum()))
    return CellDataset(
        cell_id=cell_id,
        rated_capacity=rated_capacity,
        eol_threshold=eol_threshold,
        cycles=cycles,
        saturation_voltage=saturation_voltage,
        target_len=seq_len,
    )


def synth_cells(
    seed: int,
    n_cells: int = 4,
    n_cycles: int = 60,
    seq_len: int = 200,
    regen_rate: float = 0.0,
    rated_capacity: float = 2.0,
    eol_threshold: float = 1.4,
    saturation_voltage: float = 4.2,
) -> list[CellDataset]:
    if n_cells < 1 or n_cycles < 1 or seq_len < 2:
        raise UsageError(f"synth_cells : n_cells={n_cells}, n_cycles={n_cycles}, seq_len={seq_len} invalides")
    children = np.random.SeedSequence(seed).spawn(n_cells)
    cells = [
        synth_cell(
            seq, f"cell{k + 1:02d}", n_cycles, seq_len, regen_rate,
            rated_capacity, eol_threshold, saturation_voltage,
        )
        for k, seq in enumerate(children)
    ]
    log.info("synth_cells : %d cellules × %d cycles (seed=%d)", n_cells, n_cycles, seed)
    return cells
