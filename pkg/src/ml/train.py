"""Boucle d'entraînement : Adam, perte jointe MSE, warmup linéaire puis décroissance.

Déroulé de train_run :
  1. Étiquettes par cellule (SOH, RUL), rul_scale = max n_eol des cellules
     d'entraînement, scaler de tension fitté sur leurs tensions.
  2. Échantillons : une séquence de tension par cycle → (SOH, RUL/rul_scale),
     RUL à NaN pour les cellules qui n'atteignent pas l'EOL. Avec
     use_factors, les facteurs de charge (donnés ou retenus par Pearson sur
     les cellules d'entraînement) sont extraits par cycle et standardisés.
  3. Par epoch : permutation des échantillons (graine du run), batchs de
     batch_size (le dernier batch partiel est gardé), lr = lr_at_epoch(e),
     forward → joint_loss → backward → écrêtage global → adam_step.
  4. Checkpoint « best » (plus faible perte sur les échantillons d'entraînement,
     recalculée avec les paramètres de fin d'epoch) et « final »,
     TrainLog CSV, model.cfg et run.cfg.

La graine d'échantillonnage des clés de l'attention creuse est dérivée de
(seed, epoch, batch) : deux runs de même graine sont identiques au bit.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.model_selection import LeaveOneGroupOut

from autodiff.checkpoint import save_params
from autodiff.optim import AdamState, adam_step, clip_grad_norm, collect_grads, zero_grad
from autodiff.tensor import Tensor, backward, no_grad
from battery.cells import CellDataset
from battery.labels import LabeledCell, derive_labels
from config.loader import dump_flat, load_config, load_flat
from ml.layers import Params
from battery.features import FEATURE_NAMES, extract_feature_factors, feature_table, screen_features
from ml.model import (
    ModelConfig,
    fit_factor_scaler,
    fit_voltage_scaler,
    init_params,
    joint_loss,
    model_forward,
)
from utils.errors import ConfigError, DataError, NumericalError, ShapeError, UsageError

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "lr", "loss", "soh_loss", "rul_loss", "eval_loss", "seconds"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    base_lr: float = 1e-4
    warmup_epochs: int = 7
    decay: float = 0.75
    grad_clip_norm: float = 1.0
    seed: int = 0
    oc: int = 0

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError(f"TrainConfig : epochs={self.epochs}, batch_size={self.batch_size} doivent être > 0")
        if not self.base_lr > 0 or not self.decay > 0:
            raise ConfigError(f"TrainConfig : base_lr={self.base_lr}, decay={self.decay} doivent être > 0")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"TrainConfig : warmup_epochs={self.warmup_epochs} hors de [0, {self.epochs}[")
        if self.oc < 0:
            raise ConfigError(f"TrainConfig : oc={self.oc} doit être ≥ 0")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: "TrainConfig | None" = None) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"TrainConfig : clés inconnues {unknown}")
        base = base or cls()
        return replace(base, **{k: type(getattr(base, k))(v) for k, v in values.items()})

    @classmethod
    def defaults(cls) -> "TrainConfig":
        return cls.from_mapping(load_config("train").get("train", {}))

    @classmethod
    def load(cls, path: Path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_mapping(load_flat(path), base)

    def save(self, path: Path) -> None:
        dump_flat(path, asdict(self), header="TrainConfig (cellprog)")


# ── Planning du taux d'apprentissage ─────────────────────────────────────────


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """base/8 à l'epoch 0, rampe linéaire jusqu'à base à warmup_epochs, puis ×decay par epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise UsageError(f"lr_at_epoch : epoch {epoch} hors de [0, {cfg.epochs}[")
    if epoch >= cfg.warmup_epochs:
        return cfg.base_lr * cfg.decay ** (epoch - cfg.warmup_epochs)
    start = cfg.base_lr / 8.0
    return start + (cfg.base_lr - start) * epoch / cfg.warmup_epochs


# ── Partition train / test ───────────────────────────────────────────────────


@dataclass
class Split:
    train: list[CellDataset]
    test: list[CellDataset]
    oc: int = 0

    @property
    def train_ids(self) -> list[str]:
        return [c.cell_id for c in self.train]

    @property
    def test_ids(self) -> list[str]:
        return [c.cell_id for c in self.test]


def partition(cells: Sequence[CellDataset], hold_out: "str | Sequence[str]", oc: int = 0) -> Split:
    """Cellule(s) tenue(s) à l'écart → test ; le reste → entraînement."""
    wanted = [hold_out] if isinstance(hold_out, str) else list(hold_out)
    known = {c.cell_id for c in cells}
    absent = [w for w in wanted if w not in known]
    if absent:
        raise UsageError(f"partition : cellule(s) {absent} absente(s) (disponibles : {sorted(known)})")
    train = [c for c in cells if c.cell_id not in wanted]
    test = [c for c in cells if c.cell_id in wanted]
    if not train:
        raise UsageError("partition : aucune cellule d'entraînement restante")
    return Split(train=train, test=test, oc=oc)


def enumerate_holdouts(cells: Sequence[CellDataset], oc: int = 0) -> Iterator[Split]:
    """Toutes les partitions « une cellule de test », dans l'ordre des cellules."""
    cells = list(cells)
    groups = np.arange(len(cells))
    for train_idx, test_idx in LeaveOneGroupOut().split(groups, groups=groups):
        yield Split(
            train=[cells[i] for i in train_idx],
            test=[cells[i] for i in test_idx],
            oc=oc,
        )


# ── Échantillons ──────────────────────────────────────────────────────────────


@dataclass
class SampleSet:
    """Séquences (N, L) et cibles ; ``rul_norm`` = NaN sans étiquette RUL."""

    voltages: np.ndarray
    soh: np.ndarray
    rul_norm: np.ndarray
    cell_ids: list[str]
    cycles: np.ndarray
    factors: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.soh)

    def factor_rows(self, idx) -> np.ndarray | None:
        return None if self.factors is None else self.factors[idx]


def build_samples(
    labeled: Sequence[LabeledCell],
    seq_len: int,
    rul_scale: float,
    start: int = 0,
    factors: Sequence[str] = (),
) -> SampleSet:
    """Une ligne par cycle à partir de la position ``start`` (OC) de chaque cellule.

    ``factors`` : noms de facteurs de charge partielle à extraire de chaque
    cycle (colonnes de ``SampleSet.factors``, dans cet ordre).
    """
    columns = [FEATURE_NAMES.index(name) for name in factors]
    volts, soh, rul, ids, cycles, rows = [], [], [], [], [], []
    for lab in labeled:
        for pos in range(start, len(lab)):
            cycle = lab.cell.cycles[pos]
            if len(cycle) != seq_len:
                raise ShapeError(
                    f"{lab.cell_id} cycle {cycle.cycle_index} : {len(cycle)} points ≠ seq_len={seq_len} "
                    "(lancer preprocess)"
                )
            volts.append(cycle.voltages)
            soh.append(lab.soh[pos])
            rul.append(lab.rul[pos] / rul_scale if lab.rul is not None else np.nan)
            ids.append(lab.cell_id)
            cycles.append(cycle.cycle_index)
            if columns:
                rows.append(extract_feature_factors(cycle, lab.cell.saturation_voltage).as_array()[columns])
    if not volts:
        raise DataError(f"aucun échantillon à partir de la position {start}")
    return SampleSet(
        voltages=np.stack(volts),
        soh=np.asarray(soh, dtype=np.float64),
        rul_norm=np.asarray(rul, dtype=np.float64),
        cell_ids=ids,
        cycles=np.asarray(cycles, dtype=np.int64),
        factors=np.stack(rows) if columns else None,
    )


def samples_for(labeled: Sequence[LabeledCell], cfg: ModelConfig, start: int = 0) -> SampleSet:
    """build_samples avec la longueur, l'échelle RUL et les facteurs de la config."""
    return build_samples(labeled, cfg.seq_len, cfg.rul_scale, start, cfg.factors if cfg.use_factors else ())


def select_factors(cells: Sequence[CellDataset], threshold: float) -> tuple[str, ...]:
    """Facteurs retenus par Pearson (|r| ≥ threshold) sur les cycles poolés des cellules d'entraînement."""
    table = pd.concat([feature_table(c) for c in cells], ignore_index=True)
    kept = screen_features(table, table["capacity_ah"].to_numpy(), threshold)
    if not kept:
        raise DataError(f"aucun facteur de charge retenu (|r| ≥ {threshold}) sur {[c.cell_id for c in cells]}")
    return tuple(name for name in FEATURE_NAMES if name in kept)


def rul_scale_for(labeled: Sequence[LabeledCell]) -> float:
    eols = [lab.n_eol for lab in labeled if lab.n_eol is not None]
    return float(max(max(eols), 1)) if eols else 1.0


# ── Journal ───────────────────────────────────────────────────────────────────


@dataclass
class EpochLog:
    epoch: int
    lr: float
    loss: float
    soh_loss: float
    rul_loss: float
    eval_loss: float
    seconds: float


@dataclass
class TrainLog:
    seed: int
    config_hash: str
    epochs: list[EpochLog] = field(default_factory=list)

    def append(self, entry: EpochLog) -> None:
        self.epochs.append(entry)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(e) for e in self.epochs], columns=LOG_COLUMNS)

    def save(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


@dataclass
class TrainResult:
    params: Params
    best_params: Params
    log: TrainLog
    model_cfg: ModelConfig
    train_cfg: TrainConfig


def config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    blob = json.dumps({"model": asdict(model_cfg), "train": asdict(train_cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def batch_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


def _snapshot(params: Params) -> Params:
    return {name: Tensor(p.data.copy(), requires_grad=True, name=name) for name, p in params.items()}


# ── Boucle ────────────────────────────────────────────────────────────────────


def evaluate_loss(samples: SampleSet, params: Params, cfg: ModelConfig, seed: int, batch_size: int = 32) -> float:
    """Perte jointe moyenne (pondérée par échantillon) sans gradient."""
    total = 0.0
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            sl = slice(lo, lo + batch_size)
            pred = model_forward(samples.voltages[sl], params, cfg, seed, samples.factor_rows(sl))
            terms = joint_loss(pred, samples.soh[sl], samples.rul_norm[sl], cfg.soh_weight, cfg.rul_weight)
            total += terms.total.item() * len(samples.soh[sl])
    return total / len(samples)


def train_run(
    cells: Sequence[CellDataset],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: Path | None = None,
) -> TrainResult:
    if not cells:
        raise UsageError("train_run : au moins une cellule d'entraînement requise")
    labeled = [derive_labels(c) for c in cells]
    v_mean, v_scale = fit_voltage_scaler(cells)
    model_cfg = replace(model_cfg, rul_scale=rul_scale_for(labeled), v_mean=v_mean, v_scale=v_scale)
    if model_cfg.use_factors:
        names = model_cfg.factors or select_factors(cells, model_cfg.factor_threshold)
        model_cfg = replace(model_cfg, factors=names, factor_mean=(), factor_scale=())
    samples = samples_for(labeled, model_cfg)
    if model_cfg.use_factors:
        mean, scale = fit_factor_scaler(samples.factors)
        model_cfg = replace(model_cfg, factor_mean=mean, factor_scale=scale)
        log.info("train_run : facteurs de charge %s en entrée des têtes", list(model_cfg.factors))

    params = init_params(model_cfg, seed=train_cfg.seed)
    state = AdamState()
    rng = np.random.default_rng(train_cfg.seed)
    run_log = TrainLog(seed=train_cfg.seed, config_hash=config_hash(model_cfg, train_cfg))
    log.info(
        "train_run : %d cellules, %d échantillons, %d paramètres, seed=%d, config=%s",
        len(cells), len(samples), sum(p.size for p in params.values()), train_cfg.seed, run_log.config_hash,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model_cfg.save(out_dir / "model.cfg")
        dump_flat(
            out_dir / "run.cfg",
            {**asdict(train_cfg), **{f"model_{k}": v for k, v in asdict(model_cfg).items()},
             "config_hash": run_log.config_hash, "cells": [c.cell_id for c in cells]},
            header="Configuration effective du run",
        )

    best_loss = float("inf")
    best = _snapshot(params)
    for epoch in range(train_cfg.epochs):
        lr = lr_at_epoch(epoch, train_cfg)
        t0 = time.perf_counter()
        order = rng.permutation(len(samples))
        sums = np.zeros(3)
        for b, lo in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[lo:lo + train_cfg.batch_size]
            zero_grad(params)
            try:
                pred = model_forward(
                    samples.voltages[idx], params, model_cfg, batch_seed(train_cfg.seed, epoch, b),
                    samples.factor_rows(idx),
                )
                terms = joint_loss(
                    pred, samples.soh[idx], samples.rul_norm[idx], model_cfg.soh_weight, model_cfg.rul_weight
                )
                if not np.isfinite(terms.total.item()):
                    raise NumericalError("perte non finie")
                backward(terms.total)
            except NumericalError as exc:
                raise NumericalError(
                    f"epoch {epoch}, batch {b} (échantillons {idx.tolist()}), lr={lr:.3e} : {exc}"
                ) from exc
            grads, norm = clip_grad_norm(collect_grads(params), train_cfg.grad_clip_norm)
            adam_step(params, grads, state, lr)
            sums += len(idx) * np.array([terms.total.item(), terms.soh, terms.rul])
            log.debug("epoch %d batch %d : loss=%.6f |g|=%.3e", epoch, b, terms.total.item(), norm)

        loss, soh_loss, rul_loss = (sums / len(samples)).tolist()
        # perte des paramètres de fin d'epoch, graine du run
        eval_loss = evaluate_loss(samples, params, model_cfg, train_cfg.seed, train_cfg.batch_size)
        entry = EpochLog(epoch, lr, loss, soh_loss, rul_loss, eval_loss, time.perf_counter() - t0)
        run_log.append(entry)
        log.info(
            "epoch %3d/%d  lr=%.3e  loss=%.6f  soh=%.6f  rul=%.6f  fin=%.6f  (%.1f s)",
            epoch + 1, train_cfg.epochs, lr, loss, soh_loss, rul_loss, eval_loss, entry.seconds,
        )
        if eval_loss < best_loss:
            best_loss = eval_loss
            best = _snapshot(params)
            if out_dir is not None:
                save_params(out_dir / "best.cpg", best)

    if out_dir is not None:
        save_params(out_dir / "final.cpg", params)
        run_log.save(out_dir / "train_log.csv")
        log.info("train_run : checkpoints et journal écrits dans %s", out_dir)
    return TrainResult(params=params, best_params=best, log=run_log, model_cfg=model_cfg, train_cfg=train_cfg)
