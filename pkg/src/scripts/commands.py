"""Corps des sous-commandes cellprog.

Chaque ``cmd_*`` reçoit les arguments argparse et la ligne de commande
d'origine (pour le manifeste) ; les erreurs remontent telles quelles et
sont converties en ``E:<code>:`` par cellprog.main.
"""

import argparse
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from autodiff.checkpoint import load_params
from battery.cells import CellDataset, load_cells_dir, save_cell
from battery.features import FEATURE_NAMES, feature_table, pearson, screen_features
from battery.interpolate import interpolate_cell
from battery.labels import derive_labels
from battery.synth import synth_cells
from config.loader import load_config, worker_count
from ml.hsearch import holdout_objective, load_search_file, search, split_config, write_trials_csv
from ml.metrics import write_report
from ml.model import ModelConfig, check_params
from ml.predict import evaluate_cell
from ml.train import TrainConfig, evaluate_loss, partition, samples_for, train_run
from scripts.manifest import RunManifest
from utils.errors import ConfigError, DataError

log = logging.getLogger(__name__)


def _start(command: str, argv: Sequence[str], seed: int, out: Path, inputs: Sequence[Path | None] = ()) -> Path:
    manifest = RunManifest(
        command=command,
        argv=list(argv),
        seed=int(seed),
        out_dir=str(out),
        inputs=[str(p) for p in inputs if p is not None],
    )
    path = manifest.save(out)
    log.info("%s : manifeste %s", command, path)
    return Path(out)


def _hold_out_ids(raw: str) -> list[str]:
    return [s.strip() for s in raw.split(",") if s.strip()]


def _configs(args: argparse.Namespace) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = ModelConfig.defaults()
    if args.model_cfg is not None:
        model_cfg = ModelConfig.load(args.model_cfg, model_cfg)
    train_cfg = TrainConfig.defaults()
    if args.train_cfg is not None:
        train_cfg = TrainConfig.load(args.train_cfg, train_cfg)
    if getattr(args, "use_factors", False):
        model_cfg = ModelConfig.from_mapping({"use_factors": True}, model_cfg)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    oc = _oc(args, None)
    if oc is not None:
        overrides["oc"] = oc
    return model_cfg, TrainConfig.from_mapping(overrides, train_cfg)


def dataset_preset(name: str) -> dict:
    presets = load_config("datasets").get("dataset", {})
    if name not in presets:
        raise ConfigError(f"préréglage '{name}' inconnu (disponibles : {sorted(presets)})")
    return presets[name]


def preset_value(args: argparse.Namespace, key: str, given, fallback):
    """Valeur explicite, sinon celle du préréglage --preset, sinon ``fallback``."""
    if given is not None:
        return given
    name = getattr(args, "preset", None)
    if name is None:
        return fallback
    preset = dataset_preset(name)
    if key not in preset:
        raise ConfigError(f"préréglage '{name}' sans clé '{key}'")
    return int(preset[key])


def _oc(args: argparse.Namespace, fallback: int | None) -> int | None:
    return preset_value(args, "oc", getattr(args, "oc", None), fallback)


# ── synth ─────────────────────────────────────────────────────────────────────


def cmd_synth(args: argparse.Namespace, argv: Sequence[str]) -> None:
    preset = dataset_preset(args.preset)
    out = _start("synth", argv, args.seed, args.out)
    cells = synth_cells(
        args.seed,
        n_cells=args.cells,
        n_cycles=args.cycles,
        seq_len=args.seq_len,
        regen_rate=args.regen_rate,
        rated_capacity=preset["rated_capacity_ah"],
        eol_threshold=preset["eol_threshold_ah"],
        saturation_voltage=preset["saturation_voltage_v"],
    )
    for cell in cells:
        save_cell(cell, out)
    log.info("synth : %d cellules écrites dans %s (préréglage %s)", len(cells), out, args.preset)


# ── preprocess ────────────────────────────────────────────────────────────────


def cmd_preprocess(args: argparse.Namespace, argv: Sequence[str]) -> None:
    out = _start("preprocess", argv, 0, args.out, [args.input])
    target_len = preset_value(args, "target_len", args.target_len, ModelConfig.defaults().seq_len)
    log.info("preprocess : alignement sur %d points", target_len)
    for cell in load_cells_dir(args.input):
        save_cell(interpolate_cell(cell, target_len), out)


# ── train ─────────────────────────────────────────────────────────────────────


def cmd_train(args: argparse.Namespace, argv: Sequence[str]) -> None:
    model_cfg, train_cfg = _configs(args)
    out = _start("train", argv, train_cfg.seed, args.out, [args.data, args.model_cfg, args.train_cfg])
    cells = load_cells_dir(args.data)
    split = partition(cells, _hold_out_ids(args.hold_out), train_cfg.oc)
    log.info("train : entraînement %s | test %s | OC=%d", split.train_ids, split.test_ids, split.oc)
    train_cfg.save(out / "train.cfg")
    result = train_run(split.train, model_cfg, train_cfg, out)

    labeled = [derive_labels(c) for c in split.test]
    samples = samples_for(labeled, result.model_cfg, start=split.oc)
    loss = evaluate_loss(samples, result.best_params, result.model_cfg, train_cfg.seed, train_cfg.batch_size)
    log.info("train : perte jointe sur %s = %.6f", split.test_ids, loss)


# ── evaluate ──────────────────────────────────────────────────────────────────


def cmd_evaluate(args: argparse.Namespace, argv: Sequence[str]) -> None:
    cfg_path = args.model_cfg or Path(args.checkpoint).parent / "model.cfg"
    out = _start("evaluate", argv, args.seed, args.out, [args.checkpoint, cfg_path, args.data])
    cfg = ModelConfig.load(cfg_path, ModelConfig.defaults())
    params = load_params(args.checkpoint, requires_grad=False)
    check_params(params, cfg)

    oc = _oc(args, 0)
    cells: list[CellDataset] = load_cells_dir(args.data)
    if args.cells:
        wanted = _hold_out_ids(args.cells)
        cells = [c for c in cells if c.cell_id in wanted]
        if not cells:
            raise DataError(f"evaluate : aucune des cellules {wanted} dans {args.data}")
    reports = []
    for cell in cells:
        evaluation = evaluate_cell(cell, params, cfg, oc, args.seed)
        evaluation.save(out)
        reports.extend(evaluation.reports)
    write_report(reports, out / "metrics.csv")
    log.info("evaluate : %d rapports écrits dans %s", len(reports), out / "metrics.csv")


# ── search ────────────────────────────────────────────────────────────────────


def cmd_search(args: argparse.Namespace, argv: Sequence[str]) -> None:
    settings, space = load_search_file(args.space)
    budget = args.budget if args.budget is not None else settings.budget
    tpe = args.tpe or settings.tpe
    model_base, train_base = _configs(args)
    out = _start("search", argv, args.seed, args.out, [args.space, args.data, args.model_cfg, args.train_cfg])

    cells = load_cells_dir(args.data)
    split = partition(cells, _hold_out_ids(args.hold_out), _oc(args, 0))
    objective = holdout_objective(split, model_base, train_base, settings.epochs)
    result = search(
        space, budget, objective, seed=args.seed, tpe=tpe, workers=worker_count(), quantile=settings.tpe_quantile
    )
    write_trials_csv(result.trials, out / "trials.csv")

    model_vals, train_vals = split_config(result.best.config)
    ModelConfig.from_mapping(model_vals, model_base).save(out / "best_model.cfg")
    TrainConfig.from_mapping({**train_vals, "seed": result.best.seed}, train_base).save(out / "best_train.cfg")
    log.info("search : meilleure config %s → %s", result.best.config, out)


# ── features ──────────────────────────────────────────────────────────────────


def cmd_features(args: argparse.Namespace, argv: Sequence[str]) -> None:
    out = _start("features", argv, 0, args.out, [args.input])
    rows = []
    for cell in load_cells_dir(args.input):
        table = feature_table(cell)
        table.to_csv(out / f"features_{cell.cell_id}.csv", index=False, lineterminator="\n")
        capacity = table["capacity_ah"].to_numpy()
        kept = screen_features(table, capacity, args.threshold)
        for name in (*FEATURE_NAMES, "capacity_ah"):
            try:
                r = pearson(table[name].to_numpy(), capacity)
            except DataError as exc:
                log.warning("%s : corrélation %s indéfinie (%s)", cell.cell_id, name, exc)
                r = np.nan
            rows.append({"cell": cell.cell_id, "feature": name, "pearson_r": r, "kept": name in kept})
    pd.DataFrame(rows, columns=["cell", "feature", "pearson_r", "kept"]).to_csv(
        out / "pearson.csv", index=False, lineterminator="\n"
    )
