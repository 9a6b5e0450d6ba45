"""Tests unitaires : planning, partition, échantillons et boucle d'entraînement (ml/train.py)."""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from autodiff.checkpoint import load_params
from battery.features import FEATURE_NAMES, extract_feature_factors
from battery.labels import derive_labels
from ml.model import ModelConfig, init_params
from ml.train import (
    LOG_COLUMNS,
    TrainConfig,
    build_samples,
    enumerate_holdouts,
    evaluate_loss,
    lr_at_epoch,
    partition,
    rul_scale_for,
    samples_for,
    select_factors,
    train_run,
)
from utils.errors import ConfigError, DataError, ShapeError, UsageError


@pytest.fixture
def tiny_train() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=8, warmup_epochs=1, seed=5)


# ═══════════════════════════════════════════════════════════════
# Planning du taux d'apprentissage
# ═══════════════════════════════════════════════════════════════

class TestLearningRate:

    def test_schedule_points(self):
        cfg = TrainConfig()
        assert lr_at_epoch(0, cfg) == pytest.approx(1.25e-5)
        assert lr_at_epoch(7, cfg) == pytest.approx(1.0e-4)
        assert lr_at_epoch(8, cfg) == pytest.approx(7.5e-5)

    def test_warmup_is_linear(self):
        cfg = TrainConfig()
        lrs = [lr_at_epoch(e, cfg) for e in range(8)]
        np.testing.assert_allclose(np.diff(lrs), (1e-4 - 1.25e-5) / 7)

    def test_decay_is_geometric(self):
        cfg = TrainConfig()
        lrs = np.array([lr_at_epoch(e, cfg) for e in range(7, 50)])
        np.testing.assert_allclose(lrs[1:] / lrs[:-1], 0.75)

    def test_out_of_range(self):
        cfg = TrainConfig()
        for e in (-1, 50):
            with pytest.raises(UsageError):
                lr_at_epoch(e, cfg)

    def test_no_warmup(self):
        assert lr_at_epoch(0, TrainConfig(warmup_epochs=0)) == pytest.approx(1e-4)


class TestTrainConfig:

    def test_defaults_from_toml(self):
        cfg = TrainConfig.defaults()
        assert (cfg.epochs, cfg.batch_size) == (50, 32)
        assert cfg.grad_clip_norm == 1.0

    def test_warmup_must_be_below_epochs(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=5, warmup_epochs=5)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_mapping({"momentum": 0.9})

    def test_save_load(self, tmp_path, tiny_train):
        tiny_train.save(tmp_path / "train.cfg")
        assert TrainConfig.load(tmp_path / "train.cfg") == tiny_train


# ═══════════════════════════════════════════════════════════════
# Partition train / test
# ═══════════════════════════════════════════════════════════════

class TestPartition:

    def test_hold_out_last(self, cell_factory):
        cells = [cell_factory([2.0, 1.3], cell_id=f"b{k}") for k in range(1, 5)]
        split = partition(cells, "b4", oc=20)
        assert split.train_ids == ["b1", "b2", "b3"]
        assert split.test_ids == ["b4"]
        assert split.oc == 20

    def test_several_held_out(self, cell_factory):
        cells = [cell_factory([2.0, 1.3], cell_id=f"b{k}") for k in range(1, 5)]
        split = partition(cells, ["b1", "b3"])
        assert split.train_ids == ["b2", "b4"]

    def test_absent_cell(self, cell_factory):
        with pytest.raises(UsageError, match="b9"):
            partition([cell_factory([2.0], cell_id="b1")], "b9")

    def test_nothing_left_to_train(self, cell_factory):
        with pytest.raises(UsageError):
            partition([cell_factory([2.0], cell_id="b1")], "b1")

    def test_enumerate_holdouts(self, cell_factory):
        cells = [cell_factory([2.0, 1.3], cell_id=f"b{k}") for k in range(1, 5)]
        splits = list(enumerate_holdouts(cells))
        assert [s.test_ids for s in splits] == [["b1"], ["b2"], ["b3"], ["b4"]]
        assert all(len(s.train) == 3 for s in splits)


# ═══════════════════════════════════════════════════════════════
# Échantillons
# ═══════════════════════════════════════════════════════════════

class TestSamples:

    def test_one_row_per_cycle(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.5, 1.3]))
        s = build_samples([lab], seq_len=8, rul_scale=2.0)
        assert s.voltages.shape == (3, 8)
        np.testing.assert_allclose(s.soh, [1.0, 0.75, 0.65])
        np.testing.assert_allclose(s.rul_norm, [1.0, 0.5, 0.0])

    def test_start_skips_cycles(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.5, 1.3]))
        s = build_samples([lab], seq_len=8, rul_scale=1.0, start=1)
        np.testing.assert_array_equal(s.cycles, [1, 2])

    def test_soh_only_cell_has_nan_rul(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.9]))
        s = build_samples([lab], seq_len=8, rul_scale=1.0)
        assert np.all(np.isnan(s.rul_norm))

    def test_unaligned_raises(self, synth_raw):
        lab = derive_labels(synth_raw[0])
        with pytest.raises(ShapeError, match="preprocess"):
            build_samples([lab], seq_len=16, rul_scale=1.0)

    def test_start_past_end(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.3]))
        with pytest.raises(DataError):
            build_samples([lab], seq_len=8, rul_scale=1.0, start=5)

    def test_factor_columns_follow_names(self, cell_factory):
        cell = cell_factory([2.0, 1.5, 1.3])
        names = ("cc_integral_vs", "onset_to_peak_s")
        s = build_samples([derive_labels(cell)], seq_len=8, rul_scale=1.0, factors=names)
        assert s.factors.shape == (3, 2)
        for row, cycle in zip(s.factors, cell.cycles):
            ff = extract_feature_factors(cycle, cell.saturation_voltage)
            np.testing.assert_array_equal(row, [ff.cc_integral_vs, ff.onset_to_peak_s])

    def test_no_factors_by_default(self, cell_factory):
        s = build_samples([derive_labels(cell_factory([2.0, 1.5]))], seq_len=8, rul_scale=1.0)
        assert s.factors is None
        assert s.factor_rows(slice(0, 1)) is None

    def test_samples_for_reads_config(self, cell_factory, tiny_cfg):
        lab = derive_labels(cell_factory([2.0, 1.5, 1.3]))
        cfg = replace(tiny_cfg, seq_len=8, use_factors=True, factors=("plateau_s",))
        assert samples_for([lab], cfg, start=1).factors.shape == (2, 1)
        assert samples_for([lab], replace(cfg, use_factors=False)).factors is None

    def test_rul_scale_is_max_eol(self, cell_factory):
        labs = [
            derive_labels(cell_factory([2.0, 1.3])),
            derive_labels(cell_factory([2.0, 1.9, 1.8, 1.2])),
            derive_labels(cell_factory([2.0, 1.9])),
        ]
        assert rul_scale_for(labs) == 3.0
        assert rul_scale_for(labs[2:]) == 1.0


# ═══════════════════════════════════════════════════════════════
# Boucle
# ═══════════════════════════════════════════════════════════════

class TestTrainRun:

    def test_deterministic(self, synth_aligned, tiny_cfg, tiny_train):
        a = train_run(synth_aligned[:2], tiny_cfg, tiny_train)
        b = train_run(synth_aligned[:2], tiny_cfg, tiny_train)
        cols = ["loss", "soh_loss", "rul_loss"]
        pd.testing.assert_frame_equal(a.log.to_frame()[cols], b.log.to_frame()[cols])
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_log_and_lr_trace(self, synth_aligned, tiny_cfg, tiny_train):
        result = train_run(synth_aligned[:2], tiny_cfg, tiny_train)
        frame = result.log.to_frame()
        assert list(frame.columns) == LOG_COLUMNS
        assert list(frame["epoch"]) == [0, 1, 2]
        np.testing.assert_allclose(frame["lr"], [lr_at_epoch(e, tiny_train) for e in range(3)])
        assert np.all(np.isfinite(frame["loss"]))

    def test_fitted_scales_in_config(self, synth_aligned, tiny_cfg, tiny_train):
        result = train_run(synth_aligned[:2], tiny_cfg, tiny_train)
        labs = [derive_labels(c) for c in synth_aligned[:2]]
        assert result.model_cfg.rul_scale == max(lab.n_eol for lab in labs)
        assert 3.0 < result.model_cfg.v_mean < 4.2
        assert result.model_cfg.v_scale > 0

    def test_writes_run_files(self, tmp_path, synth_aligned, tiny_cfg, tiny_train):
        result = train_run(synth_aligned[:2], tiny_cfg, tiny_train, out_dir=tmp_path)
        for name in ("model.cfg", "run.cfg", "best.cpg", "final.cpg", "train_log.csv"):
            assert (tmp_path / name).exists(), name
        assert ModelConfig.load(tmp_path / "model.cfg") == result.model_cfg
        final = load_params(tmp_path / "final.cpg")
        assert list(final) == list(result.params)
        np.testing.assert_array_equal(final["head.soh.fc2.b"].data, result.params["head.soh.fc2.b"].data)
        assert len(pd.read_csv(tmp_path / "train_log.csv")) == 3

    def test_best_is_lowest_end_of_epoch_loss(self, tmp_path, synth_aligned, tiny_cfg, tiny_train):
        result = train_run(synth_aligned[:2], tiny_cfg, tiny_train, out_dir=tmp_path)
        labs = [derive_labels(c) for c in synth_aligned[:2]]
        samples = build_samples(labs, tiny_cfg.seq_len, result.model_cfg.rul_scale)
        frame = result.log.to_frame()
        loss = evaluate_loss(samples, result.best_params, result.model_cfg, tiny_train.seed, tiny_train.batch_size)
        assert loss == pytest.approx(frame["eval_loss"].min(), rel=1e-12)
        saved = load_params(tmp_path / "best.cpg")
        for name, p in result.best_params.items():
            np.testing.assert_array_equal(saved[name].data, p.data)

    def test_final_eval_loss_matches_final_params(self, synth_aligned, tiny_cfg, tiny_train):
        result = train_run(synth_aligned[:2], tiny_cfg, tiny_train)
        labs = [derive_labels(c) for c in synth_aligned[:2]]
        samples = build_samples(labs, tiny_cfg.seq_len, result.model_cfg.rul_scale)
        loss = evaluate_loss(samples, result.params, result.model_cfg, tiny_train.seed, tiny_train.batch_size)
        assert loss == pytest.approx(result.log.epochs[-1].eval_loss, rel=1e-12)

    def test_overfits_tiny_dataset(self, synth_aligned, tiny_cfg):
        cfg = TrainConfig(epochs=40, batch_size=4, base_lr=1e-2, warmup_epochs=1, decay=0.98, seed=3)
        result = train_run(synth_aligned[:1], tiny_cfg, cfg)
        labs = [derive_labels(synth_aligned[0])]
        samples = build_samples(labs, tiny_cfg.seq_len, result.model_cfg.rul_scale)
        initial = evaluate_loss(samples, init_params(result.model_cfg, seed=cfg.seed), result.model_cfg, cfg.seed)
        final = min(e.eval_loss for e in result.log.epochs)
        assert final < 0.25 * initial

    def test_factor_run_screens_and_scales(self, tmp_path, synth_aligned, tiny_cfg, tiny_train):
        cfg = replace(tiny_cfg, use_factors=True, factor_threshold=0.0)
        result = train_run(synth_aligned[:2], cfg, tiny_train, out_dir=tmp_path)
        names = result.model_cfg.factors
        assert names and list(names) == [n for n in FEATURE_NAMES if n in names]
        samples = samples_for([derive_labels(c) for c in synth_aligned[:2]], result.model_cfg)
        np.testing.assert_allclose(result.model_cfg.factor_mean, samples.factors.mean(axis=0))
        np.testing.assert_allclose(result.model_cfg.factor_scale, samples.factors.std(axis=0))
        assert result.params["head.soh.fc1.w"].shape[0] == tiny_cfg.channels + len(names)
        assert ModelConfig.load(tmp_path / "model.cfg") == result.model_cfg
        assert np.all(np.isfinite(result.log.to_frame()["eval_loss"]))

    def test_explicit_factors_skip_screening(self, synth_aligned, tiny_cfg, tiny_train):
        cfg = replace(tiny_cfg, use_factors=True, factors=("cc_integral_vs",), factor_threshold=1.0)
        result = train_run(synth_aligned[:2], cfg, tiny_train)
        assert result.model_cfg.factors == ("cc_integral_vs",)
        assert len(result.model_cfg.factor_mean) == 1

    def test_screening_keeps_correlated_factors(self, synth_aligned):
        kept = select_factors(synth_aligned, threshold=0.5)
        assert "cc_integral_vs" in kept

    def test_screening_with_nothing_kept(self, synth_aligned):
        with pytest.raises(DataError, match="aucun facteur"):
            select_factors(synth_aligned, threshold=1.0)

    def test_no_cells(self, tiny_cfg, tiny_train):
        with pytest.raises(UsageError):
            train_run([], tiny_cfg, tiny_train)
