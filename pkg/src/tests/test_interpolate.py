"""Tests unitaires : alignement des cycles (battery/interpolate.py) et étiquettes (battery/labels.py)."""

import numpy as np
import pytest

from battery.interpolate import insertion_positions, interpolate_cell, interpolate_cycle, interpolate_to_length
from battery.labels import derive_labels
from utils.errors import DataError


def _is_subsequence(small: np.ndarray, big: np.ndarray) -> bool:
    it = iter(big)
    return all(any(x == y for y in it) for x in small)


# ═══════════════════════════════════════════════════════════════
# interpolate_to_length
# ═══════════════════════════════════════════════════════════════

class TestInterpolateToLength:

    def test_single_insertion(self):
        np.testing.assert_array_equal(interpolate_to_length([1.0, 3.0], 3), [1.0, 2.0, 3.0])

    def test_same_length_is_copy(self):
        v = np.array([1.0, 2.0, 4.0])
        out = interpolate_to_length(v, 3)
        np.testing.assert_array_equal(out, v)
        assert out is not v

    def test_too_long_raises(self):
        with pytest.raises(DataError):
            interpolate_to_length([1.0, 2.0, 3.0], 2)

    def test_too_short_raises(self):
        with pytest.raises(DataError):
            interpolate_to_length([1.0], 4)

    def test_positions_half_up_and_clamped(self):
        # j·len/(count+1) = 1.5 → 2 (demi-supérieur)
        np.testing.assert_array_equal(insertion_positions(3, 1), [2])
        assert insertion_positions(2, 5).min() >= 1
        assert insertion_positions(2, 5).max() <= 1

    def test_random_pairs_property(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n = int(rng.integers(2, 60))
            target = int(rng.integers(n, 3 * n + 1))
            v = rng.normal(size=n)
            out = interpolate_to_length(v, target)
            assert len(out) == target
            assert _is_subsequence(v, out)
            pos = insertion_positions(n, target - n)
            inserted_at = pos + np.arange(target - n)
            kept = np.delete(out, inserted_at)
            np.testing.assert_array_equal(kept, v)
            np.testing.assert_allclose(out[inserted_at], 0.5 * (v[pos - 1] + v[pos]))


class TestInterpolateCycle:

    def test_times_stay_increasing(self, cell_factory):
        cycle = cell_factory([2.0], n_points=5).cycles[0]
        out = interpolate_cycle(cycle, 17)
        assert len(out) == 17
        assert np.all(np.diff(out.times) > 0)
        assert out.capacity == cycle.capacity

    def test_too_long_names_cycle(self, cell_factory):
        cell = cell_factory([2.0, 1.9], n_points=8)
        with pytest.raises(DataError, match="cycle 0"):
            interpolate_cycle(cell.cycles[0], 4)

    def test_cell_target_len_recorded(self, synth_raw):
        cell = interpolate_cell(synth_raw[0], 16)
        assert cell.target_len == 16
        assert all(len(c) == 16 for c in cell.cycles)

    def test_already_aligned_unchanged(self, synth_aligned):
        cell = synth_aligned[0]
        assert interpolate_cell(cell, 16) == cell


# ═══════════════════════════════════════════════════════════════
# derive_labels
# ═══════════════════════════════════════════════════════════════

class TestDeriveLabels:

    def test_soh_is_capacity_over_rated(self, small_cell):
        lab = derive_labels(small_cell)
        np.testing.assert_allclose(lab.soh, [1.0, 0.75, 0.65])

    def test_rul_counts_down_to_eol(self, small_cell):
        lab = derive_labels(small_cell)
        assert lab.n_eol == 2
        np.testing.assert_array_equal(lab.rul, [2, 1, 0])

    def test_rul_zero_after_eol(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.3, 1.5, 1.2]))
        assert lab.n_eol == 1
        np.testing.assert_array_equal(lab.rul, [1, 0, 0, 0])

    def test_never_crossing_is_soh_only(self, cell_factory):
        lab = derive_labels(cell_factory([2.0, 1.6, 1.4005]))
        assert not lab.has_rul
        assert lab.rul is None and lab.n_eol is None
        assert len(lab) == 3

    def test_synth_cells_reach_eol(self, synth_raw):
        for cell in synth_raw:
            lab = derive_labels(cell)
            assert lab.has_rul
            assert lab.rul[lab.n_eol] == 0
