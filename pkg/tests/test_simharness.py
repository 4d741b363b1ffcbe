import numpy as np
import pytest

from vctest.model import ContrastSpec
from vctest.simharness import (
    CSV_COLUMNS,
    ExperimentGrid,
    grid_from_manifest,
    grid_to_manifest,
    ks_uniform,
    power_table,
    run_cell,
)


def small_grid(**overrides):
    base = dict(
        family="nested",
        sizes=((6, 3, 2),),
        taus=((0.5, 0.5),),
        s=6,
        b=19,
        contrast=ContrastSpec(a=np.array([[1.0, -1.0]]), alternative=("greater",)),
        seed=314,
    )
    base.update(overrides)
    return ExperimentGrid(**base)


class TestKsUniform:
    def test_single_point(self):
        assert ks_uniform([0.5]) == pytest.approx(0.5)

    def test_plug_in_order_statistics(self):
        s = 97
        pvals = np.arange(1, s + 1) / (s + 1)
        assert ks_uniform(pvals) <= 1.0 / (s + 1) + 1e-3

    def test_all_zero(self):
        assert ks_uniform(np.zeros(10)) == pytest.approx(1.0)

    def test_range_validation(self):
        with pytest.raises(ValueError):
            ks_uniform([0.2, 1.4])
        with pytest.raises(ValueError):
            ks_uniform([])

    def test_uniform_sample_is_small(self):
        rng = np.random.default_rng(0)
        assert ks_uniform(rng.uniform(size=500)) < 0.08


class TestRunCell:
    def test_smoke_single_replicate(self):
        grid = small_grid(s=1)
        cell = run_cell(grid, grid.sizes[0], grid.taus[0])
        assert cell.pvalues_two.shape == (1,)
        assert 0.0 <= cell.pvalues_two[0] <= 1.0
        assert 0.0 <= cell.pvalues_one[0] <= 1.0
        assert cell.n_failed == 0

    def test_null_cell_sane(self):
        grid = small_grid(s=40)
        cell = run_cell(grid, grid.sizes[0], grid.taus[0])
        assert cell.n_failed == 0
        assert 0.0 <= cell.reject_rate_05 <= 0.3
        assert cell.ks_stat < 0.35
        # common value estimates should hover near the simulated 0.5
        assert abs(cell.mean_tau_common - 0.5) < 0.4

    def test_unbalanced_layouts_regenerate(self):
        grid = small_grid(
            sizes=((5, 3, 3),), unbalanced=True, s=3, b=9,
            contrast=ContrastSpec(a=np.array([[1.0, -1.0]])),
        )
        cell = run_cell(grid, grid.sizes[0], grid.taus[0])
        assert cell.pvalues_two.shape == (3,)
        assert np.isnan(cell.pvalues_one).all()


class TestPowerTable:
    def test_toy_grid_shape_and_determinism(self, tmp_path):
        grid = small_grid(sizes=((4, 3, 2), (5, 2, 2)), taus=((0.5, 0.5), (1.0, 1.0)), s=4, b=9)
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        res1 = power_table(grid, str(out1), workers=1)
        res2 = power_table(grid, str(out2), workers=2)
        assert len(res1) == len(res2) == 4
        b1, b2 = out1.read_bytes(), out2.read_bytes()
        assert b1 == b2
        header = b1.decode().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)
        assert len(b1.decode().splitlines()) == 5

    def test_manifest_roundtrip(self, tmp_path):
        grid = small_grid(statistic="raw-minimum", unbalanced=False)
        text = grid_to_manifest(grid)
        back = grid_from_manifest(text)
        assert back == grid
        out = tmp_path / "r.csv"
        manifest = tmp_path / "m.json"
        power_table(small_grid(s=1, b=3), str(out), manifest_out=str(manifest))
        assert grid_from_manifest(manifest.read_text()) == small_grid(s=1, b=3)

    def test_crossed_balanced_convention(self, tmp_path):
        grid = small_grid(
            family="crossed",
            sizes=((4, 4, -1.0),),
            taus=((0.5, 0.5),),
            s=2,
            b=9,
            contrast=ContrastSpec(a=np.array([[1.0, -1.0]])),
        )
        res = power_table(grid, str(tmp_path / "c.csv"))
        assert len(res) == 1
        assert res[0].size == (4.0, 4.0, -1.0)

    def test_monotone_power_trend(self, tmp_path):
        # rejection rate non-decreasing in the component gap, up to noise
        grid = small_grid(
            sizes=((10, 3, 2),),
            taus=((1.0, 1.0), (1.0, 0.4), (1.0, 0.1)),
            s=60,
            b=49,
            contrast=ContrastSpec(a=np.array([[1.0, -1.0]])),
            seed=77,
        )
        cells = power_table(grid, str(tmp_path / "trend.csv"))
        rates = [c.reject_rate_05 for c in cells]
        ses = [max(c.mc_se, np.sqrt(0.05 * 0.95 / grid.s)) for c in cells]
        for i in range(len(rates) - 1):
            assert rates[i + 1] >= rates[i] - 2 * (ses[i] + ses[i + 1])
        assert rates[-1] > rates[0]

    def test_crossed_unbalanced_cells_run(self, tmp_path):
        grid = small_grid(
            family="crossed",
            sizes=((5, 5, 0.5),),
            taus=((0.5, 0.5),),
            s=2,
            b=9,
            contrast=ContrastSpec(a=np.array([[1.0, -1.0]])),
        )
        res = power_table(grid, str(tmp_path / "cu.csv"))
        assert len(res) == 1
        assert res[0].pvalues_two.shape[0] <= 2
