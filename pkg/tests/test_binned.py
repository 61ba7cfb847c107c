import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from psdmix.binned import (BinGrid, BinnedSeries, aggregate_refined, impute_latents,
                           make_log_grid, read_series, refine_grid, rescale_counts, round_counts,
                           write_series)
from psdmix.errors import ParameterError
from psdmix.mixture import MixtureState
from psdmix.rng import stream


def state(mu, s2, lam):
    return MixtureState(np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(s2, float)),
                        np.atleast_1d(np.asarray(lam, float)))


class TestGrid:
    def test_wide_grid_endpoints(self):
        g = make_log_grid(3, 650, 32)
        assert g.n_bins == 32
        assert abs(g.edges[0] - math.log(3)) < 1e-12
        assert abs(g.edges[-1] - math.log(650)) < 1e-12

    def test_narrow_grid_endpoints(self):
        g = make_log_grid(3, 20, 32)
        assert g.lo == pytest.approx(1.0986, abs=1e-4)
        assert g.hi == pytest.approx(2.9957, abs=1e-4)

    def test_single_bin(self):
        g = make_log_grid(math.e, math.e**2, 1)
        assert np.allclose(g.edges, [1.0, 2.0])

    @pytest.mark.parametrize("args", [(0, 5, 3), (5, 3, 3), (3, 20, 0), (-1, 2, 4)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            make_log_grid(*args)

    def test_edges_must_increase(self):
        with pytest.raises(ParameterError):
            BinGrid(np.array([0.0, 1.0, 1.0]))

    def test_refine_counts(self):
        f = refine_grid(make_log_grid(3, 650, 32), 3)
        assert f.n_bins == 96 and f.edges.size == 97

    def test_refine_identity(self):
        g = make_log_grid(3, 20, 10)
        assert refine_grid(g, 1) == g

    def test_refine_keeps_edges_and_splits_evenly(self):
        g = BinGrid(np.array([0.0, 1.0, 3.0, 3.5]))
        f = refine_grid(g, 4)
        assert np.array_equal(f.edges[::4], g.edges)
        assert np.allclose(f.widths, np.repeat(g.widths / 4, 4))

    def test_refine_invalid(self):
        with pytest.raises(ParameterError):
            refine_grid(make_log_grid(3, 20, 4), 0)


class TestImpute:
    grid = make_log_grid(3, 650, 32)

    def test_conservation_and_zero_bins(self):
        row = np.zeros(32, dtype=int)
        row[[3, 10, 11, 30]] = [5, 100, 0, 7]
        lat = impute_latents(row, self.grid, state([1.5, 4.0], [0.3, 0.5], [0.4, 0.6]), stream(1))
        back = aggregate_refined(lat.refined_counts, 3)
        assert np.array_equal(back, row)
        assert lat.total == row.sum()

    def test_point_mass_lands_in_one_sub_bin(self):
        row = np.zeros(32, dtype=int)
        row[12] = 50
        f = refine_grid(self.grid, 3)
        mu = f.mids[12 * 3 + 1]
        lat = impute_latents(row, self.grid, state(mu, 1e-8, 1.0), stream(2))
        assert lat.refined_counts[12 * 3 + 1] == 50

    def test_flat_mixture_is_uniform_multinomial(self):
        row = np.zeros(32, dtype=int)
        row[16] = 1000
        gen = stream(3)
        pvals = []
        for _ in range(50):
            lat = impute_latents(row, self.grid, state(3.8, 1e6, 1.0), gen)
            c = lat.refined_counts[48:51]
            pvals.append(stats.chisquare(c).pvalue)
        # at 0.001 we expect essentially no rejections over 50 repeats
        assert np.sum(np.array(pvals) < 0.001) <= 1

    def test_slice_route_values_stay_in_bins(self):
        row = np.zeros(32, dtype=int)
        row[[5, 6]] = [20, 30]
        lat = impute_latents(row, self.grid, state(2.0, 0.5, 1.0), stream(4), method="slice")
        assert lat.values.size == 50
        assert np.array_equal(aggregate_refined(lat.refined_counts, 3), row)
        assert np.all((lat.values >= self.grid.edges[5]) & (lat.values <= self.grid.edges[7]))

    def test_zero_mass_falls_back_to_uniform(self, caplog):
        row = np.zeros(32, dtype=int)
        row[31] = 30
        lat = impute_latents(row, self.grid, state(1.2, 1e-6, 1.0), stream(5))
        assert lat.fallback_bins == 1
        assert lat.refined_counts[93:96].sum() == 30

    @settings(max_examples=30, deadline=None)
    @given(counts=st.lists(st.integers(0, 200), min_size=8, max_size=8),
           sub=st.integers(1, 5), seed=st.integers(0, 2**31))
    def test_conservation_property(self, counts, sub, seed):
        g = make_log_grid(3, 650, 8)
        row = np.array(counts)
        lat = impute_latents(row, g, state([2.0, 5.0], [0.4, 0.2], [0.5, 0.5]), stream(seed), sub)
        assert np.array_equal(aggregate_refined(lat.refined_counts, sub), row)


class TestSeries:
    def test_round_counts_preserves_total(self):
        # floors give 1, the two spare units go to 0.8 and then the earliest 0.4
        assert round_counts([0.4, 0.4, 0.4, 1.8]).tolist() == [1, 0, 0, 2]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1000), min_size=1, max_size=20))
    def test_round_counts_total_property(self, vals):
        r = round_counts(vals)
        assert r.sum() == int(np.round(np.sum(vals)))
        assert np.all(np.abs(r - np.asarray(vals)) < 1 + 1e-9)

    def test_rescale(self):
        g = make_log_grid(3, 650, 4)
        s = BinnedSeries(g, [0, 10], np.array([[15, 25, 35, 45], [10, 10, 10, 10]]))
        r = rescale_counts(s, 10)
        assert np.array_equal(r.sizes, [12, 4])
        assert np.all(np.abs(r.counts - s.counts / 10) < 1)

    def test_series_validation(self):
        g = make_log_grid(3, 650, 2)
        with pytest.raises(ParameterError):
            BinnedSeries(g, [0], np.array([[1, -1]]))
        with pytest.raises(ParameterError):
            BinnedSeries(g, [0], np.array([[0, 0]]))
        with pytest.raises(ParameterError):
            BinnedSeries(g, [0], np.array([[1, 2, 3]]))

    def test_roundtrip(self, tmp_path):
        g = make_log_grid(3, 650, 5)
        s = BinnedSeries(g, [0, 10, 20.5], np.arange(15).reshape(3, 5) + 1)
        write_series(s, tmp_path)
        back = read_series(tmp_path / "grid.csv", tmp_path / "counts.csv")
        assert back.grid == g
        assert np.array_equal(back.counts, s.counts)
        assert np.array_equal(back.times, s.times)

    def test_real_valued_counts_are_rounded(self, tmp_path):
        (tmp_path / "grid.csv").write_text("0\n1\n2\n")
        (tmp_path / "counts.csv").write_text("0,1.6,2.4\n")
        s = read_series(tmp_path / "grid.csv", tmp_path / "counts.csv")
        assert s.counts.tolist() == [[2, 2]]
