import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psdmix import _rj
from psdmix.binned import make_log_grid
from psdmix.errors import ParameterError
from psdmix.rjmcmc import (KPosterior, RJConfig, Stage1Hyperparams, rjmcmc_run,
                           select_k_for_stage2, write_stage1_k)
from psdmix.rng import stream
from psdmix.simulate import draw_counts

GRID = make_log_grid(3, 650, 32)


@settings(max_examples=100, deadline=None)
@given(w=st.floats(0.01, 1.0), mu=st.floats(-3, 8), s2=st.floats(0.01, 4),
       u1=st.floats(0.05, 0.95), u2=st.floats(0.05, 0.95), u3=st.floats(0.05, 0.95))
def test_split_combine_round_trip(w, mu, s2, u1, u2, u3):
    w1, m1, v1, w2, m2, v2 = _rj.split_params(w, mu, s2, u1, u2, u3)
    assert w1 + w2 == pytest.approx(w, rel=1e-12)
    assert v1 > 0 and v2 > 0 and m1 < m2
    back = _rj.combine_params(w1, m1, v1, w2, m2, v2)
    assert np.allclose(back, (w, mu, s2, u1, u2, u3), rtol=1e-10, atol=1e-10)


def test_move_probabilities_at_bounds():
    assert _rj.move_probs(1, 10) == (1.0, 0.0)
    assert _rj.move_probs(10, 10) == (0.0, 1.0)
    assert _rj.move_probs(4, 10) == (0.5, 0.5)


def test_grid_defaults():
    h = Stage1Hyperparams.from_grid(GRID)
    R = GRID.hi - GRID.lo
    assert h.xi == pytest.approx(0.5 * (GRID.lo + GRID.hi))
    assert h.kappa == pytest.approx(1 / R**2) and h.h == pytest.approx(10 / R**2)
    assert (h.delta, h.g, h.k_max) == (2.0, 0.2, 10)


def test_prior_only_chain_is_uniform_over_k():
    from scipy import stats
    post, _ = rjmcmc_run(np.ones(32, int), GRID,
                         config=RJConfig(iterations=60_000, burn_in=10_000, seed=1,
                                         ignore_likelihood=True))
    assert post.k_trace.max() <= 10 and post.k_trace.min() >= 1
    # thin past the autocorrelation time (~30 sweeps) before the chi-square test
    thin = np.bincount(post.k_trace[::50], minlength=11)[1:]
    assert stats.chisquare(thin).pvalue > 0.001


def test_single_component_mode():
    row = draw_counts(GRID, [[3.0]], [[0.2]], [[1.0]], [1000], stream(2))[0]
    post, snaps = rjmcmc_run(row, GRID, config=RJConfig(iterations=6000, burn_in=2000, seed=2))
    assert post.mode == 1 and post.probs[0] > 0.5
    assert snaps[1].mu[0] == pytest.approx(3.0, abs=0.05)
    assert post.counts.sum() == 4000


def test_k_never_exceeds_cap():
    row = draw_counts(GRID, [[1.5, 3.0, 4.5, 5.8]], [[0.05] * 4], [[0.25] * 4], [1000],
                      stream(3))[0]
    h = Stage1Hyperparams.from_grid(GRID, k_max=3)
    post, snaps = rjmcmc_run(row, GRID, h, RJConfig(iterations=3000, burn_in=500, seed=3))
    assert post.k_trace.max() <= 3
    for s in snaps.values():
        assert np.all((s.mu >= GRID.lo) & (s.mu <= GRID.hi))
        assert s.lam.sum() == pytest.approx(1.0)


def test_seed_reproducible():
    row = draw_counts(GRID, [[3.0]], [[0.2]], [[1.0]], [300], stream(4))[0]
    cfg = RJConfig(iterations=800, burn_in=200, seed=9)
    a, _ = rjmcmc_run(row, GRID, config=cfg)
    b, _ = rjmcmc_run(row, GRID, config=cfg)
    assert np.array_equal(a.k_trace, b.k_trace)


@pytest.mark.parametrize("modes,expect", [((3, 3, 3), 3), ((1, 4, 5, 2), 5), ((2,), 2)])
def test_select_k(modes, expect):
    assert select_k_for_stage2(modes) == expect


def test_select_k_needs_input():
    with pytest.raises(ParameterError):
        select_k_for_stage2([])


def test_invalid_inputs():
    with pytest.raises(ParameterError):
        rjmcmc_run(np.ones(5, int), GRID, config=RJConfig(100, 50))
    with pytest.raises(ParameterError):
        RJConfig(100, 100).validate()
    with pytest.raises(ParameterError):
        Stage1Hyperparams(xi=0.0, kappa=0.0)


def test_stage1_csv(tmp_path):
    p = KPosterior(np.array([1.0, 6.0, 3.0]))
    assert p.mode == 2 and p.median == 2
    path = write_stage1_k([p, KPosterior(np.array([4.0]))], tmp_path / "stage1_k.csv", k_max=3)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,mode_k,median_k,p_k1,p_k2,p_k3"
    assert lines[1] == "1,2,2,0.100000,0.600000,0.300000"
    assert lines[2] == "2,1,1,1.000000,0.000000,0.000000"
