import numpy as np
import pytest

from oracles import planted_trace
from psdmix.binned import make_log_grid
from psdmix.errors import ParameterError
from psdmix.mixture import MixtureState, Trace
from psdmix.relabel import (PermutationSeries, all_permutations, classification_probs, map_anchor,
                            relabel_by_allocation, relabel_by_distance, write_relabel_report)

GRID = make_log_grid(3, 650, 32)


def recovered(perms, planted):
    # new[i, j] = old[i, perms[i, j]], so undoing a planted shuffle gives its inverse
    return np.mean(np.all(perms.perms == np.argsort(planted, axis=1), axis=1))


class TestMapAnchor:
    def _trace(self, lp):
        n = len(lp)
        return Trace(np.zeros((n, 1)), np.ones((n, 1)), np.ones((n, 1)), np.zeros((n, 1), int),
                     np.asarray(lp, float))

    def test_increasing(self):
        assert map_anchor(self._trace(np.arange(10.0))) == 9

    def test_ties_take_first(self):
        assert map_anchor(self._trace(np.zeros(5))) == 0

    def test_crafted(self):
        lp = np.linspace(0, 1, 30)
        lp[17] = 5
        lp[3] = np.nan
        assert map_anchor(self._trace(lp)) == 17

    def test_missing_log_post(self):
        tr = self._trace(np.zeros(3))
        tr.log_post = None
        with pytest.raises(ParameterError):
            map_anchor(tr)


def test_permutations_lexicographic():
    assert all_permutations(3).tolist() == [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0],
                                            [2, 0, 1], [2, 1, 0]]
    with pytest.raises(ParameterError):
        all_permutations(8)
    with pytest.raises(ParameterError):
        PermutationSeries([[0, 0]])


@pytest.mark.parametrize("k", [3, 5])
def test_distance_recovers_planted(k):
    aligned, switched, planted, _ = planted_trace(k, 600, k, GRID)
    out, perms = relabel_by_distance(switched)
    assert recovered(perms, planted) >= 0.99
    assert np.allclose(out.mu, aligned.mu)
    again, p2 = relabel_by_distance(out)
    assert p2.nonidentity_fraction == 0.0
    assert np.array_equal(again.mu, out.mu)


@pytest.mark.parametrize("k", [3, 5])
def test_allocation_recovers_planted(k):
    aligned, switched, planted, row = planted_trace(k, 600, 10 + k, GRID)
    out, perms, converged = relabel_by_allocation(switched, row, GRID)
    assert converged
    assert recovered(perms, planted) >= 0.99
    _, p2, _ = relabel_by_allocation(out, row, GRID)
    assert p2.nonidentity_fraction == 0.0
    _, pd = relabel_by_distance(switched)
    assert np.mean(np.all(pd.perms == perms.perms, axis=1)) >= 0.99


def test_aligned_trace_is_untouched():
    aligned, _, _, row = planted_trace(3, 200, 1, GRID)
    _, pd = relabel_by_distance(aligned)
    _, pa, _ = relabel_by_allocation(aligned, row, GRID)
    assert pd.nonidentity_fraction == 0.0 and pa.nonidentity_fraction == 0.0


def test_multisets_preserved():
    _, switched, _, _ = planted_trace(4, 100, 2, GRID)
    out, _ = relabel_by_distance(switched)
    for a, b in ((out.mu, switched.mu), (out.sigma2, switched.sigma2), (out.lam, switched.lam)):
        assert np.array_equal(np.sort(a, axis=1), np.sort(b, axis=1))
    assert np.array_equal(out.z_counts.sum(axis=1), switched.z_counts.sum(axis=1))


def test_single_component():
    tr = Trace(np.ones((5, 1)), np.ones((5, 1)), np.ones((5, 1)), np.ones((5, 1), int), None)
    _, p = relabel_by_distance(tr)
    assert p.perms.tolist() == [[0]] * 5


def test_identical_components_are_deterministic():
    n = 20
    tr = Trace(np.full((n, 2), 3.0), np.full((n, 2), 0.3), np.full((n, 2), 0.5),
               np.full((n, 2), 50), np.zeros(n))
    row = np.zeros(32, int)
    row[15] = 100
    _, pd = relabel_by_distance(tr)
    _, pa, _ = relabel_by_allocation(tr, row, GRID)
    # every permutation ties, so the lexicographically smallest (identity) wins
    assert pd.nonidentity_fraction == 0.0 and pa.nonidentity_fraction == 0.0


def test_explicit_anchor_state():
    _, switched, planted, _ = planted_trace(3, 100, 4, GRID)
    mu0 = np.linspace(GRID.lo + 0.5, GRID.hi - 0.5, 3)
    anchor = MixtureState(mu0, np.array([0.02, 0.035, 0.05]), np.array([0.22, 0.33, 0.45]))
    _, p = relabel_by_distance(switched, anchor)
    assert recovered(p, planted) >= 0.99


def test_classification_probs_rows_sum_to_one():
    aligned, _, _, _ = planted_trace(3, 10, 5, GRID)
    P = classification_probs(aligned, GRID)
    assert P.shape == (10, 32, 3)
    assert np.allclose(P.sum(axis=2), 1)


def test_report(tmp_path):
    path = write_relabel_report([(1, "distance", 0.25), (2, "distance", 0.0)], tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,method,nonidentity_fraction"
    assert len(lines) == 3 and lines[1].startswith("1,distance,0.25")
