import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from maryland_nls import ModeList, Region, elementary_region_family, enumerate_region
from maryland_nls.exceptions import RegionTooLarge
from maryland_nls.lattice import l1_norm, linf_norm, torus_norm
from maryland_nls.matching import hopcroft_karp


@given(st.integers(1, 3), st.integers(0, 4))
def test_box_points_count_and_membership(D, N):
    box = Region.box((0,) * D, N)
    pts = box.points()
    assert len(pts) == (2 * N + 1) ** D
    assert np.abs(pts).max() <= N
    assert box.contains(pts).all()
    assert not box.contains([(N + 1,) + (0,) * (D - 1)])[0]


@pytest.mark.parametrize("D,N", [(2, 2), (3, 2), (2, 4)])
def test_cut_box_removes_one_orthant(D, N):
    for signs in itertools.product(("<", ">", None), repeat=D):
        k = sum(s is not None for s in signs)
        if k < 2:
            continue
        cut = Region.cut_box((0,) * D, N, signs)
        assert len(cut.points()) == (2 * N + 1) ** D - N ** k * (2 * N + 1) ** (D - k)


def test_cut_box_rejects_single_axis():
    with pytest.raises(ValueError):
        Region.cut_box((0, 0), 2, ("<", None))


@pytest.mark.parametrize("D", [1, 2, 3])
def test_elementary_family_size(D):
    fam = elementary_region_family(3, D)
    expected = 1 + sum(math.comb(D, k) * 2 ** k for k in range(2, D + 1))
    assert len(fam) == expected
    assert fam[0].kind == "box"


def test_generalized_region_excludes_translate():
    g = Region.generalized((0, 0), (3, 1), (2, 0))
    pts = g.points()
    assert len(pts) == 2 * 3  # columns -3, -2 remain out of 7
    assert set(pts[:, 0]) == {-3, -2}


def test_region_too_large():
    with pytest.raises(RegionTooLarge):
        Region.box((0, 0, 0), 20).points(cap=1000)
    with pytest.raises(RegionTooLarge):
        enumerate_region(Region.box((0, 0), 20), 1, cap=100)


@given(st.integers(1, 2), st.integers(1, 2), st.integers(1, 3))
@settings(max_examples=20)
def test_modelist_index_round_trip(b, d, N):
    modes = enumerate_region(Region.box((0,) * (b + d), N), b)
    assert len(modes) == 2 * (2 * N + 1) ** (b + d)
    for i, m in enumerate(modes):
        assert modes.index(m) == i
        assert m in modes
        assert len(m.n) == b and len(m.j) == d
    assert (2, (0,) * b, (0,) * d) not in modes


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=4))
def test_norms(v):
    assert l1_norm(v) == sum(abs(x) for x in v)
    assert linf_norm(v) == max(abs(x) for x in v)
    assert linf_norm(v) <= l1_norm(v) <= len(v) * linf_norm(v)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_torus_norm_range_and_periodicity(x):
    t = torus_norm(x)
    assert 0.0 <= t <= 0.5
    assert math.isclose(t, torus_norm(x + 1.0), abs_tol=1e-9)
    assert math.isclose(t, torus_norm(-x), abs_tol=1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.05, 0.6), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60)
def test_hopcroft_karp_matches_scipy(n_left, n_right, density, seed):
    rng = np.random.default_rng(seed)
    A = rng.random((n_left, n_right)) < density
    adj = [list(np.flatnonzero(row)) for row in A]
    match = hopcroft_karp(adj, n_right)
    used = match[match >= 0]
    assert len(set(used.tolist())) == len(used)
    assert all(A[u, v] for u, v in enumerate(match) if v >= 0)
    ref = maximum_bipartite_matching(csr_matrix(A.astype(int)), perm_type="column")
    assert (match >= 0).sum() == (ref >= 0).sum()


def test_hopcroft_karp_keeps_valid_seed_size():
    adj = [[0, 1], [0], [1, 2]]
    match = hopcroft_karp(adj, 3, seed={0: 0})
    assert (match >= 0).sum() == 3
