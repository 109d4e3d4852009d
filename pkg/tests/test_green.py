import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maryland_nls import (Region, classify_boxes, compare_scales, enumerate_region,
                          green_norm_and_decay, ldt_probe, linearized_operator, neumann_verify,
                          resolvent_reconstruct_check)
from maryland_nls.exceptions import CoverageGap, HypothesisViolated, SingularRestriction
from maryland_nls.green import (clopper_pearson, invert, probe_regions, stratified_sigmas,
                                two_sector_coords)


@given(st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25)
def test_inverse_norm_times_smallest_singular_value(n, seed):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    coords = rng.integers(-3, 4, (n, 2))
    res = green_norm_and_decay(T, coords)
    smin = np.linalg.svd(T, compute_uv=False).min()
    assert res["inv_norm"] * smin == pytest.approx(1.0, rel=1e-8)
    assert res["profile"][0] > 0


def test_singular_restriction():
    with pytest.raises(SingularRestriction):
        invert(np.zeros((3, 3)))


def test_decay_rate_of_exponential_kernel():
    # tridiagonal operator whose inverse decays like r^d
    n = 40
    T = np.diag(np.full(n, 2.5)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)
    coords = np.arange(n)[:, None]
    res = green_norm_and_decay(T, coords, N=4)
    assert res["rate"] == pytest.approx(math.log(2.0), rel=0.02)
    few = green_norm_and_decay(T[:4, :4], coords[:4], N=1)
    assert few["rate"] == "insufficient-range"


def test_clopper_pearson_edges():
    assert clopper_pearson(0, 10)[0] == 0.0
    assert clopper_pearson(10, 10)[1] == 1.0
    lo, hi = clopper_pearson(5, 100)
    assert lo < 0.05 < hi


def test_stratified_sigmas_cover_every_stratum():
    s = stratified_sigmas(50, (-1.0, 1.0), seed=3)
    assert np.array_equal(np.floor((s + 1) / 2 * 50), np.arange(50))
    assert np.array_equal(s, stratified_sigmas(50, (-1.0, 1.0), seed=3))


def _oracle_bad_count(rep, eigsys, N, sigmas, c_tilde):
    """Brute force: invert every whole region restriction and test both predicates."""
    union, masks = probe_regions(N, rep.b, eigsys.d, eigsys)
    coords = two_sector_coords(union)
    bad = 0
    for s in sigmas:
        T = linearized_operator(rep.u, eigsys, rep.omega, s, union, 1, 1e-3)
        fail = False
        for mask in masks:
            idx = np.flatnonzero(np.concatenate([mask, mask]))
            G = np.linalg.inv(T[np.ix_(idx, idx)])
            dist = np.abs(coords[idx][:, None] - coords[idx][None, :]).sum(axis=2)
            norm_bad = np.linalg.norm(G, 2) > math.exp(N ** 0.9)
            far = dist >= math.sqrt(N)
            decay_bad = far.any() and (np.abs(G[far]) * np.exp(c_tilde * dist[far])).max() > 1.0
            if norm_bad or decay_bad:
                fail = True
                break
        bad += fail
    return bad


class _Rep:
    def __init__(self, sol):
        self.u, self.omega, self.b = sol.u, sol.omega, sol.u.b


def test_ldt_probe_matches_brute_force(desk_eigsys, desk_solution):
    N, n_sigma = 5, 12
    rep = ldt_probe(desk_solution.u, desk_eigsys, desk_solution.omega, 1e-3, 1, N, n_sigma, seed=5,
                    drop_tol=0.0)
    sigmas = stratified_sigmas(n_sigma, (-1.0, 1.0), 5)
    bad = _oracle_bad_count(_Rep(desk_solution), desk_eigsys, N, sigmas, 1.0)
    assert 0 < bad < n_sigma  # the comparison is not vacuous
    assert round(rep.fraction_failed * n_sigma) == bad


def test_ldt_probe_reproducible_and_monotone_rule(desk_eigsys, desk_solution):
    args = (desk_solution.u, desk_eigsys, desk_solution.omega, 1e-3, 1, 3, 40)
    a = ldt_probe(*args, seed=9)
    b = ldt_probe(*args, seed=9)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict()["kind"] == "ldt_probe"
    cmp = compare_scales(a, b)
    assert cmp["non_increasing"] and cmp["strictly_non_increasing"]


def test_ldt_probe_without_coupling_is_diagonal(desk_eigsys, desk_solution):
    N = 6
    rep = ldt_probe(desk_solution.u, desk_eigsys, desk_solution.omega, 0.0, 1, N, 40, seed=1)
    assert rep.exact_evaluations == 0
    assert rep.fraction_decay_failed == 0.0
    # a diagonal region is bad iff some |n.omega + sigma ... + mu_j| < e^{-N^0.9}
    union, _ = probe_regions(N, 1, 1, desk_eigsys)
    jidx = [desk_eigsys.index(j) for j in union.j]
    mu = desk_eigsys.mu[jidx]
    nw = union.n[:, 0] * desk_solution.omega[0]
    thr = math.exp(-N ** 0.9)
    bad = sum(min(np.abs(nw + s + mu).min(), np.abs(-nw - s + mu).min()) < thr
              for s in stratified_sigmas(40, (-1.0, 1.0), 1))
    assert 0 < bad < 40
    assert round(rep.fraction_failed * 40) == bad


def test_neumann_gate_and_conclusion():
    coords = np.array([[0, 0], [1, 0], [0, 1]])
    A = np.diag([3.0, -3.0, 4.0]).astype(complex)
    B = 1e-4 * np.ones((3, 3))
    res = neumann_verify(A, B, coords, 1.0, 1e-3, 0.5, 1.0)
    assert res["norm_holds"] and res["entry_holds"]
    with pytest.raises(HypothesisViolated) as info:
        neumann_verify(A, 10 * np.ones((3, 3)), coords, 1.0, 1e-3, 0.5, 1.0)
    assert "B-decay" in str(info.value)


def _toy_operator(rng, N, gap=3.0, coupling=0.05):
    modes = enumerate_region(Region.box((0, 0), N), 1)
    K = len(modes)
    T = np.diag(rng.choice([-1, 1], K) * rng.uniform(gap, 2 * gap, K)).astype(complex)
    dist = np.abs(two_sector_coords(modes)[:, None] - two_sector_coords(modes)[None, :]).sum(axis=2)
    T += coupling * np.exp(-3.0 * dist) * (dist > 0)
    return T, modes


def test_resolvent_single_box_cover():
    T, modes = _toy_operator(np.random.default_rng(0), 3)
    res = resolvent_reconstruct_check(T, modes, [Region.box((0, 0), 3)], 3)
    assert res["defect"] < 1e-14
    assert res["bound_holds"]


def test_resolvent_two_overlapping_boxes():
    T, modes = _toy_operator(np.random.default_rng(1), 4)
    cover = [Region.box(c, 4) for c in itertools.product(range(-1, 2), repeat=2)]
    res = resolvent_reconstruct_check(T, modes, cover, 4)
    assert res["defect"] < 1e-12 and res["bound_holds"]


def test_resolvent_coverage_gap():
    T, modes = _toy_operator(np.random.default_rng(2), 4)
    with pytest.raises(CoverageGap):
        resolvent_reconstruct_check(T, modes, [Region.box((3, 3), 1)], 2)


def test_classify_boxes_monotone_in_thresholds():
    T, modes = _toy_operator(np.random.default_rng(3), 4, gap=0.05, coupling=0.3)
    counts = [classify_boxes(T, modes, 1, 0.5, norm_bound=nb)["n_bad"] for nb in (1.0, 10.0, 1e6)]
    assert counts[0] >= counts[1] >= counts[2]
    rates = [classify_boxes(T, modes, 1, r)["n_bad"] for r in (0.1, 1.0, 5.0)]
    assert rates[0] <= rates[1] <= rates[2]
    res = classify_boxes(T, modes, 1, 1.0)
    fam = res["disjoint_family"]
    for a, b in itertools.combinations(fam, 2):
        assert max(abs(x - y) for x, y in zip(a, b)) > 2
