import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN, SILVER
from maryland_nls import (EigenSystem, MarylandDiagonalizer, MarylandParams, diagonalize_and_relabel,
                          diophantine_check, spatial_box)
from maryland_nls.exceptions import AsymmetricBox, SingularPhase
from maryland_nls.spectrum import (build_hamiltonian, check_symmetry, eigenvalue_profile, phases,
                                   potential)


@given(st.floats(0.0, 1.0, exclude_max=True), st.integers(-40, 40), st.integers(-40, 40))
def test_phases_exact_reduction(theta, j1, j2):
    params = MarylandParams(0.0, (GOLDEN, SILVER), theta, tau=3.0)
    got = phases(params, np.array([[j1, j2]]))[0]
    exact = Fraction(theta) + j1 * Fraction(GOLDEN) + j2 * Fraction(SILVER)
    exact -= math.floor(exact + Fraction(1, 2))
    assert -0.5 <= got < 0.5
    assert got == float(exact)


@given(st.floats(0.5, 1.0, exclude_max=True), st.integers(-60, 60))
def test_reflected_phases_are_exact_negatives(theta, j):
    a = phases(MarylandParams(0.0, (GOLDEN,), theta), np.array([[j]]))[0]
    b = phases(MarylandParams(0.0, (GOLDEN,), 1.0 - theta), np.array([[-j]]))[0]
    if abs(a) != 0.5:
        assert a == -b


def test_eps_zero_is_diagonal():
    params = MarylandParams(0.0, (GOLDEN,), 0.3)
    es = diagonalize_and_relabel(params, spatial_box(1, 6))
    H = build_hamiltonian(params, spatial_box(1, 6))
    assert np.allclose(es.phi, np.eye(es.size))
    assert np.allclose(es.mu, np.diag(H), rtol=0, atol=1e-12)
    assert np.allclose(np.diag(H), potential(0.3 + es.sites[:, 0] * GOLDEN), atol=1e-12)


def test_hopping_pattern():
    H = build_hamiltonian(MarylandParams(0.07, (GOLDEN, SILVER), 0.3, tau=3.0), spatial_box(2, 2))
    off = H - np.diag(np.diag(H))
    assert np.allclose(off, off.T)
    assert set(np.unique(off)) <= {0.0, 0.07}
    # interior site has 2d neighbours, corners have d
    counts = (off != 0).sum(axis=1)
    assert counts.max() == 4 and counts.min() == 2


def test_singular_phase():
    with pytest.raises(SingularPhase):
        build_hamiltonian(MarylandParams(0.05, (GOLDEN,), 0.0), spatial_box(1, 3))


def test_symmetry_needs_centred_box():
    params = MarylandParams(0.05, (GOLDEN,), 0.3)
    with pytest.raises(AsymmetricBox):
        check_symmetry(params, spatial_box(1, 3, (1,)))
    assert check_symmetry(params, spatial_box(1, 8))["max_spectral_defect"] < 1e-12


def test_diophantine():
    assert diophantine_check([GOLDEN], 0.2, 2.0, 50)["holds"]
    bad = diophantine_check([1 / 3], 0.01, 2.0, 20)
    assert not bad["holds"]
    assert abs(bad["witness"][0]) % 3 == 0


def test_eigensystem_round_trip(small_eigsys):
    doc = small_eigsys.to_dict()
    back = EigenSystem.from_dict(doc)
    assert np.array_equal(back.phi, small_eigsys.phi)
    assert np.array_equal(back.mu, small_eigsys.mu)
    assert np.array_equal(back.sites, small_eigsys.sites)
    assert back.params == small_eigsys.params


def test_relabelled_eigenpairs(small_eigsys):
    H = small_eigsys.hamiltonian()
    assert small_eigsys.gram_defect() < 1e-12
    assert np.abs(H @ small_eigsys.phi - small_eigsys.phi * small_eigsys.mu).max() < 1e-10
    assert sorted(small_eigsys.centers.tolist()) == list(range(small_eigsys.size))


def test_diagonalizer_round_trip():
    est = MarylandDiagonalizer(eps=0.05, radius=5).fit()
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, est.n_features_in_))
    C = est.transform(X)
    assert np.allclose(est.inverse_transform(C), X, atol=1e-12)
    assert np.allclose(np.linalg.norm(C, axis=1), np.linalg.norm(X, axis=1))
    with pytest.raises(ValueError):
        est.transform(X[:, :-1])


def test_profile_is_decreasing():
    grid = np.linspace(0.05, 0.95, 15)
    prof = eigenvalue_profile(MarylandParams(0.02, (GOLDEN,), 0.3), 6, grid)
    assert np.all(np.diff(prof["E"][np.argsort(grid)]) < 0)
