import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maryland_nls import (Coeffs, OverlapTensor, Region, ResonantSet, enumerate_region,
                          linearized_operator, nonlinear_term, residual)
from maryland_nls.exceptions import BlockTooSmall
from maryland_nls.nonlinear import diagonal_part, direct_nonlinear_term


def _random_coeffs(rng, b, radius, S, density=0.5):
    u = Coeffs.zeros(b, radius, S)
    mask = rng.random(u.values.shape) < density
    u.values[mask] = (rng.standard_normal(mask.sum()) + 1j * rng.standard_normal(mask.sum())) * 0.3
    return u


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=10, deadline=None)
def test_fft_matches_direct_convolution(small_eigsys, seed):
    rng = np.random.default_rng(seed)
    u = _random_coeffs(rng, 1, 1, small_eigsys.size, density=0.2)
    fast = nonlinear_term(u, small_eigsys, 1)
    slow = direct_nonlinear_term(u, OverlapTensor(small_eigsys, 1))
    assert np.abs(fast.values - slow.values).max() <= 1e-12 * max(1.0, np.abs(slow.values).max())


def test_conjugate_sector_flip(small_eigsys):
    rng = np.random.default_rng(1)
    for b in (1, 2):
        u = _random_coeffs(rng, b, 1, small_eigsys.size)
        W = nonlinear_term(u, small_eigsys, 1)
        Wt = nonlinear_term(u, small_eigsys, 1, conjugate=True)
        assert np.allclose(Wt.values, W.conj_sector(), rtol=0, atol=1e-12)


def test_block_too_small_and_truncation(small_eigsys):
    u = _random_coeffs(np.random.default_rng(2), 1, 2, small_eigsys.size)
    with pytest.raises(BlockTooSmall):
        nonlinear_term(u, small_eigsys, 1, target_radius=3)
    full = nonlinear_term(u, small_eigsys, 1)
    cut = nonlinear_term(u, small_eigsys, 1, target_radius=3, on_small="truncate")
    assert cut.radius == 3
    assert np.isclose(cut.norm() ** 2 + cut.tail_norm ** 2, full.norm() ** 2)


def test_coeffs_resize_round_trip():
    u = _random_coeffs(np.random.default_rng(3), 2, 2, 4)
    assert np.array_equal(u.resized(4).resized(2).values, u.values)
    assert u.get((5, 0), 0) == 0
    with pytest.raises(IndexError):
        u.set((3, 0), 0, 1.0)


def test_resonant_set_validation():
    with pytest.raises(ValueError):
        ResonantSet([(0,), (0,)], [1.2, 1.3])
    with pytest.raises(ValueError):
        ResonantSet([(0,)], [2.5])
    with pytest.raises(ValueError):
        ResonantSet([(0,)], [1.2 + 0.1j])
    with pytest.raises(ValueError):
        ResonantSet([(0,), (1,)], [1.2])
    rs = ResonantSet([(0,), (2,)], [1.2, 1.5])
    assert rs.b == 2
    assert rs.excluded() == {(1, (-1, 0), (0,)), (-1, (1, 0), (0,)),
                             (1, (0, -1), (2,)), (-1, (0, 1), (2,))}


def test_linearized_operator_is_diagonal_without_coupling(small_eigsys):
    modes = enumerate_region(Region.rect((0, 0), (2, 4)), 1)
    u = ResonantSet([(0,)], [1.3]).initial(small_eigsys)
    T = linearized_operator(u, small_eigsys, [small_eigsys.mu_at(0)], 0.25, modes, 1, 0.0)
    assert np.array_equal(T, np.diag(diagonal_part(modes, small_eigsys, [small_eigsys.mu_at(0)], 0.25)))


def test_linearized_operator_self_adjoint_structure(small_eigsys):
    modes = enumerate_region(Region.rect((0, 0), (2, 4)), 1)
    u = _random_coeffs(np.random.default_rng(4), 1, 1, small_eigsys.size)
    T = linearized_operator(u, small_eigsys, [0.7], 0.1, modes, 1, 0.05)
    K = len(modes) // 2
    # ++ and -- blocks are Hermitian in their own right
    assert np.allclose(T[:K, :K], T[:K, :K].conj().T, atol=1e-12)
    assert np.allclose(T[K:, K:], T[K:, K:].conj().T, atol=1e-12)


def test_residual_zero_for_anchor_at_delta_zero(small_eigsys):
    rs = ResonantSet([(0,)], [1.3])
    u = rs.initial(small_eigsys)
    res = residual(u, small_eigsys, [small_eigsys.mu_at(0)], 0.0, 1, rs)
    assert res.norm == 0.0
