import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp, mpf, sqrt as mpsqrt

from oscint.calculus import (COMPLEX, SYMPLECTIC, SpectralBasis, ac_symbol,
                             apply_ac, apply_bc_inv, bc_inv_symbol, make_state,
                             rotate_fast, semigroup_jac, state_norm)


def random_state(rng, basis, batch=()):
    shape = batch + (2, basis.size)
    w = rng.standard_normal(shape)
    if basis.j_action == COMPLEX:
        w = w + 1j * rng.standard_normal(shape)
    return w


@pytest.fixture(params=[COMPLEX, SYMPLECTIC])
def basis(request):
    lam = np.array([0.0, 1.0, 4.0, 9.0, 100.0, 2500.0])
    if request.param == SYMPLECTIC:
        lam = np.concatenate((lam, lam))
    return SpectralBasis(lam, request.param)


class TestSymbols:
    def test_ac_zero_eigenvalue(self):
        assert ac_symbol(0.0, 5.0) == 0.0

    def test_ac_direct_value(self):
        assert ac_symbol(3.0, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_ac_large_c_matches_extended_precision(self):
        mp.dps = 50
        lam, c = mpf(2), mpf(10) ** 6
        oracle = float(c * lam / (mpsqrt(lam + c * c) + c))
        val = ac_symbol(2.0, 1e6)
        assert val == pytest.approx(oracle, rel=1e-15)
        assert val == pytest.approx(1.0 - 1.25e-13, rel=1e-15)
        assert abs(val - 1.0) <= 1e-12

    @pytest.mark.parametrize("lam,c", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
    def test_domain_errors(self, lam, c):
        with pytest.raises(ValueError):
            ac_symbol(lam, c)
        with pytest.raises(ValueError):
            bc_inv_symbol(lam, c)

    def test_symbol_bounds_on_random_grid(self):
        rng = np.random.default_rng(0)
        lam = rng.uniform(0.0, 1e6, 10_000)
        c = 10.0 ** rng.uniform(0.0, 8.0, 10_000)
        a = ac_symbol(lam, c)
        assert np.all(a >= 0)
        assert np.all(a <= lam / 2)
        b = bc_inv_symbol(lam, c)
        assert np.all(b <= 1.0) and np.all(b > 0)


class TestBasis:
    def test_rejects_negative_eigenvalues(self):
        with pytest.raises(ValueError):
            SpectralBasis([1.0, -0.5])

    def test_symplectic_pairs_must_match(self):
        with pytest.raises(ValueError):
            SpectralBasis([1.0, 2.0], SYMPLECTIC)
        with pytest.raises(ValueError):
            SpectralBasis([1.0, 1.0, 1.0], SYMPLECTIC)

    def test_j_squares_to_minus_identity(self, basis):
        rng = np.random.default_rng(1)
        x = random_state(rng, basis)[0]
        np.testing.assert_array_equal(basis.apply_j(basis.apply_j(x)), -x)

    def test_j_is_skew_isometry(self, basis):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, y = random_state(rng, basis)
            Jx, Jy = basis.apply_j(x), basis.apply_j(y)
            assert np.linalg.norm(Jx) == pytest.approx(np.linalg.norm(x), rel=1e-15)
            # real inner product <Jx, y> = -<x, Jy>
            lhs = np.real(np.vdot(Jx, y))
            rhs = -np.real(np.vdot(x, Jy))
            assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_symplectic_matrix_convention(self):
        b = SpectralBasis([0.0, 0.0], SYMPLECTIC)
        np.testing.assert_array_equal(b.apply_j(np.array([1.0, 0.0])), [0.0, -1.0])
        np.testing.assert_array_equal(b.apply_j(np.array([0.0, 1.0])), [1.0, 0.0])

    def test_size_mismatch(self, basis):
        w = np.zeros((2, basis.size + 1))
        for op in (apply_bc_inv, apply_ac):
            with pytest.raises(ValueError):
                op(w, basis, 1.0)
        with pytest.raises(ValueError):
            semigroup_jac(w, 1.0, basis, 1.0)

    def test_make_state_and_norm(self):
        w = make_state(np.array([3.0]), np.array([4.0]))
        assert w.shape == (2, 1)
        assert state_norm(w) == 5.0
        with pytest.raises(ValueError):
            make_state(np.zeros(2), np.zeros(3))


class TestOperators:
    def test_bc_inv_identity_for_zero_spectrum(self):
        b = SpectralBasis(np.zeros(3))
        w = random_state(np.random.default_rng(3), b)
        np.testing.assert_array_equal(apply_bc_inv(w, b, 7.0), w)

    def test_bc_inv_single_mode(self):
        b = SpectralBasis([3.0])
        w = make_state(np.array([2.0 + 0j]), np.array([2.0 + 0j]))
        np.testing.assert_allclose(apply_bc_inv(w, b, 1.0), 1.0, rtol=1e-15)

    def test_bc_inv_contracts(self, basis):
        w = random_state(np.random.default_rng(4), basis, (50,))
        assert np.all(state_norm(apply_bc_inv(w, basis, 3.0)) <= state_norm(w))

    def test_ac_zero_spectrum(self):
        b = SpectralBasis(np.zeros(4))
        w = random_state(np.random.default_rng(5), b)
        np.testing.assert_array_equal(apply_ac(w, b, 2.0), 0)

    def test_ac_single_mode(self):
        b = SpectralBasis([3.0])
        w = make_state(np.array([1.0 + 0j]), np.array([1.0 + 0j]))
        np.testing.assert_allclose(apply_ac(w, b, 1.0), 1.0, rtol=1e-15)

    def test_ac_bound(self, basis):
        w = random_state(np.random.default_rng(6), basis, (30,))
        scale = np.sqrt(1.0 + basis.eigenvalues ** 2)
        for c in (1.0, 10.0, 1e4):
            assert np.all(state_norm(apply_ac(w, basis, c))
                          <= 0.5 * state_norm(w * scale) * (1 + 1e-14))


class TestRotations:
    def test_rotate_zero_and_full_turns(self, basis):
        w = random_state(np.random.default_rng(7), basis)
        np.testing.assert_array_equal(rotate_fast(w, 0.0, basis), w)
        for j in (1, 2, 5):
            np.testing.assert_allclose(rotate_fast(w, 2 * np.pi * j, basis), w,
                                       atol=1e-14 * j)

    def test_quarter_turn(self, basis):
        w = random_state(np.random.default_rng(8), basis)
        r = rotate_fast(w, np.pi / 2, basis)
        np.testing.assert_allclose(r[0], basis.apply_j(w[0]), atol=1e-15)
        np.testing.assert_allclose(r[1], -basis.apply_j(w[1]), atol=1e-15)

    def test_semigroup_identity_cases(self, basis):
        w = random_state(np.random.default_rng(9), basis)
        np.testing.assert_array_equal(semigroup_jac(w, 0.0, basis, 3.0), w)
        flat = SpectralBasis(np.zeros(basis.size), basis.j_action)
        np.testing.assert_array_equal(semigroup_jac(w, 17.0, flat, 3.0), w)

    def test_semigroup_isometry(self, basis):
        rng = np.random.default_rng(10)
        w = random_state(rng, basis, (1000,))
        n0 = state_norm(w)
        for t in (0.1, 1.0, 10.0):
            for c in (1.0, 1e2, 1e4):
                n1 = state_norm(semigroup_jac(w, t, basis, c))
                assert np.max(np.abs(n1 - n0) / n0) <= 1e-12

    def test_commutes_with_bc_inv(self, basis):
        w = random_state(np.random.default_rng(11), basis, (20,))
        for c in (1.0, 30.0):
            a = semigroup_jac(apply_bc_inv(w, basis, c), 0.7, basis, c)
            b = apply_bc_inv(semigroup_jac(w, 0.7, basis, c), basis, c)
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-14 * np.max(np.abs(w)))

    def test_group_law(self, basis):
        w = random_state(np.random.default_rng(12), basis, (20,))
        c = 5.0
        a = semigroup_jac(w, 1.3 + 0.4, basis, c)
        b = semigroup_jac(semigroup_jac(w, 1.3, basis, c), 0.4, basis, c)
        assert np.max(state_norm(a - b) / state_norm(w)) <= 1e-12

    def test_semigroup_lipschitz_bound(self, basis):
        w = random_state(np.random.default_rng(13), basis, (20,))
        scale = np.sqrt(1.0 + basis.eigenvalues ** 2)
        for t in (-0.3, 1e-3, 0.5, 2.0):
            for c in (1.0, 50.0):
                diff = state_norm(semigroup_jac(w, t, basis, c) - w)
                assert np.all(diff <= 0.5 * abs(t) * state_norm(w * scale) * (1 + 1e-12))

    def test_batch_times(self, basis):
        w = random_state(np.random.default_rng(14), basis)
        t = np.array([0.0, 0.5, 1.0])
        out = semigroup_jac(w, t, basis, 2.0)
        for k in range(3):
            np.testing.assert_allclose(out[k], semigroup_jac(w, t[k], basis, 2.0), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(lam=st.floats(0.0, 1e6), c=st.floats(1.0, 1e8),
       t=st.floats(-50.0, 50.0), s=st.floats(-50.0, 50.0))
def test_semigroup_properties(lam, c, t, s):
    b = SpectralBasis([lam, 0.5 * lam])
    rng = np.random.default_rng(0)
    w = random_state(rng, b)
    a = ac_symbol(lam, c)
    assert 0.0 <= a <= lam / 2
    direct = semigroup_jac(w, t + s, b, c)
    composed = semigroup_jac(semigroup_jac(w, t, b, c), s, b, c)
    # angle error of (t + s) a vs t a + s a is a few ulps of the angle
    tol = 1e-14 * (1.0 + (abs(t) + abs(s)) * a)
    assert state_norm(direct - composed) <= tol * state_norm(w)
    assert abs(state_norm(direct) - state_norm(w)) <= 1e-12 * state_norm(w)


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-100.0, 100.0))
def test_rotation_is_isometry(s):
    b = SpectralBasis([0.0, 1.0, 1.0, 0.0][:2] * 2, SYMPLECTIC)
    w = random_state(np.random.default_rng(1), b)
    r = rotate_fast(w, s, b)
    assert state_norm(r) == pytest.approx(state_norm(w), rel=1e-13)
    np.testing.assert_allclose(rotate_fast(r, -s, b), w, atol=1e-13)
