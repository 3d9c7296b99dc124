import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lorschwarz.basis import build_basis, gauss_rule, gll_rule, lagrange_matrices
from lorschwarz.oracles import gll_points


def test_gll_low_degrees():
    x, w = gll_rule(1)
    np.testing.assert_allclose(x, [0, 1])
    np.testing.assert_allclose(w, [0.5, 0.5])
    x, w = gll_rule(2)
    np.testing.assert_allclose(x, [0, 0.5, 1], atol=1e-15)
    np.testing.assert_allclose(w, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)
    x, w = gll_rule(3)
    s = 1 / np.sqrt(5)
    np.testing.assert_allclose(x, [0, (1 - s) / 2, (1 + s) / 2, 1], atol=1e-15)
    np.testing.assert_allclose(w, [1 / 12, 5 / 12, 5 / 12, 1 / 12], atol=1e-15)


def test_gauss_low_orders():
    x, w = gauss_rule(1)
    np.testing.assert_allclose(x, [0.5])
    np.testing.assert_allclose(w, [1.0])
    x, w = gauss_rule(2)
    s = 1 / np.sqrt(3)
    np.testing.assert_allclose(x, [(1 - s) / 2, (1 + s) / 2], atol=1e-15)
    assert abs(np.dot(w, x**3) - 0.25) < 1e-15


@pytest.mark.parametrize("p", [1, 2, 5, 9, 16, 24, 32])
def test_gll_properties(p):
    x, w = gll_rule(p)
    np.testing.assert_allclose(x + x[::-1], 1.0, atol=1e-14)
    assert abs(w.sum() - 1) < 1e-14
    assert np.all(np.diff(x) > 0)
    np.testing.assert_allclose(x, gll_points(p), atol=1e-13)
    if p > 1:
        # interior nodes are roots of P_p'
        t = 2 * x[1:-1] - 1
        dP = np.polynomial.legendre.legder(np.eye(p + 1)[p])
        assert np.max(np.abs(np.polynomial.legendre.legval(t, dP))) < 1e-11 * p**2


@pytest.mark.parametrize("p", [1, 3, 8, 15])
def test_basis_matrices(p):
    b = build_basis(p)
    assert abs(b.quad_weights.sum() - 1) < 1e-14
    np.testing.assert_allclose(b.B.sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(b.D.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(b.M1D, b.M1D.T, atol=1e-15)
    assert np.linalg.eigvalsh(b.M1D).min() > 0
    np.testing.assert_allclose(b.K1D.sum(axis=1), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(b.K1D).min() > -1e-12
    V, _ = lagrange_matrices(b.gll_nodes, b.gll_nodes)
    np.testing.assert_allclose(V, np.eye(p + 1), atol=1e-13)


def test_linear_and_quadratic_1d_matrices():
    b = build_basis(1)
    np.testing.assert_allclose(b.K1D, [[1, -1], [-1, 1]], atol=1e-15)
    np.testing.assert_allclose(b.M1D, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15)
    b = build_basis(2)
    np.testing.assert_allclose(b.M1D, np.array([[4, 2, -1], [2, 16, 2], [-1, 2, 4]]) / 30, atol=1e-15)


def test_gll_collocation_option():
    b = build_basis(4, "gll")
    np.testing.assert_allclose(b.B, np.eye(5), atol=1e-14)
    with pytest.raises(ValueError):
        build_basis(4, "simpson")


@settings(max_examples=30, deadline=None)
@given(p=st.integers(2, 12), seed=st.integers(0, 2**31))
def test_gauss_exact_to_2p_plus_1_and_gll_to_2p_minus_1(p, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(p + 1)
    exact = lambda k: 1.0 / (k + 1)
    # squared polynomial of degree 2p
    sq = np.polynomial.polynomial.polymul(c, c)
    ref = sum(a * exact(k) for k, a in enumerate(sq))
    xg, wg = gauss_rule(p + 1)
    assert abs(np.dot(wg, np.polynomial.polynomial.polyval(xg, sq)) - ref) < 1e-11 * (1 + abs(ref))
    xl, wl = gll_rule(p)
    assert all(abs(np.dot(wl, xl**k) - exact(k)) < 1e-12 for k in range(2 * p))
    # degree 2p witness: GLL integrates the squared shifted Legendre polynomial as 1/p, not 1/(2p+1)
    L = np.polynomial.legendre.Legendre.basis(p, domain=[0, 1])
    assert abs(np.dot(wl, L(xl) ** 2) - 1 / p) < 1e-12
    assert abs(np.dot(wg, L(xg) ** 2) - 1 / (2 * p + 1)) < 1e-12
