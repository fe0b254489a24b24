"""Polynomial expert bases: ordering, values, gradients, conditioning."""

import numpy as np
import pytest

from polyspline import PolyBasis


def test_degree_zero_is_constant_one():
    basis = PolyBasis(0, dim=1)
    v, g = basis.eval(np.array([0.1, 0.9]))
    np.testing.assert_allclose(v, 1.0, atol=1e-15)
    np.testing.assert_allclose(g, 0.0, atol=1e-15)
    basis2 = PolyBasis(0, dim=2)
    v, g = basis2.eval(np.array([[0.3, 0.7]]))
    np.testing.assert_allclose(v, 1.0, atol=1e-15)
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_term_counts():
    assert PolyBasis(6, 1).n_terms == 7
    assert PolyBasis(1, 2).n_terms == 3
    assert PolyBasis(2, 2).n_terms == 6
    assert PolyBasis(6, 2).n_terms == 28


def test_graded_lex_ordering_2d():
    assert PolyBasis(2, 2).exponents == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_linear_2d_values_recover_coordinates():
    """B=1, d=2 at (0.5, 0.25): after inverting the affine scaling of the
    degree-1 terms, the basis row reads (1, x, y)."""
    basis = PolyBasis(1, dim=2)
    v, _ = basis.eval(np.array([[0.5, 0.25]]))
    # terms are (0,0), (1,0), (0,1); degree-1 shifted Legendre is 2u - 1
    np.testing.assert_allclose(v[0, 0], 1.0, atol=1e-15)
    np.testing.assert_allclose((v[0, 1] + 1.0) / 2.0, 0.5, atol=1e-15)
    np.testing.assert_allclose((v[0, 2] + 1.0) / 2.0, 0.25, atol=1e-15)


def test_power_rule_via_monomial_conversion():
    """Express x^2 in the basis and check its derivative at 0.3 is 0.6."""
    basis = PolyBasis(2, dim=1)
    M = basis.monomial_matrix()
    coords = np.linalg.solve(M.T, np.array([0.0, 0.0, 1.0]))
    v, g = basis.eval(np.array([0.3]))
    assert coords @ v[0] == pytest.approx(0.09, abs=1e-14)
    assert coords @ g[0, :, 0] == pytest.approx(0.6, abs=1e-13)


def test_monomial_matrix_reproduces_values():
    rng = np.random.default_rng(3)
    basis = PolyBasis(6, dim=1)
    M = basis.monomial_matrix()
    x = rng.uniform(0, 1, size=40)
    v, _ = basis.eval(x)
    powers = x[:, None] ** np.arange(7)[None, :]
    np.testing.assert_allclose(v, powers @ M.T, atol=1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(17)
    step = 1e-6
    for dim in (1, 2):
        basis = PolyBasis(4, dim=dim)
        x = rng.uniform(0.05, 0.95, size=(20, dim))
        _, g = basis.eval(x)
        for axis in range(dim):
            dp, dm = x.copy(), x.copy()
            dp[:, axis] += step
            dm[:, axis] -= step
            fd = (basis.eval(dp)[0] - basis.eval(dm)[0]) / (2 * step)
            np.testing.assert_allclose(g[:, :, axis], fd, rtol=1e-5, atol=1e-7)


def test_hessian_matches_finite_differences_of_gradient():
    rng = np.random.default_rng(23)
    step = 1e-6
    basis = PolyBasis(3, dim=2)
    x = rng.uniform(0.05, 0.95, size=(10, 2))
    _, _, h = basis.eval(x, hessian=True)
    for axis in range(2):
        dp, dm = x.copy(), x.copy()
        dp[:, axis] += step
        dm[:, axis] -= step
        fd = (basis.eval(dp)[1] - basis.eval(dm)[1]) / (2 * step)
        np.testing.assert_allclose(h[:, :, :, axis], fd, rtol=1e-4, atol=1e-5)


def test_gram_conditioning_up_to_degree_six():
    """Shifted-Legendre Gram on [0,1] is diag(1/(2k+1)): condition number
    2B+1 = 13 at B=6 (the monomial Gram is ~5e8 there)."""
    basis = PolyBasis(6, dim=1)
    gram = basis.gram_matrix()
    assert np.linalg.cond(gram) == pytest.approx(13.0, rel=1e-12)
    # cross-check the closed form against quadrature
    from polyspline import gauss_legendre

    xi, wi = gauss_legendre(8)
    x = (xi + 1) / 2
    v, _ = basis.eval(x)
    gram_q = (v * (wi / 2)[:, None]).T @ v
    np.testing.assert_allclose(gram_q, gram, atol=1e-14)


def test_chebyshev_interpolation_roundtrip():
    """Interpolating a polynomial at Chebyshev points in this basis
    reproduces it to 1e-10 on a dense grid."""
    rng = np.random.default_rng(8)
    for degree in (2, 4, 6):
        basis = PolyBasis(degree, dim=1)
        mono = rng.uniform(-1, 1, size=degree + 1)
        nodes = 0.5 + 0.5 * np.cos(np.pi * (2 * np.arange(degree + 1) + 1) / (2 * degree + 2))
        target = np.polynomial.polynomial.polyval(nodes, mono)
        v, _ = basis.eval(nodes)
        coords = np.linalg.solve(v, target)
        dense = np.linspace(0, 1, 200)
        vd, _ = basis.eval(dense)
        np.testing.assert_allclose(
            vd @ coords, np.polynomial.polynomial.polyval(dense, mono), atol=1e-10
        )
