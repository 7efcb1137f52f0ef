import numpy as np
import pytest

from hpocp.basis import (
    diff_matrix,
    gauss_nodes,
    interp_matrix,
    lagrange_eval,
    legendre_vandermonde,
    monomial_coefficients,
)

from oracles import EXACTNESS, check_flgr_oracle, check_quadrature, diff_matrix_check


def test_lg_single_node():
    rule = gauss_nodes("LG", 1)
    np.testing.assert_allclose(rule.nodes, [0.0], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [2.0], rtol=1e-15)


def test_flgr_two_nodes():
    rule = gauss_nodes("fLGR", 2)
    np.testing.assert_allclose(rule.nodes, [-1 / 3, 1.0], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [1.5, 0.5], atol=1e-15)


def test_lgl_three_nodes():
    rule = gauss_nodes("LGL", 3)
    np.testing.assert_allclose(rule.nodes, [-1.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(rule.weights, [1 / 3, 4 / 3, 1 / 3], atol=1e-15)


@pytest.mark.parametrize("kind", ["LG", "LGL", "fLGR"])
@pytest.mark.parametrize("n", [2, 3, 7, 16, 40])
def test_rule_invariants(kind, n):
    rule = gauss_nodes(kind, n)
    assert rule.kind == kind
    assert np.all(np.diff(rule.nodes) > 0)
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 2.0) <= 1e-13
    if kind == "LG":
        assert -1 < rule.nodes[0] and rule.nodes[-1] < 1
    elif kind == "LGL":
        assert rule.nodes[0] == -1.0 and rule.nodes[-1] == 1.0
    else:
        assert rule.nodes[0] > -1 and rule.nodes[-1] == 1.0


def test_quadrature_exactness_all_kinds():
    ok, detail = check_quadrature()
    assert ok, detail


def test_flgr_matches_bisected_lgr():
    ok, detail = check_flgr_oracle(n_max=25)
    assert ok, detail


def test_exactness_fails_one_degree_above():
    # sanity check on the exactness table itself
    for kind, deg in EXACTNESS.items():
        n = 4
        rule = gauss_nodes(kind, n)
        k = deg(n) + 1
        if k % 2 == 1:
            k += 1
        assert abs(rule.weights @ rule.nodes**k - 2.0 / (k + 1)) > 1e-6


@pytest.mark.parametrize("kind,n", [("LG", 0), ("fLGR", 0), ("LGL", 1), ("LGL", 0), ("XX", 3)])
def test_invalid_rule_arguments(kind, n):
    with pytest.raises(ValueError):
        gauss_nodes(kind, n)


def test_lagrange_linear_values():
    v, d = lagrange_eval([0.0, 1.0], [0.25])
    np.testing.assert_allclose(v[:, 0], [0.75, 0.25], atol=1e-15)
    _, d = lagrange_eval([0.0, 1.0], [0.5])
    np.testing.assert_allclose(d[:, 0], [-1.0, 1.0], atol=1e-15)


def test_lagrange_isolation_and_partition_of_unity():
    support = np.array([0.0, 0.5, 1.0])
    v, _ = lagrange_eval(support, [0.0])
    np.testing.assert_array_equal(v[:, 0], [1.0, 0.0, 0.0])
    sup = gauss_nodes("LGL", 9).nodes
    v, d = lagrange_eval(sup, sup)
    np.testing.assert_allclose(v, np.eye(9), atol=1e-14)
    pts = np.linspace(-1, 1, 37)
    v, d = lagrange_eval(sup, pts)
    assert np.abs(v.sum(axis=0) - 1.0).max() <= 1e-12
    assert np.abs(d.sum(axis=0)).max() <= 1e-11


def test_duplicate_support_rejected():
    with pytest.raises(ValueError):
        lagrange_eval([0.0, 0.0, 1.0], [0.5])
    with pytest.raises(ValueError):
        diff_matrix([0.0, 1.0, 1.0], [0.5])


def test_diff_matrix_linear():
    np.testing.assert_allclose(diff_matrix([-1.0, 1.0], [1.0]), [[-0.5, 0.5]], atol=1e-15)


def test_diff_matrix_rows_sum_to_zero():
    sup = np.concatenate(([-1.0], gauss_nodes("fLGR", 2).nodes))
    D = diff_matrix(sup, gauss_nodes("fLGR", 2).nodes)
    assert D.shape == (2, 3)
    assert np.abs(D.sum(axis=1)).max() <= 1e-12


@pytest.mark.parametrize("n", [1, 3, 6, 10, 14])
def test_diff_matrix_monomial_exactness(n):
    sup = np.concatenate(([-1.0], gauss_nodes("fLGR", n).nodes))
    for deg in range(1, n + 1):
        assert diff_matrix_check(sup, deg) <= 1e-11


def test_interp_matrix_reproduces_polynomials():
    sup = gauss_nodes("LGL", 6).nodes
    pts = np.linspace(-1, 1, 11)
    L = interp_matrix(sup, pts)
    np.testing.assert_allclose(L @ sup**5, pts**5, atol=1e-13)


def test_legendre_vandermonde_examples():
    np.testing.assert_allclose(legendre_vandermonde(1, [-1.0, 1.0]), [[1, -1], [1, 1]])
    V = legendre_vandermonde(2, [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(V[1], [1.0, 0.0, -0.5])
    pts = np.array([-0.7, 0.1, 0.9])
    a = np.linalg.solve(legendre_vandermonde(2, pts), 0.5 * (3 * pts**2 - 1))
    np.testing.assert_allclose(a, [0, 0, 1], atol=1e-14)
    with pytest.raises(ValueError):
        legendre_vandermonde(3, [0.0, 1.0])


def test_legendre_round_trip():
    sup = gauss_nodes("LGL", 8).nodes
    c = np.random.default_rng(0).standard_normal(8)
    vals = np.polynomial.polynomial.polyval(sup, c)
    a = np.linalg.solve(legendre_vandermonde(7, sup), vals)
    pts = np.linspace(-1, 1, 21)
    back = np.polynomial.legendre.legval(pts, a)
    np.testing.assert_allclose(back, np.polynomial.polynomial.polyval(pts, c), atol=1e-11)


def test_monomial_coefficients():
    sup = np.array([0.0, 0.5, 1.0])
    a = monomial_coefficients(sup)
    vals = np.array([1.0, 2.0, 5.0])
    coeffs = a @ vals  # constant term first
    np.testing.assert_allclose(np.polynomial.polynomial.polyval(sup, coeffs), vals, atol=1e-14)
