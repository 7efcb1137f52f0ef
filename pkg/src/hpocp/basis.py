"""Quadrature rules, Lagrange bases and Legendre transforms on [-1, 1].

Every other module builds on these primitives.  Rules are returned on the
canonical interval; callers own the affine maps to physical cells.
"""
from dataclasses import dataclass

import numpy as np

_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a Legendre-family rule on [-1, 1].

    ``kind`` is one of ``"LG"``, ``"LGL"`` or ``"fLGR"``.
    """

    kind: str
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.nodes)


def legendre(n, x):
    """Evaluate P_n and P_n' at ``x`` by the three-term recurrence.

    Returns
    -------
    p, dp : ndarray
        Values and first derivatives, same shape as ``x``.
    """
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    dp0 = np.zeros_like(x)
    if n == 0:
        return p0, dp0
    p1 = x.copy()
    dp1 = np.ones_like(x)
    for k in range(1, n):
        p2 = ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
        dp2 = dp0 + (2 * k + 1) * p1
        p0, p1 = p1, p2
        dp0, dp1 = dp1, dp2
    return p1, dp1


def _newton(fun, x, tol=_NEWTON_TOL):
    for _ in range(_NEWTON_MAXIT):
        f, df = fun(x)
        dx = f / df
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    return x


def _lg(n):
    # Chebyshev-Gauss points as starting guesses
    x = -np.cos(np.pi * (np.arange(n) + 0.5) / n)
    x = _newton(lambda s: legendre(n, s), x)
    x = 0.5 * (x - x[::-1])  # enforce symmetry
    _, dp = legendre(n, x)
    w = 2.0 / ((1.0 - x**2) * dp**2)
    return x, w


def _lgl(n):
    if n == 2:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    m = n - 1
    x = -np.cos(np.pi * np.arange(1, m) / m)

    def fun(s):
        p, dp = legendre(m, s)
        # Legendre ODE gives the second derivative
        d2p = (2 * s * dp - m * (m + 1) * p) / (1 - s**2)
        return dp, d2p

    x = _newton(fun, x)
    x = np.concatenate(([-1.0], 0.5 * (x - x[::-1]), [1.0]))
    p, _ = legendre(m, x)
    w = 2.0 / (m * n * p**2)
    return x, w


def _lgr(n):
    """Standard Radau rule including -1 (roots of P_{n-1} + P_n)."""
    if n == 1:
        return np.array([-1.0]), np.array([2.0])
    x = -np.cos(2 * np.pi * np.arange(1, n) / (2 * n - 1))

    def fun(s):
        pa, dpa = legendre(n - 1, s)
        pb, dpb = legendre(n, s)
        return pa + pb, dpa + dpb

    x = np.concatenate(([-1.0], _newton(fun, x)))
    p, _ = legendre(n - 1, x)
    w = (1.0 - x) / (n**2 * p**2)
    w[0] = 2.0 / n**2
    return x, w


def gauss_nodes(kind, n):
    """Return an ``n``-point Legendre-family quadrature rule on [-1, 1].

    Parameters
    ----------
    kind : {"LG", "LGL", "fLGR"}
        Gauss, Gauss-Lobatto, or flipped Gauss-Radau (includes +1, excludes -1).
    n : int
        Number of nodes.

    Raises
    ------
    ValueError
        For unknown kinds, ``n < 1`` or ``n < 2`` with LGL.
    """
    n = int(n)
    if kind == "LG":
        if n < 1:
            raise ValueError("LG rule needs n >= 1")
        x, w = _lg(n)
    elif kind == "LGL":
        if n < 2:
            raise ValueError("LGL rule needs n >= 2")
        x, w = _lgl(n)
    elif kind == "fLGR":
        if n < 1:
            raise ValueError("fLGR rule needs n >= 1")
        x, w = _lgr(n)
        x, w = -x[::-1], w[::-1]
    else:
        raise ValueError(f"unknown quadrature kind {kind!r}")
    return QuadratureRule(kind, np.ascontiguousarray(x), np.ascontiguousarray(w))


def barycentric_weights(support):
    support = np.asarray(support, dtype=float)
    diff = support[:, None] - support[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValueError("support points must be distinct")
    # scale-free product to avoid overflow at high degree
    scale = np.ptp(support) / 4.0 if len(support) > 1 else 1.0
    return 1.0 / np.prod(diff / scale, axis=1)


def _nodal_diff(support, wb):
    n = len(support)
    diff = support[:, None] - support[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (wb[None, :] / wb[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d  # d[m, i] = phi_i'(support[m])


def _values(support, wb, points):
    diff = points[:, None] - support[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    hit = exact.any(axis=1)
    terms = wb[None, :] / diff[~hit]
    vals = np.empty(diff.shape)
    vals[~hit] = terms / terms.sum(axis=1, keepdims=True)
    vals[hit] = exact[hit].astype(float)
    return vals  # (n_points, n_support)


def lagrange_eval(support, points):
    """Lagrange basis values and derivatives at ``points``.

    Returns
    -------
    values : ndarray, shape (len(support), len(points))
        ``values[i, j]`` is basis function ``i`` evaluated at ``points[j]``.
    derivs : ndarray, shape (len(support), len(points))
        Derivatives with respect to the support coordinate.
    """
    support = np.asarray(support, dtype=float)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    wb = barycentric_weights(support)
    vals = _values(support, wb, points)
    # derivative of the interpolant is reproduced exactly by the nodal
    # differentiation matrix, which is stable near the nodes
    ders = vals @ _nodal_diff(support, wb)
    return vals.T, ders.T


def diff_matrix(support, eval_points):
    """Differentiation matrix ``D[k, i] = d phi_i / ds`` at ``eval_points[k]``."""
    return lagrange_eval(support, eval_points)[1].T


def interp_matrix(support, eval_points):
    """Interpolation matrix ``L[k, i] = phi_i(eval_points[k])``."""
    return lagrange_eval(support, eval_points)[0].T


def legendre_vandermonde(degree, points):
    """Matrix whose column ``j`` is P_j at ``points`` (``len(points) == degree + 1``)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 1 or len(points) != degree + 1:
        raise ValueError(
            f"need exactly degree+1={degree + 1} points, got {points.shape}"
        )
    v = np.empty((degree + 1, degree + 1))
    p0 = np.ones_like(points)
    v[:, 0] = p0
    if degree >= 1:
        p1 = points.copy()
        v[:, 1] = p1
        for k in range(1, degree):
            p0, p1 = p1, ((2 * k + 1) * points * p1 - k * p0) / (k + 1)
            v[:, k + 1] = p1
    return v


def monomial_coefficients(support):
    """Power-basis coefficients of each Lagrange polynomial.

    Returns ``a`` with ``a[l, i]`` the coefficient of ``s**l`` in basis
    function ``i``; rows run from the constant term upward.
    """
    support = np.asarray(support, dtype=float)
    n = len(support)
    a = np.empty((n, n))
    for i in range(n):
        roots = np.delete(support, i)
        q = np.poly(roots)[::-1] if n > 1 else np.array([1.0])
        a[:, i] = q / np.prod(support[i] - roots)
    return a
