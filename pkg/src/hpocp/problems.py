"""Optimal control problem template and the two built-in benchmarks.

The dynamics are written in conservation form

    d/dt theta(y) + d/dx beta(y) = d/dx(alpha'(y) d/dx y) + f(x, t),

so that theta(y) = c1*y, alpha(y) = c2*y recovers the constant-coefficient
parabolic equation and state-dependent mass or diffusion coefficients are
expressed through nonlinear theta and alpha.  Boundary data enters either
as a flux (the value of alpha'(y) dy/dx at the boundary) or as a prescribed
boundary value.
"""
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np


def _zeros(*args):
    return np.zeros(np.broadcast(*args).shape)


@dataclass(frozen=True)
class Transform:
    """Scalar state transform with its first two derivatives."""

    fn: Callable
    d1: Callable
    d2: Callable

    @classmethod
    def polynomial(cls, *coeffs):
        """Transform ``sum(coeffs[i] * y**i)``."""
        c = np.asarray(coeffs, dtype=float)
        p = np.polynomial.Polynomial(c)
        dp, d2p = p.deriv(1), p.deriv(2)
        return cls(
            lambda y: p(np.asarray(y, dtype=float)),
            lambda y: dp(np.asarray(y, dtype=float)) + 0.0 * np.asarray(y, dtype=float),
            lambda y: d2p(np.asarray(y, dtype=float)) + 0.0 * np.asarray(y, dtype=float),
        )

    @classmethod
    def zero(cls):
        return cls.polynomial(0.0)

    def __call__(self, y):
        return self.fn(y)


@dataclass(frozen=True)
class BoundaryCondition:
    """Boundary data as a function of (boundary state, control, time).

    For ``kind="neumann"`` the callable returns the flux alpha'(y) dy/dx at
    the boundary.  For ``kind="dirichlet"`` it returns the prescribed state
    value and must not depend on the state argument.
    """

    kind: str
    value: Callable
    d_y: Callable
    d_u: Callable
    d_yy: Callable = _zeros
    d_yu: Callable = _zeros
    d_uu: Callable = _zeros

    @classmethod
    def affine_flux(cls, c_y=0.0, c_u=0.0, c_0=0.0):
        """Neumann flux ``c_y*y + c_u*u + c_0``."""
        return cls(
            "neumann",
            lambda y, u, t: c_y * np.asarray(y) + c_u * np.asarray(u) + c_0 + 0.0 * np.asarray(t),
            lambda y, u, t: np.full(np.broadcast(y, u, t).shape, float(c_y)),
            lambda y, u, t: np.full(np.broadcast(y, u, t).shape, float(c_u)),
        )

    @classmethod
    def dirichlet(cls, value, d_u=None, d_uu=None):
        """Prescribed boundary value ``value(u, t)``."""
        d_u = d_u or (lambda u, t: _zeros(u, t))
        d_uu = d_uu or (lambda u, t: _zeros(u, t))
        return cls(
            "dirichlet",
            lambda y, u, t: value(u, t) + 0.0 * np.asarray(y),
            lambda y, u, t: _zeros(y, u, t),
            lambda y, u, t: d_u(u, t) + 0.0 * np.asarray(y),
            _zeros,
            _zeros,
            lambda y, u, t: d_uu(u, t) + 0.0 * np.asarray(y),
        )

    @property
    def is_dirichlet(self):
        return self.kind == "dirichlet"


@dataclass(frozen=True)
class RunningCost:
    """Space-time integrand L(x, t, y) with y-derivatives."""

    value: Callable
    d_y: Callable
    d_yy: Callable

    @classmethod
    def tracking(cls, weight, target):
        """``weight/2 * (y - target)**2`` with a constant target."""
        return cls(
            lambda x, t, y: 0.5 * weight * (y - target) ** 2,
            lambda x, t, y: weight * (y - target),
            lambda x, t, y: np.full(np.broadcast(x, t, y).shape, float(weight)),
        )

    @classmethod
    def zero(cls):
        return cls(_zeros, _zeros, _zeros)


@dataclass(frozen=True)
class PointCost:
    """Time integrand P(t, u1, u2, y(x0, t), y(xf, t)).

    ``grad`` returns the four partials stacked along the first axis and
    ``hess`` the 4x4 second derivatives stacked along the first two axes,
    both in the argument order (u1, u2, y0, yf).
    """

    value: Callable
    grad: Callable
    hess: Callable

    @classmethod
    def quadratic(cls, w_u1=0.0, w_u2=0.0, w_yf=0.0, yf_target=None):
        """``(w_u1 u1^2 + w_u2 u2^2 + w_yf (yf - target(t))^2) / 2``."""
        target = yf_target or (lambda t: _zeros(t))

        def value(t, u1, u2, y0, yf):
            return 0.5 * (w_u1 * u1**2 + w_u2 * u2**2 + w_yf * (yf - target(t)) ** 2)

        def grad(t, u1, u2, y0, yf):
            z = _zeros(t, u1, u2, y0, yf)
            return np.stack([w_u1 * u1 + z, w_u2 * u2 + z, z, w_yf * (yf - target(t)) + z])

        def hess(t, u1, u2, y0, yf):
            z = _zeros(t, u1, u2, y0, yf)
            h = np.zeros((4, 4) + z.shape)
            h[0, 0] = w_u1
            h[1, 1] = w_u2
            h[3, 3] = w_yf
            return h

        return cls(value, grad, hess)


@dataclass(frozen=True)
class PathConstraint:
    """Pointwise inequality d(y, x, t, u1, u2) <= 0 at support x collocation points.

    Second derivatives default to zero, which is exact for constraints
    affine in (y, u1, u2).
    """

    value: Callable
    d_y: Callable
    d_u1: Callable
    d_u2: Callable
    d_yy: Callable = _zeros


@dataclass(frozen=True)
class ProblemDefinition:
    name: str
    x0: float
    xf: float
    t0: float
    tf: float
    theta: Transform
    beta: Transform
    alpha: Transform
    source: Callable
    near: BoundaryCondition
    far: BoundaryCondition
    initial_condition: Callable
    running_cost: RunningCost
    point_cost: PointCost
    u1_bounds: tuple = (-1e20, 1e20)
    u2_bounds: tuple = (-1e20, 1e20)
    path: Optional[PathConstraint] = None
    params: dict = field(default_factory=dict)
    initial_mesh: dict = field(default_factory=dict)

    def with_params(self, **kw):
        return replace(self, **kw)


def strong_residual(problem, y, y_t, y_x, y_xx, x, t):
    """Pointwise residual of the untransformed PDE; zero where it holds."""
    th, be, al = problem.theta, problem.beta, problem.alpha
    return (
        th.d1(y) * y_t
        + be.d1(y) * y_x
        - (al.d2(y) * y_x**2 + al.d1(y) * y_xx)
        - problem.source(x, t)
    )


def burgers(gamma=0.01, nu=0.1, u_min=-0.015, u_max=0.015, target=0.035):
    """Boundary control of viscous Burgers' equation on the unit square."""
    return ProblemDefinition(
        name="burgers",
        x0=0.0,
        xf=1.0,
        t0=0.0,
        tf=1.0,
        theta=Transform.polynomial(0.0, 1.0),
        beta=Transform.polynomial(0.0, 0.0, 0.5),
        alpha=Transform.polynomial(0.0, nu),
        source=lambda x, t: _zeros(x, t),
        near=BoundaryCondition.affine_flux(c_u=nu),
        far=BoundaryCondition.affine_flux(c_u=nu),
        initial_condition=lambda x: x**2 * (1.0 - x) ** 2,
        running_cost=RunningCost.tracking(1.0, target),
        point_cost=PointCost.quadratic(w_u1=gamma, w_u2=gamma),
        u1_bounds=(u_min, u_max),
        u2_bounds=(u_min, u_max),
        params=dict(gamma=gamma, nu=nu, u_min=u_min, u_max=u_max, target=target),
        initial_mesh=dict(n_intervals=2, n_points=6, n_elements=9, degree=2),
    )


def heat(a1=4.0, a2=1.0, a3=4.0, a4=-1.0, rho=-1.0, tf=0.5, gamma=1e-3, g=1.0,
         u_min=-1e20, u_max=0.1):
    """Boundary control of a nonlinear heat equation (probe heating in a kiln)."""
    pi2 = np.pi**2

    def source(x, t):
        e = np.exp(rho * t)
        c = np.cos(np.pi * x)
        return (
            (rho * (a1 + 2 * a2) + pi2 * (a3 + 2 * a4)) * e * c
            - a4 * pi2 * e**2
            + (2 * a4 * pi2 + rho * a2) * e**2 * c**2
        )

    def y_d(t):
        return 2.0 - np.exp(rho * np.asarray(t, dtype=float))

    return ProblemDefinition(
        name="heat",
        x0=0.0,
        xf=1.0,
        t0=0.0,
        tf=tf,
        theta=Transform.polynomial(0.0, a1, 0.5 * a2),
        beta=Transform.zero(),
        alpha=Transform.polynomial(0.0, a3, 0.5 * a4),
        source=source,
        near=BoundaryCondition.affine_flux(c_y=g, c_u=-g),
        far=BoundaryCondition.affine_flux(),
        initial_condition=lambda x: 2.0 + np.cos(np.pi * x),
        running_cost=RunningCost.zero(),
        point_cost=PointCost.quadratic(w_u1=gamma, w_yf=1.0, yf_target=y_d),
        u1_bounds=(u_min, u_max),
        u2_bounds=(0.0, 0.0),
        params=dict(a1=a1, a2=a2, a3=a3, a4=a4, rho=rho, tf=tf, gamma=gamma, g=g,
                    u_min=u_min, u_max=u_max),
        initial_mesh=dict(n_intervals=3, n_points=4, n_elements=9, degree=2),
    )


PROBLEMS = {"burgers": burgers, "heat": heat}


def get_problem(name, **overrides):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**overrides)
