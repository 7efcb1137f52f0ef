"""Primal-dual interior-point solver for sparse NLPs.

Solves ``min f(z)`` subject to ``c_E(z) = 0``, ``c_I(z) <= 0`` and
``l <= z <= u``.  Inequality rows get slack variables ``s >= 0`` so that all
constraints are equalities ``c(x) = 0`` in the extended variable
``x = (z_free, s)``; fixed variables (``l == u``) are removed up front.

The Newton system is the regularized primal-dual KKT matrix

    [ W + Sigma + dw I     J^T  ] [dx]     [ grad phi_mu + J^T y ]
    [        J          -dc I   ] [y+] = - [        c            ]

factorized with SuperLU.  ``W`` is either the exact Lagrangian Hessian
from a callback or a compact limited-memory BFGS matrix, whose low-rank part
is handled with the Sherman-Morrison-Woodbury identity on top of the sparse
factorization.  Without a symmetric indefinite factorization there is no
inertia count, so regularization is driven by a curvature test on the
computed step instead.
"""
from dataclasses import dataclass, field
import logging
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
ACCEPTABLE = "acceptable"
MAX_ITER = "max-iter"
FAILED = "failed"

BOUND_INF = 1e19


@dataclass
class NlpSpec:
    """Callbacks and bounds describing an NLP.

    The first ``n_eq`` constraint rows are equalities, the remaining rows are
    inequalities ``c_i(z) <= 0``.  ``hessian(z, y, obj_factor)`` is optional and
    returns the sparse Hessian of ``obj_factor * f + y^T c``.
    """

    n: int
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable
    gradient: Callable
    constraints: Callable
    jacobian: Callable
    n_eq: int
    m: int
    hessian: Optional[Callable] = None

    def __post_init__(self):
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (self.n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (self.n,)).copy()
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")
        if not 0 <= self.n_eq <= self.m:
            raise ValueError("need 0 <= n_eq <= m")

    @classmethod
    def from_ocp(cls, ocp):
        lb, ub = ocp.bounds()
        return cls(ocp.n_z, lb, ub, ocp.objective, ocp.gradient, ocp.constraints,
                   ocp.jacobian, ocp.n_eq, ocp.m, ocp.hessian)


@dataclass
class SolverOptions:
    tol: float = 1e-12
    acceptable_tol: float = 1e-10
    acceptable_iter: int = 10
    max_iter: int = 500
    mu_init: float = 0.1
    kappa_eps: float = 10.0
    tau_min: float = 0.99
    bound_push: float = 1e-2
    hessian: str = "lbfgs"  # or "exact"
    lbfgs_memory: int = 10
    delta_w_init: float = 1e-8
    delta_w_max: float = 1e20
    curvature_kappa: float = 1e-10
    max_backtracks: int = 40
    print_level: int = 0

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        unknown = set(d or {}) - set(known)
        if unknown:
            raise ValueError(f"unknown solver options {sorted(unknown)}")
        return cls(**known)


@dataclass
class SolveResult:
    z: np.ndarray
    y: np.ndarray  # constraint multipliers, L = f + y^T c
    z_lower: np.ndarray
    z_upper: np.ndarray
    status: str
    kkt_error: float
    iterations: int
    objective: float
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    @property
    def success(self):
        return self.status in (OPTIMAL, ACCEPTABLE)


class _LBFGS:
    """Compact limited-memory BFGS model ``B = sigma I - U C^{-1} U^T`` of fixed size."""

    def __init__(self, n, memory):
        self.n = n
        self.memory = memory
        self.S = []
        self.Y = []
        self.sigma = 1.0

    def update(self, s, y):
        sy = s @ y
        if sy <= 1e-8 * np.sqrt((s @ s) * (y @ y)) or not np.isfinite(sy):
            return False
        self.S.append(s)
        self.Y.append(y)
        if len(self.S) > self.memory:
            self.S.pop(0)
            self.Y.pop(0)
        self.sigma = float(np.clip((y @ y) / sy, 1e-8, 1e8))
        return True

    def lowrank(self):
        """Return ``(U, Mid)`` with ``B = sigma I - U Mid^{-1} U^T`` (``U`` may be empty)."""
        k = len(self.S)
        if k == 0:
            return None, None
        S = np.array(self.S).T
        Y = np.array(self.Y).T
        SY = S.T @ Y
        L = np.tril(SY, -1)
        Dg = np.diag(np.diag(SY))
        U = np.hstack([self.sigma * S, Y])
        Mid = np.block([[self.sigma * (S.T @ S), L], [L.T, -Dg]])
        return U, Mid

    def matvec(self, v):
        U, Mid = self.lowrank()
        out = self.sigma * v
        if U is not None:
            out -= U @ np.linalg.solve(Mid, U.T @ v)
        return out


class _Problem:
    """Internal extended problem in x = (z_free, s) with scaled rows."""

    def __init__(self, spec, z0):
        self.spec = spec
        self.fixed = spec.lb == spec.ub
        self.free = np.nonzero(~self.fixed)[0]
        self.z_full = np.asarray(z0, dtype=float).copy()
        self.z_full[self.fixed] = spec.lb[self.fixed]
        self.nf = len(self.free)
        self.n_ineq = spec.m - spec.n_eq
        self.n = self.nf + self.n_ineq
        self.m = spec.m
        J0 = sp.csr_matrix(spec.jacobian(self.z_full))
        rowmax = np.zeros(self.m)
        if J0.nnz:
            rowmax = np.maximum.reduceat(np.abs(J0.data), J0.indptr[:-1]) * (np.diff(J0.indptr) > 0)
        self.row_scale = 1.0 / np.maximum(1.0, rowmax)
        lo = np.concatenate([spec.lb[self.free], np.zeros(self.n_ineq)])
        hi = np.concatenate([spec.ub[self.free], np.full(self.n_ineq, np.inf)])
        self.lo, self.hi = lo, hi
        # bounds at or beyond +-1e19 are treated as absent
        self.has_lo = lo > -BOUND_INF
        self.has_hi = hi < BOUND_INF

    def z_of(self, x):
        z = self.z_full.copy()
        z[self.free] = x[: self.nf]
        return z

    def f(self, x):
        return float(self.spec.objective(self.z_of(x)))

    def grad(self, x):
        g = np.asarray(self.spec.gradient(self.z_of(x)), dtype=float)
        return np.concatenate([g[self.free], np.zeros(self.n_ineq)])

    def c(self, x):
        c = np.asarray(self.spec.constraints(self.z_of(x)), dtype=float).copy()
        c[self.spec.n_eq:] += x[self.nf:]
        return c * self.row_scale

    def jac(self, x):
        J = sp.csc_matrix(self.spec.jacobian(self.z_of(x)))[:, self.free]
        if self.n_ineq:
            Is = sp.vstack([sp.csr_matrix((self.spec.n_eq, self.n_ineq)), sp.identity(self.n_ineq)])
            J = sp.hstack([J, Is])
        return sp.csr_matrix(sp.diags(self.row_scale) @ J)

    def hess(self, x, y, obj_factor=1.0):
        H = self.spec.hessian(self.z_of(x), y * self.row_scale, obj_factor)
        H = sp.csc_matrix(H)[self.free][:, self.free]
        if self.n_ineq:
            H = sp.block_diag([H, sp.csr_matrix((self.n_ineq, self.n_ineq))])
        return sp.csr_matrix(H)


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def _fraction_to_boundary(v, dv, tau):
    """Largest step in (0, 1] keeping ``v + a dv >= (1 - tau) v`` for ``v > 0``."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def _errors(P, x, y, zl, zu, g, J, c, mu):
    """Scaled dual infeasibility, primal infeasibility and complementarity."""
    s_max = 100.0
    nb = int(P.has_lo.sum() + P.has_hi.sum())
    s_d = max(s_max, (np.abs(y).sum() + np.abs(zl).sum() + np.abs(zu).sum()) / max(1, P.m + nb)) / s_max
    s_c = max(s_max, (np.abs(zl).sum() + np.abs(zu).sum()) / max(1, nb)) / s_max
    dual = g + J.T @ y - zl + zu
    e_d = np.max(np.abs(dual), initial=0.0) / s_d
    e_p = np.max(np.abs(c), initial=0.0)
    comp = np.concatenate([
        (x - P.lo)[P.has_lo] * zl[P.has_lo] - mu,
        (P.hi - x)[P.has_hi] * zu[P.has_hi] - mu,
    ])
    e_c = np.max(np.abs(comp), initial=0.0) / s_c
    return e_d, e_p, e_c


def kkt_error(spec, z, y, z_lower=None, z_upper=None):
    """Scaled max-norm KKT residual at ``(z, y, z_lower, z_upper)``.

    ``y`` follows the sign convention ``L = f + y^T c``; bound multipliers
    default to the values that best cancel the gradient on active sides.
    Inequality rows use slacks ``s = -c_I(z)``, which must be nonnegative for a
    feasible point.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    P = _Problem(spec, z)
    s = -np.asarray(spec.constraints(z), dtype=float)[spec.n_eq:]
    x = np.concatenate([z[P.free], np.maximum(s, 0.0)])
    ys = y / P.row_scale  # multipliers for the scaled rows
    g = P.grad(x)
    J = P.jac(x)
    c = P.c(x)
    c[spec.n_eq:] = np.asarray(spec.constraints(z))[spec.n_eq:] * P.row_scale[spec.n_eq:]
    c[spec.n_eq:] = np.maximum(c[spec.n_eq:], 0.0)
    r = g + J.T @ ys
    if z_lower is None or z_upper is None:
        zl = np.where(P.has_lo, np.maximum(r, 0.0), 0.0)
        zu = np.where(P.has_hi, np.maximum(-r, 0.0), 0.0)
        both = P.has_lo & P.has_hi
        # only one side can be active at a time
        closer_lo = (x - P.lo) <= (P.hi - x)
        zl[both & ~closer_lo] = 0.0
        zu[both & closer_lo] = 0.0
    else:
        zl = np.concatenate([np.asarray(z_lower)[P.free], np.zeros(P.n_ineq)])
        zu = np.concatenate([np.asarray(z_upper)[P.free], np.zeros(P.n_ineq)])
        zl[P.nf:] = np.maximum(ys[spec.n_eq:], 0.0)
    return float(max(_errors(P, x, ys, zl, zu, g, J, c, 0.0)))


class _KKTSolver:
    def __init__(self, P, opts):
        self.P = P
        self.opts = opts
        self.last_dw = 0.0

    def factor(self, Wdiag_extra, J, W, dw, dc, lowrank):
        n, m = self.P.n, self.P.m
        top = W + sp.diags(Wdiag_extra + dw)
        K = sp.bmat([[top, J.T], [J, -dc * sp.identity(m)]], format="csc")
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                       options=dict(SymmetricMode=True))
        self.K = K
        self.lu = lu
        self.smw = None
        if lowrank is not None and lowrank[0] is not None:
            U, Mid = lowrank
            Ut = np.vstack([U, np.zeros((m, U.shape[1]))])
            KU = lu.solve(Ut)
            # (K0 - Ut Mid^{-1} Ut^T)^{-1} via Sherman-Morrison-Woodbury
            cap = Mid - Ut.T @ KU
            self.smw = (Ut, KU, np.linalg.inv(cap))
        return K

    def solve(self, rhs):
        sol = self.lu.solve(rhs)
        if self.smw is not None:
            Ut, KU, capinv = self.smw
            sol = sol + KU @ (capinv @ (Ut.T @ sol))
        return sol


def solve(spec, z0, options=None):
    """Solve the NLP from the starting point ``z0``.

    Parameters
    ----------
    spec : NlpSpec
    z0 : ndarray
        Starting point; it is pushed strictly inside the bounds.
    options : SolverOptions or dict, optional

    Returns
    -------
    SolveResult
    """
    if options is None:
        opts = SolverOptions()
    elif isinstance(options, dict):
        opts = SolverOptions.from_dict(options)
    else:
        opts = options
    if opts.tol <= 0:
        raise ValueError("tol must be positive")
    if opts.hessian not in ("lbfgs", "exact"):
        raise ValueError(f"unknown hessian option {opts.hessian!r}")
    if opts.hessian == "exact" and spec.hessian is None:
        raise ValueError("exact Hessian requested but no hessian callback given")
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (spec.n,) or not np.all(np.isfinite(z0)):
        raise ValueError("z0 must be a finite vector of length n")
    try:
        return _solve(spec, z0, opts)
    except FloatingPointError as exc:
        return SolveResult(z0.copy(), np.zeros(spec.m), np.zeros(spec.n), np.zeros(spec.n),
                           FAILED, np.inf, 0, np.nan, f"evaluation error: {exc}")


def _push_inside(x, lo, hi, has_lo, has_hi, k1):
    x = x.copy()
    span = np.where(has_lo & has_hi, hi - lo, np.inf)
    pl = np.minimum(k1 * np.maximum(1.0, np.abs(lo)), 0.5 * k1 * span)
    pu = np.minimum(k1 * np.maximum(1.0, np.abs(hi)), 0.5 * k1 * span)
    with np.errstate(invalid="ignore"):
        lo_p = np.where(has_lo, lo + pl, -np.inf)
        hi_p = np.where(has_hi, hi - pu, np.inf)
    return np.clip(x, lo_p, hi_p)


def _solve(spec, z0, opts):
    P = _Problem(spec, z0)
    n, m, nf = P.n, P.m, P.nf
    lo, hi, has_lo, has_hi = P.lo, P.hi, P.has_lo, P.has_hi
    s0 = -np.asarray(spec.constraints(P.z_full), dtype=float)[spec.n_eq:]
    x = np.concatenate([P.z_full[P.free], np.maximum(s0, 1e-2)])
    x = _push_inside(x, lo, hi, has_lo, has_hi, opts.bound_push)

    mu = opts.mu_init
    zl = np.where(has_lo, 1.0, 0.0)
    zu = np.where(has_hi, 1.0, 0.0)
    f = P.f(x)
    g = P.grad(x)
    c = P.c(x)
    J = P.jac(x)
    if not _finite(f, g, c, J.data):
        raise FloatingPointError("non-finite callback at the starting point")

    # least-squares multiplier estimate
    y = np.zeros(m)
    try:
        K0 = sp.bmat([[sp.identity(n), J.T], [J, None]], format="csc")
        w = spla.spsolve(K0, np.concatenate([-(g - zl + zu), np.zeros(m)]))
        if np.all(np.isfinite(w)) and np.max(np.abs(w[n:]), initial=0.0) < 1e3:
            y = w[n:]
    except (RuntimeError, ValueError):
        pass

    qn = _LBFGS(n, opts.lbfgs_memory) if opts.hessian == "lbfgs" else None
    kkt = _KKTSolver(P, opts)
    nu = 1e-6  # l1 penalty
    dw_last = 0.0
    n_acc = 0
    history = []
    status, msg = MAX_ITER, "iteration limit reached"
    tau = max(opts.tau_min, 1.0 - mu)

    def barrier_grad(x):
        bg = np.zeros(n)
        bg[has_lo] -= mu / (x - lo)[has_lo]
        bg[has_hi] += mu / (hi - x)[has_hi]
        return bg

    def barrier_val(x):
        return -mu * (np.log((x - lo)[has_lo]).sum() + np.log((hi - x)[has_hi]).sum())

    it = 0
    for it in range(opts.max_iter + 1):
        e_d, e_p, e_c = _errors(P, x, y, zl, zu, g, J, c, 0.0)
        err0 = max(e_d, e_p, e_c)
        history.append(dict(iter=it, objective=f, inf_pr=e_p, inf_du=e_d, mu=mu, error=err0))
        if opts.print_level:
            log.info("it %3d f=% .10e pr=%.2e du=%.2e co=%.2e mu=%.1e dw=%.1e",
                     it, f, e_p, e_d, e_c, mu, dw_last)
        if err0 <= opts.tol:
            status, msg = OPTIMAL, "converged"
            break
        if err0 <= opts.acceptable_tol:
            n_acc += 1
            if n_acc >= opts.acceptable_iter:
                status, msg = ACCEPTABLE, "converged to acceptable level"
                break
        else:
            n_acc = 0
        if it == opts.max_iter:
            break

        # barrier update
        while mu > opts.tol / 10 and max(_errors(P, x, y, zl, zu, g, J, c, mu)) <= opts.kappa_eps * mu:
            mu = max(opts.tol / 10, mu / 10)
            tau = max(opts.tau_min, 1.0 - mu)
            nu = 1e-6

        dl = np.where(has_lo, x - lo, 1.0)
        du = np.where(has_hi, hi - x, 1.0)
        sig = np.where(has_lo, zl / dl, 0.0) + np.where(has_hi, zu / du, 0.0)
        gphi = g + barrier_grad(x)
        rhs = -np.concatenate([gphi, c])

        if qn is not None:
            W = sp.csr_matrix((n, n))
            lowrank = qn.lowrank()
            base = sig + qn.sigma
        else:
            W = P.hess(x, y)
            lowrank = None
            base = sig

        # regularize until the factorization succeeds and the step has positive curvature
        dw, dc = 0.0, 0.0
        sol = None
        while True:
            try:
                kkt.factor(base, J, W, dw, dc, lowrank)
                sol = kkt.solve(rhs)
                if not np.all(np.isfinite(sol)):
                    raise RuntimeError("non-finite KKT solution")
            except (RuntimeError, np.linalg.LinAlgError):
                sol = None
                if dc == 0.0:
                    dc = 1e-8 * mu**0.25
                    continue
            if sol is not None:
                dx = sol[:n]
                if qn is None:
                    curv = dx @ (W @ dx) + dx @ ((base + dw) * dx)
                else:
                    curv = dx @ qn.matvec(dx) + dx @ ((sig + dw) * dx)
                if curv >= opts.curvature_kappa * (dx @ dx) or qn is not None:
                    break
            if dw == 0.0:
                dw = opts.delta_w_init if dw_last == 0.0 else max(opts.delta_w_init, dw_last / 3)
            else:
                dw *= 10.0
            if dw > opts.delta_w_max:
                sol = None
                break
        if sol is None:
            status, msg = FAILED, "KKT system singular after regularization"
            break
        dw_last = dw
        # one step of iterative refinement against the assembled matrix
        if qn is None:
            res = rhs - kkt.K @ sol
            sol = sol + kkt.solve(res)
        dx = sol[:n]
        y_new = sol[n:]
        dy = y_new - y
        dzl = np.where(has_lo, mu / dl - zl - zl / dl * dx, 0.0)
        dzu = np.where(has_hi, mu / du - zu + zu / du * dx, 0.0)

        # fraction to the boundary
        a_max = min(
            _fraction_to_boundary(dl[has_lo], dx[has_lo], tau),
            _fraction_to_boundary(du[has_hi], -dx[has_hi], tau),
        )
        a_z = min(
            _fraction_to_boundary(zl[has_lo], dzl[has_lo], tau),
            _fraction_to_boundary(zu[has_hi], dzu[has_hi], tau),
        )

        # l1 merit line search with one second-order correction
        phi0 = f + barrier_val(x)
        cn = np.abs(c).sum()
        if qn is None:
            curv = max(dx @ (W @ dx) + dx @ (sig * dx), 0.0)
        else:
            curv = max(dx @ qn.matvec(dx) + dx @ (sig * dx), 0.0)
        gd = gphi @ dx
        if cn > 0:
            nu_trial = (gd + 0.5 * curv) / (0.9 * cn)
            if nu < nu_trial:
                nu = nu_trial + 1e-6
        D = gd - nu * cn
        merit0 = phi0 + nu * cn
        alpha = a_max
        accepted = False
        x_new = None
        for k in range(opts.max_backtracks):
            xt = x + alpha * dx
            try:
                ft = P.f(xt)
                ct = P.c(xt)
                ok = _finite(ft, ct)
            except FloatingPointError:
                ok = False
            if ok:
                mt = ft + barrier_val(xt) + nu * np.abs(ct).sum()
                if mt <= merit0 + 1e-4 * alpha * D + 1e-14 * abs(merit0):
                    accepted = True
                    x_new, f_new, c_new = xt, ft, ct
                    break
                if k == 0 and np.abs(ct).sum() > 0.1 * cn:
                    # second-order correction of the full step
                    s2 = kkt.solve(np.concatenate([rhs[:n], -(alpha * c + ct)]))
                    dx2 = s2[:n]
                    a2 = min(
                        _fraction_to_boundary(dl[has_lo], dx2[has_lo], tau),
                        _fraction_to_boundary(du[has_hi], -dx2[has_hi], tau),
                    )
                    if a2 > 0.0:
                        dx2 = a2 * dx2
                        xs = x + dx2
                        try:
                            fs = P.f(xs)
                            cs = P.c(xs)
                            oks = _finite(fs, cs)
                        except FloatingPointError:
                            oks = False
                        if oks:
                            ms = fs + barrier_val(xs) + nu * np.abs(cs).sum()
                            if ms <= merit0 + 1e-4 * D + 1e-14 * abs(merit0):
                                accepted = True
                                x_new, f_new, c_new = xs, fs, cs
                                dx = dx2
                                y_new = y + a2 * (s2[n:] - y)
                                dy = y_new - y
                                alpha = 1.0
                                dzl = np.where(has_lo, mu / dl - zl - zl / dl * dx, 0.0)
                                dzu = np.where(has_hi, mu / du - zu + zu / du * dx, 0.0)
                                a_z = min(
                                    _fraction_to_boundary(zl[has_lo], dzl[has_lo], tau),
                                    _fraction_to_boundary(zu[has_hi], dzu[has_hi], tau),
                                )
                                break
            alpha *= 0.5
        if not accepted:
            if err0 <= opts.acceptable_tol:
                status, msg = ACCEPTABLE, "line search stalled at acceptable point"
                break
            # take a tiny step anyway to escape; count as failure if it persists
            if alpha * np.max(np.abs(dx), initial=0.0) < 1e-16 * max(1.0, np.max(np.abs(x))):
                status, msg = FAILED, "line search failed"
                break
            x_new = x + alpha * dx
            f_new, c_new = P.f(x_new), P.c(x_new)

        # accept step
        g_old_lag = g + J.T @ (y + alpha * dy) if qn is not None else None
        x_old = x
        x = x_new
        f, c = f_new, c_new
        y = y + alpha * dy
        zl = zl + a_z * dzl
        zu = zu + a_z * dzu
        g = P.grad(x)
        J = P.jac(x)
        if not _finite(g, J.data):
            status, msg = FAILED, "non-finite derivative"
            break
        # keep bound multipliers close to the barrier's primal estimate
        kap = 1e10
        dl = np.where(has_lo, x - lo, 1.0)
        du = np.where(has_hi, hi - x, 1.0)
        zl = np.where(has_lo, np.clip(zl, mu / (kap * dl), kap * mu / dl), 0.0)
        zu = np.where(has_hi, np.clip(zu, mu / (kap * du), kap * mu / du), 0.0)
        if qn is not None:
            qn.update(x - x_old, (g + J.T @ y) - g_old_lag)

    z = P.z_of(x)
    zl_full = np.zeros(spec.n)
    zu_full = np.zeros(spec.n)
    zl_full[P.free] = zl[:nf]
    zu_full[P.free] = zu[:nf]
    y_out = y * P.row_scale
    err = max(_errors(P, x, y, zl, zu, g, J, c, 0.0))
    if status == OPTIMAL and err > opts.tol:
        status = ACCEPTABLE if err <= opts.acceptable_tol else status
    return SolveResult(z, y_out, zl_full, zu_full, status, float(err), it, float(f), msg, history)
