"""Implicit residual error estimation in space (per element) and time (per interval).

Each cell gets a local simulation problem for an error function one degree
richer than the discrete solution.  Element problems integrate the original
nonlinear PDE in weak form over the element for all time columns at once;
interval problems integrate the semi-discrete ODE system over the interval on
a fresh set of ``n + 1`` flipped Radau points.  Both are solved by damped
Newton with analytic Jacobians.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import diff_matrix, gauss_nodes, interp_matrix, lagrange_eval
from .spatial import assemble, local_support, project_source
from .temporal import build_temporal, interval_support

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50
NEWTON_HALVINGS = 30


@dataclass
class ElementResidual:
    k: int
    x_support: np.ndarray  # LGL points of the element (p + 2)
    E: np.ndarray  # (p + 2) x (N_t + 1) error coefficients
    eta: float
    converged: bool = True
    iterations: int = 0
    quad: tuple = field(default=None, repr=False)  # (Psi at LG points, weights)
    chi: np.ndarray = field(default=None, repr=False)


@dataclass
class IntervalResidual:
    j: int
    s_support: np.ndarray  # -1 followed by n + 1 fLGR points
    E: np.ndarray  # N_x x (n + 2) error coefficients
    eta: float
    converged: bool = True
    iterations: int = 0
    chi: np.ndarray = field(default=None, repr=False)


@dataclass
class ErrorReport:
    eta_x: np.ndarray
    eta_t: np.ndarray
    elements: list = field(repr=False)
    intervals: list = field(repr=False)
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def eta_x_max(self):
        return float(np.max(self.eta_x))

    @property
    def eta_t_max(self):
        return float(np.max(self.eta_t))

    def to_dict(self):
        return {
            "eta_x": self.eta_x.tolist(),
            "eta_t": self.eta_t.tolist(),
            "warnings": list(self.warnings),
        }


def _newton(fun, x0, tol=NEWTON_TOL, max_iter=NEWTON_MAXIT, max_halvings=NEWTON_HALVINGS):
    """Damped Newton on ``fun(x) -> (r, J)``.

    At least one full step is taken so that tiny initial residuals still
    produce the error function rather than the zero guess.
    """
    x = x0.copy()
    r, J = fun(x)
    rn = np.max(np.abs(r), initial=0.0)
    for it in range(1, max_iter + 1):
        try:
            dx = spla.spsolve(sp.csc_matrix(J), -r)
        except RuntimeError:
            return x, False, it
        if not np.all(np.isfinite(dx)):
            return x, False, it
        alpha = 1.0
        for _ in range(max_halvings + 1):
            xt = x + alpha * dx
            rt, Jt = fun(xt)
            rtn = np.max(np.abs(rt), initial=0.0)
            if np.isfinite(rtn) and (rtn <= rn or rtn <= tol * 1e-3):
                break
            alpha *= 0.5
        else:
            return x, rn <= tol, it
        x, r, J, rn = xt, rt, Jt, rtn
        step = alpha * np.max(np.abs(dx), initial=0.0)
        if rn <= tol and step <= 1e-6 * np.max(np.abs(x), initial=0.0) + 1e-15:
            return x, True, it
        if rn <= tol and alpha == 1.0 and it >= 3:
            return x, True, it
    return x, rn <= tol, max_iter


class _Context:
    """Per-solution data shared by all residual problems."""

    def __init__(self, solution, problem):
        self.sol = solution
        self.problem = problem
        self.smesh = solution.smesh
        self.tmesh = solution.tmesh
        self.tops = build_temporal(self.tmesh)
        self.D = self.tops.D.tocsr()
        self.psi = self.tops.psi
        self.T = self.tops.T
        self.Tc = self.T[1:]
        # Newton tolerances are relative to the size of the discrete state
        self.newton_tol = NEWTON_TOL * max(1.0, float(np.max(np.abs(solution.Y), initial=0.0)))
        self._sops = None

    @property
    def sops(self):
        if self._sops is None:
            self._sops = assemble(self.smesh)
        return self._sops

    def element_state(self, k, r):
        """y_h and its x-derivative at local coordinates ``r`` of element ``k``."""
        sm = self.smesh
        p = int(sm.degrees[k])
        phi, dphi = lagrange_eval(local_support(p), r)
        Yk = self.sol.Y[sm.element_dofs(k)]
        return phi.T @ Yk, (dphi.T @ Yk) / sm.widths[k]


# -- spatial -----------------------------------------------------------------

def _element_end_gradients(ctx):
    """One-sided x-derivatives at the left and right end of every element."""
    K = ctx.smesh.n_elements
    left = np.empty((K, len(ctx.T)))
    right = np.empty((K, len(ctx.T)))
    for k in range(K):
        _, dy = ctx.element_state(k, np.array([0.0, 1.0]))
        left[k], right[k] = dy[0], dy[1]
    return left, right


def solve_element_residual(k, solution, problem, meshes=None, _ctx=None, _ends=None):
    """Solve the element residual problem on element ``k``.

    Returns
    -------
    ElementResidual
        Error coefficients on the element's LGL support and the relative
        indicator; ``eta`` is ``inf`` when Newton fails.
    """
    ctx = _ctx or _Context(solution, problem)
    sm = ctx.smesh
    pr = problem
    if not 0 <= k < sm.n_elements:
        raise ValueError(f"element {k} out of range")
    left_g, right_g = _ends if _ends is not None else _element_end_gradients(ctx)
    p = int(sm.degrees[k])
    P = p + 2
    a, h = sm.boundaries[k], sm.widths[k]
    K = sm.n_elements
    nt = len(ctx.Tc)

    lgl = gauss_nodes("LGL", P)
    r_sup = 0.5 * (lgl.nodes + 1.0)
    x_sup = a + h * r_sup
    quad = gauss_nodes("LG", 2 * (p + 1))
    r_q = 0.5 * (quad.nodes + 1.0)
    x_q = a + h * r_q
    w = 0.5 * h * quad.weights
    Pq, Pr = lagrange_eval(r_sup, r_q)
    Pxq = Pr / h
    yq, yxq = ctx.element_state(k, r_q)
    ysup, yxsup = ctx.element_state(k, r_sup)
    fq = np.broadcast_to(np.asarray(pr.source(x_q[:, None], ctx.Tc[None, :]), dtype=float), (len(r_q), nt))
    if not np.all(np.isfinite(fq)):
        raise FloatingPointError("non-finite source term in element residual")
    wf = Pq @ (w[:, None] * fq)

    E0 = np.asarray(pr.initial_condition(x_sup), dtype=float) * np.ones(P) - ysup[:, 0]
    y_left, y_right = ysup[0, 1:], ysup[-1, 1:]
    g_left = None if k == 0 else 0.5 * (right_g[k - 1, 1:] + left_g[k, 1:])
    g_right = None if k == K - 1 else 0.5 * (right_g[k, 1:] + left_g[k + 1, 1:])
    U1, U2 = ctx.sol.U1, ctx.sol.U2
    dir_left = k == 0 and pr.near.is_dirichlet
    dir_right = k == K - 1 and pr.far.is_dirichlet

    Dc = ctx.D.tocoo()
    keep = Dc.col >= 1
    d_r, d_c, d_v = Dc.row[keep], Dc.col[keep] - 1, Dc.data[keep] / ctx.psi[Dc.row[keep]]
    ii = np.arange(P)

    def fun(u):
        E = np.empty((P, nt + 1))
        E[:, 0] = E0
        E[:, 1:] = u.reshape(nt, P).T
        yb = yq + Pq.T @ E
        yxb = yxq + Pxq.T @ E
        ydot = (ctx.D @ yb.T).T / ctx.psi
        yc, yxc = yb[:, 1:], yxb[:, 1:]
        th1 = pr.theta.d1(yc)
        be1 = pr.beta.d1(yc)
        al1 = pr.alpha.d1(yc)
        R = Pq @ (w[:, None] * (th1 * ydot + be1 * yxc)) + Pxq @ (w[:, None] * (al1 * yxc)) - wf
        # Jacobian blocks
        a1 = pr.theta.d2(yc) * ydot + pr.beta.d2(yc) * yxc
        a3 = pr.alpha.d2(yc) * yxc
        Bd = (
            np.einsum("l,il,jl,lc->cij", w, Pq, Pq, a1)
            + np.einsum("l,il,jl,lc->cij", w, Pq, Pxq, be1)
            + np.einsum("l,il,jl,lc->cij", w, Pxq, Pq, a3)
            + np.einsum("l,il,jl,lc->cij", w, Pxq, Pxq, al1)
        )
        Mth = np.einsum("l,il,jl,lc->cij", w, Pq, Pq, th1)
        # boundary terms
        el, er = y_left + E[0, 1:], y_right + E[-1, 1:]
        if k == 0:
            if not dir_left:
                R[0] += pr.near.value(el, U1, ctx.Tc)
                Bd[:, 0, 0] += pr.near.d_y(el, U1, ctx.Tc)
        else:
            R[0] += pr.alpha.d1(el) * g_left
            Bd[:, 0, 0] += pr.alpha.d2(el) * g_left
        if k == K - 1:
            if not dir_right:
                R[-1] -= pr.far.value(er, U2, ctx.Tc)
                Bd[:, -1, -1] -= pr.far.d_y(er, U2, ctx.Tc)
        else:
            R[-1] -= pr.alpha.d1(er) * g_right
            Bd[:, -1, -1] -= pr.alpha.d2(er) * g_right
        br = np.concatenate([np.arange(nt), d_r])
        bc = np.concatenate([np.arange(nt), d_c])
        shape = (len(br), P, P)
        rows = np.broadcast_to(br[:, None, None] * P + ii[None, :, None], shape).ravel()
        cols = np.broadcast_to(bc[:, None, None] * P + ii[None, None, :], shape).ravel()
        vals = np.concatenate([Bd.ravel(), (d_v[:, None, None] * Mth[d_r]).ravel()])
        fixed = []
        if dir_left:
            R[0] = E[0, 1:] - (pr.near.value(y_left, U1, ctx.Tc) - y_left)
            fixed.append(0)
        if dir_right:
            R[-1] = E[-1, 1:] - (pr.far.value(y_right, U2, ctx.Tc) - y_right)
            fixed.append(P - 1)
        if fixed:
            fr = np.concatenate([np.arange(nt) * P + i for i in fixed])
            drop = np.isin(rows, fr)
            rows = np.concatenate([rows[~drop], fr])
            cols = np.concatenate([cols[~drop], fr])
            vals = np.concatenate([vals[~drop], np.ones(len(fr))])
        J = sp.coo_matrix((vals, (rows, cols)), shape=(P * nt, P * nt)).tocsc()
        if not np.all(np.isfinite(R)):
            R = np.full_like(R, np.inf)
        return R.T.ravel(), J

    u, ok, iters = _newton(fun, np.zeros(P * nt), tol=ctx.newton_tol)
    E = np.empty((P, nt + 1))
    E[:, 0] = E0
    E[:, 1:] = u.reshape(nt, P).T
    chi = 1.0 + np.maximum(np.abs(ysup).max(axis=0), np.abs(yxsup).max(axis=0))
    res = ElementResidual(k, x_sup, E, np.inf, ok, iters, (Pq, w), chi)
    res.eta = spatial_indicator(res, solution) if ok else np.inf
    return res


def spatial_indicator(residual, solution=None):
    """Max over time of the element L2 error norm divided by the relative scale."""
    Pq, w = residual.quad
    eq = Pq.T @ residual.E
    norms = np.sqrt(w @ eq**2)
    chi = np.ones(norms.shape) if residual.chi is None else residual.chi
    return float(np.max(norms / chi))


# -- temporal ----------------------------------------------------------------

def solve_interval_residual(j, solution, problem, meshes=None, _ctx=None):
    """Solve the interval residual problem on interval ``j``."""
    ctx = _ctx or _Context(solution, problem)
    tm = ctx.tmesh
    if not 0 <= j < tm.n_intervals:
        raise ValueError(f"interval {j} out of range")
    pr = problem
    sops = ctx.sops
    M, N, A = sops.M, sops.N, sops.A
    nx = ctx.smesh.n_x
    n = int(tm.degrees[j])
    off = tm.offsets[j]
    psi = tm.psi(j)
    s_new = gauss_nodes("fLGR", n + 1)
    s_sup = np.concatenate(([-1.0], s_new.nodes))
    Dh = diff_matrix(s_sup, s_new.nodes)  # (n+1) x (n+2)
    nlp_sup = interval_support(n)
    L = interp_matrix(nlp_sup, s_sup)
    Ls = diff_matrix(nlp_sup, s_sup)
    Yj = ctx.sol.Y[:, off:off + n + 1]
    Yfull = Yj @ L.T  # N_x x (n+2)
    Ysfull = Yj @ Ls.T
    Lu = interp_matrix(gauss_nodes("fLGR", n).nodes, s_new.nodes)
    U1 = Lu @ ctx.sol.U1[off:off + n]
    U2 = Lu @ ctx.sol.U2[off:off + n]
    t_new = tm.time_of(j, s_new.nodes)
    F = project_source(ctx.smesh, pr.source, t_new, ops=sops)
    m = n + 1
    dir_n, dir_f = pr.near.is_dirichlet, pr.far.is_dirichlet

    def fun(u):
        E = np.zeros((nx, m + 1))
        E[:, 1:] = u.reshape(m, nx).T
        Yb = Yfull + E
        Yc = Yb[:, 1:]
        Yd = Yb @ Dh.T
        th1 = pr.theta.d1(Yc)
        R = M @ (th1 * Yd) + psi * (N @ pr.beta(Yc) + A @ pr.alpha(Yc) - F)
        dgn = np.zeros(m)
        dgf = np.zeros(m)
        if not dir_n:
            R[0] += psi * pr.near.value(Yc[0], U1, t_new)
            dgn = psi * pr.near.d_y(Yc[0], U1, t_new)
        if not dir_f:
            R[-1] -= psi * pr.far.value(Yc[-1], U2, t_new)
            dgf = -psi * pr.far.d_y(Yc[-1], U2, t_new)
        th2 = pr.theta.d2(Yc) * Yd
        be1 = pr.beta.d1(Yc)
        al1 = pr.alpha.d1(Yc)
        blocks = [[None] * m for _ in range(m)]
        for c in range(m):
            Mt = M @ sp.diags(th1[:, c])
            for cp in range(m):
                blk = Dh[c, cp + 1] * Mt
                if c == cp:
                    bd = np.zeros(nx)
                    bd[0] += dgn[c]
                    bd[-1] += dgf[c]
                    blk = blk + M @ sp.diags(th2[:, c]) + psi * (N @ sp.diags(be1[:, c]) + A @ sp.diags(al1[:, c])) + sp.diags(bd)
                blocks[c][cp] = blk
        J = sp.bmat(blocks, format="lil")
        fixed = []
        if dir_n:
            R[0] = E[0, 1:] - (pr.near.value(Yfull[0, 1:], U1, t_new) - Yfull[0, 1:])
            fixed.append(0)
        if dir_f:
            R[-1] = E[-1, 1:] - (pr.far.value(Yfull[-1, 1:], U2, t_new) - Yfull[-1, 1:])
            fixed.append(nx - 1)
        for i in fixed:
            for c in range(m):
                r = c * nx + i
                J.rows[r] = [r]
                J.data[r] = [1.0]
        if not np.all(np.isfinite(R)):
            R = np.full_like(R, np.inf)
        return R.T.ravel(), J.tocsc()

    u, ok, iters = _newton(fun, np.zeros(nx * m), tol=ctx.newton_tol)
    E = np.zeros((nx, m + 1))
    E[:, 1:] = u.reshape(m, nx).T
    chi = 1.0 + np.maximum(np.abs(Yfull).max(axis=1), np.abs(Ysfull / psi).max(axis=1))
    res = IntervalResidual(j, s_sup, E, np.inf, ok, iters, chi)
    res.psi = psi
    res.weights = s_new.weights
    res.eta = temporal_indicator(res, solution) if ok else np.inf
    return res


def temporal_indicator(residual, solution=None):
    """Max over spatial rows of the interval L2 error norm divided by the relative scale."""
    E = residual.E
    w = getattr(residual, "weights", None)
    if w is None:
        w = gauss_nodes("fLGR", E.shape[1] - 1).weights
    psi = getattr(residual, "psi", None)
    if psi is None:
        psi = solution.tmesh.psi(residual.j)
    norms = np.sqrt(psi * (E[:, 1:] ** 2 @ w))
    chi = np.ones(norms.shape) if residual.chi is None else residual.chi
    return float(np.max(norms / chi))


# -- driver --------------------------------------------------------------------

def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def estimate_all(solution, problem, meshes=None, threads=1):
    """Run every element problem, then every interval problem.

    Failed cell problems are reported with an infinite indicator and a
    warning instead of aborting the estimate.
    """
    ctx = _Context(solution, problem)
    warnings = []
    timings = {}
    t0 = time.perf_counter()
    ends = _element_end_gradients(ctx)

    def do_el(k):
        try:
            return solve_element_residual(k, solution, problem, _ctx=ctx, _ends=ends)
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            return ElementResidual(k, np.empty(0), np.empty((0, 0)), np.inf, False, 0), str(exc)

    def do_iv(j):
        try:
            return solve_interval_residual(j, solution, problem, _ctx=ctx)
        except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
            return IntervalResidual(j, np.empty(0), np.empty((0, 0)), np.inf, False, 0), str(exc)

    elements = []
    for r in _map(do_el, range(ctx.smesh.n_elements), threads):
        if isinstance(r, tuple):
            r, why = r
            warnings.append(f"element {r.k}: {why}")
        elif not r.converged:
            warnings.append(f"element {r.k}: Newton did not converge")
        elements.append(r)
    timings["estimate_x"] = time.perf_counter() - t0
    t1 = time.perf_counter()
    intervals = []
    for r in _map(do_iv, range(ctx.tmesh.n_intervals), threads):
        if isinstance(r, tuple):
            r, why = r
            warnings.append(f"interval {r.j}: {why}")
        elif not r.converged:
            warnings.append(f"interval {r.j}: Newton did not converge")
        intervals.append(r)
    timings["estimate_t"] = time.perf_counter() - t1
    for w_ in warnings:
        log.warning(w_)
    return ErrorReport(
        np.array([e.eta for e in elements]),
        np.array([i.eta for i in intervals]),
        elements,
        intervals,
        warnings,
        timings,
    )
