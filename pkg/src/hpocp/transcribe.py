"""Full transcription of the control problem into a sparse NLP.

Decision vector layout (fixed): the state coefficient matrix ``Y`` of shape
``N_x x (N_t + 1)`` stored column by column (column 0 is the noncollocated
initial time), then the ``N_t`` values of ``u1``, then ``u2``.

Constraint rows: the dynamics residual ordered collocation point by
collocation point (``N_x`` rows each), then ``N_x`` initial-condition rows,
then optional path-constraint rows (same ordering as the dynamics).
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .spatial import assemble, eval_matrices, project_source
from .temporal import build_temporal, control_interp_matrix, state_interp_matrix


@dataclass(frozen=True)
class DecisionLayout:
    n_x: int
    n_t: int

    @property
    def n_y(self):
        return self.n_x * (self.n_t + 1)

    @property
    def n_z(self):
        return self.n_y + 2 * self.n_t

    @property
    def u1(self):
        return slice(self.n_y, self.n_y + self.n_t)

    @property
    def u2(self):
        return slice(self.n_y + self.n_t, self.n_z)

    def y_index(self, i, c):
        return c * self.n_x + i

    def pack(self, Y, U1, U2):
        return np.concatenate((np.asarray(Y, dtype=float).T.ravel(), U1, U2))

    def unpack(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_z,):
            raise ValueError(f"expected decision vector of length {self.n_z}, got {z.shape}")
        Y = z[: self.n_y].reshape(self.n_t + 1, self.n_x).T
        return Y, z[self.u1], z[self.u2]


class _Pattern:
    """Constant sparsity pattern assembled from a list of (row, col) entries."""

    def __init__(self, rows, cols, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        key = rows * shape[1] + cols
        uniq, self.inverse = np.unique(key, return_inverse=True)
        self.shape = shape
        self.indices = (uniq % shape[1]).astype(np.int32)
        r = uniq // shape[1]
        self.indptr = np.concatenate(([0], np.cumsum(np.bincount(r, minlength=shape[0])))).astype(np.int32)
        self.nnz = len(uniq)

    def build(self, vals):
        data = np.bincount(self.inverse, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


@dataclass
class Solution:
    """Unpacked NLP solution on a pair of meshes."""

    Y: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    T: np.ndarray
    objective: float
    smesh: object
    tmesh: object
    z: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_x(self):
        return self.Y.shape[0]

    @property
    def n_t(self):
        return len(self.U1)


class DiscreteOCP:
    """Objective, constraints and analytic derivatives of the transcribed problem."""

    def __init__(self, problem, smesh, tmesh):
        self.problem = problem
        self.smesh = smesh
        self.tmesh = tmesh
        self.sops = sops = assemble(smesh)
        self.tops = tops = build_temporal(tmesh)
        nx, nt = smesh.n_x, tmesh.n_t
        self.layout = lay = DecisionLayout(nx, nt)
        self.T = tops.T
        self.Tc = tops.T[1:]
        self.psi = tops.psi
        self.qw = tops.psi * tops.omega  # time quadrature weights
        self.x = smesh.support_points
        self.F = project_source(smesh, problem.source, self.Tc, ops=sops)
        self.q0 = np.asarray(problem.initial_condition(self.x), dtype=float) * np.ones(nx)
        self.n_dyn = nx * nt
        self.has_path = problem.path is not None
        self.n_path = nx * nt if self.has_path else 0
        self.n_eq = self.n_dyn + nx
        self.m = self.n_eq + self.n_path
        self.dir_near = problem.near.is_dirichlet
        self.dir_far = problem.far.is_dirichlet
        self._build_jacobian_pattern()
        self._build_hessian_pattern()

    # -- helpers ---------------------------------------------------------
    @property
    def n_z(self):
        return self.layout.n_z

    def bounds(self):
        lay = self.layout
        lb = np.full(lay.n_z, -np.inf)
        ub = np.full(lay.n_z, np.inf)
        lb[lay.u1], ub[lay.u1] = self.problem.u1_bounds
        lb[lay.u2], ub[lay.u2] = self.problem.u2_bounds
        lb[lb <= -1e19] = -np.inf
        ub[ub >= 1e19] = np.inf
        return lb, ub

    def constraint_bounds(self):
        """Row bounds: equality rows are zero, path rows are ``<= 0``."""
        cl = np.zeros(self.m)
        cu = np.zeros(self.m)
        cl[self.n_eq:] = -np.inf
        return cl, cu

    def _keep_mask(self):
        """Dynamics rows that keep the weak-form terms (not replaced by Dirichlet data)."""
        nx, nt = self.layout.n_x, self.layout.n_t
        keep = np.ones((nt, nx), dtype=bool)
        if self.dir_near:
            keep[:, 0] = False
        if self.dir_far:
            keep[:, -1] = False
        return keep.ravel()

    # -- jacobian structure ------------------------------------------------
    def _build_jacobian_pattern(self):
        lay = self.layout
        nx, nt = lay.n_x, lay.n_t
        D = self.tops.D.tocoo()
        M = self.sops.M.tocoo()
        keep = self._keep_mask()
        # mass term kron(D, M): rows c'*nx + i, cols c*nx + k
        r = (D.row[:, None] * nx + M.row[None, :]).ravel()
        c = (D.col[:, None] * nx + M.col[None, :]).ravel()
        v = (D.data[:, None] * M.data[None, :]).ravel()
        sel = keep[r]
        self._jm = (r[sel], c[sel], v[sel])
        jj = np.arange(nt)

        def kron_psi(B):
            B = B.tocoo()
            rr = (jj[:, None] * nx + B.row[None, :]).ravel()
            cc = ((jj[:, None] + 1) * nx + B.col[None, :]).ravel()
            vv = (self.psi[:, None] * B.data[None, :]).ravel()
            s = keep[rr]
            return rr[s], cc[s], vv[s]

        self._jn = kron_psi(self.sops.N)
        self._ja = kron_psi(self.sops.A)
        rows = [self._jm[0], self._jn[0], self._ja[0]]
        cols = [self._jm[1], self._jn[1], self._ja[1]]
        # boundary rows: (y_b, u) columns
        self._rn = jj * nx
        self._rf = jj * nx + nx - 1
        self._cyn = (jj + 1) * nx
        self._cyf = (jj + 1) * nx + nx - 1
        self._cun = lay.n_y + jj
        self._cuf = lay.n_y + nt + jj
        rows += [self._rn, self._rn, self._rf, self._rf]
        cols += [self._cyn, self._cun, self._cyf, self._cuf]
        # initial-condition rows
        rows.append(self.n_dyn + np.arange(nx))
        cols.append(np.arange(nx))
        if self.has_path:
            rp = self.n_eq + np.arange(nx * nt)
            cy = nx + np.arange(nx * nt)
            cu1 = lay.n_y + np.repeat(jj, nx)
            cu2 = cu1 + nt
            self._jp = (rp, cy, cu1, cu2)
            rows += [rp, rp, rp]
            cols += [cy, cu1, cu2]
        self._jpat = _Pattern(np.concatenate(rows), np.concatenate(cols), (self.m, lay.n_z))

    def _build_hessian_pattern(self):
        lay = self.layout
        nx, nt = lay.n_x, lay.n_t
        # objective curvature block per collocated column: pattern of phi phi^T
        phi = self.sops.phi.tocsr()
        rows, cols, qs, vals = [], [], [], []
        for q in range(phi.shape[1]):
            col = phi[:, [q]].tocoo()
            i = col.row
            v = col.data
            rows.append(np.repeat(i, len(i)))
            cols.append(np.tile(i, len(i)))
            qs.append(np.full(len(i) ** 2, q))
            vals.append(np.outer(v, v).ravel() * self.sops.wq[q])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        key = rows * nx + cols
        uk, inv = np.unique(key, return_inverse=True)
        # S maps per-quadrature-point curvature to block entries
        self._hS = sp.csr_matrix(
            (np.concatenate(vals), (inv, np.concatenate(qs))), shape=(len(uk), phi.shape[1])
        )
        bi, bk = uk // nx, uk % nx
        jj = np.arange(nt)
        self._hblk = (
            ((jj[:, None] + 1) * nx + bi[None, :]).ravel(),
            ((jj[:, None] + 1) * nx + bk[None, :]).ravel(),
        )
        diag = np.arange(lay.n_y)
        # point cost and boundary flux couplings among (u1, u2, y0, yf)
        ids = np.stack([self._cun, self._cuf, self._cyn, self._cyf])  # 4 x nt
        self._hpt = (
            np.repeat(ids[:, None, :], 4, axis=1).ravel(),
            np.repeat(ids[None, :, :], 4, axis=0).ravel(),
        )
        self._hpat = _Pattern(
            np.concatenate([self._hblk[0], diag, self._hpt[0]]),
            np.concatenate([self._hblk[1], diag, self._hpt[1]]),
            (lay.n_z, lay.n_z),
        )

    # -- evaluation --------------------------------------------------------
    def _check(self, arr, what, Y=None):
        if not np.all(np.isfinite(arr)):
            msg = f"non-finite {what}"
            if Y is not None:
                bad = Y[~np.isfinite(arr)] if arr.shape == Y.shape else Y.ravel()[:1]
                msg += f" at state value {bad.ravel()[0]!r}"
            raise FloatingPointError(msg)
        return arr

    def _boundary_args(self, Y, U1, U2):
        return (Y[0, 1:], U1, self.Tc), (Y[-1, 1:], U2, self.Tc)

    def objective(self, z):
        Y, U1, U2 = self.layout.unpack(z)
        pr = self.problem
        Yq = self.sops.phi.T @ Y[:, 1:]
        L = pr.running_cost.value(self.sops.xq[:, None], self.Tc[None, :], Yq)
        I = self.sops.wq @ np.broadcast_to(L, Yq.shape)
        P = pr.point_cost.value(self.Tc, U1, U2, Y[0, 1:], Y[-1, 1:])
        val = float(self.qw @ (I + P))
        if not np.isfinite(val):
            raise FloatingPointError("non-finite objective")
        return val

    def gradient(self, z):
        lay = self.layout
        Y, U1, U2 = lay.unpack(z)
        pr = self.problem
        Yq = self.sops.phi.T @ Y[:, 1:]
        Ly = np.broadcast_to(pr.running_cost.d_y(self.sops.xq[:, None], self.Tc[None, :], Yq), Yq.shape)
        gY = np.zeros_like(Y)
        gY[:, 1:] = (self.sops.phi @ (self.sops.wq[:, None] * Ly)) * self.qw
        gP = pr.point_cost.grad(self.Tc, U1, U2, Y[0, 1:], Y[-1, 1:]) * self.qw
        gY[0, 1:] += gP[2]
        gY[-1, 1:] += gP[3]
        g = np.concatenate((gY.T.ravel(), gP[0], gP[1]))
        return self._check(g, "objective gradient")

    def constraints(self, z):
        lay = self.layout
        Y, U1, U2 = lay.unpack(z)
        pr = self.problem
        Th = self._check(pr.theta(Y), "theta transform", Y)
        Yc = Y[:, 1:]
        Be = self._check(pr.beta(Yc), "beta transform", Yc)
        Al = self._check(pr.alpha(Yc), "alpha transform", Yc)
        R = self.sops.M @ (Th @ self.tops.D.T) + (self.sops.N @ Be + self.sops.A @ Al - self.F) * self.psi
        near, far = self._boundary_args(Y, U1, U2)
        if self.dir_near:
            R[0] = Yc[0] - pr.near.value(*near)
        else:
            R[0] += self.psi * pr.near.value(*near)
        if self.dir_far:
            R[-1] = Yc[-1] - pr.far.value(*far)
        else:
            R[-1] -= self.psi * pr.far.value(*far)
        parts = [R.T.ravel(), Y[:, 0] - self.q0]
        if self.has_path:
            d = pr.path.value(Yc, self.x[:, None], self.Tc[None, :], U1[None, :], U2[None, :])
            parts.append(np.broadcast_to(d, Yc.shape).T.ravel())
        return self._check(np.concatenate(parts), "constraint residual")

    def jacobian(self, z):
        lay = self.layout
        Y, U1, U2 = lay.unpack(z)
        pr = self.problem
        zy = z[: lay.n_y]
        near, far = self._boundary_args(Y, U1, U2)
        vals = [
            self._jm[2] * pr.theta.d1(zy[self._jm[1]]),
            self._jn[2] * pr.beta.d1(zy[self._jn[1]]),
            self._ja[2] * pr.alpha.d1(zy[self._ja[1]]),
        ]
        if self.dir_near:
            vals += [np.ones(lay.n_t), -pr.near.d_u(*near)]
        else:
            vals += [self.psi * pr.near.d_y(*near), self.psi * pr.near.d_u(*near)]
        if self.dir_far:
            vals += [np.ones(lay.n_t), -pr.far.d_u(*far)]
        else:
            vals += [-self.psi * pr.far.d_y(*far), -self.psi * pr.far.d_u(*far)]
        vals.append(np.ones(lay.n_x))
        if self.has_path:
            args = (Y[:, 1:], self.x[:, None], self.Tc[None, :], U1[None, :], U2[None, :])
            shp = (lay.n_x, lay.n_t)
            vals += [
                np.broadcast_to(pr.path.d_y(*args), shp).T.ravel(),
                np.broadcast_to(pr.path.d_u1(*args), shp).T.ravel(),
                np.broadcast_to(pr.path.d_u2(*args), shp).T.ravel(),
            ]
        vals = [np.broadcast_to(v, np.shape(v)).ravel() for v in vals]
        return self._jpat.build(self._check(np.concatenate(vals), "constraint jacobian"))

    def jacobian_structure(self):
        return self._jpat.build(np.ones(len(self._jpat.inverse)))

    def hessian(self, z, lam, obj_factor=1.0):
        """Hessian of ``obj_factor * f + lam^T c`` (full symmetric CSR)."""
        lay = self.layout
        nx, nt = lay.n_x, lay.n_t
        Y, U1, U2 = lay.unpack(z)
        pr = self.problem
        lam = np.asarray(lam, dtype=float)
        Lam = lam[: self.n_dyn].reshape(nt, nx).T.copy()
        Lk = Lam.copy()
        if self.dir_near:
            Lk[0] = 0.0
        if self.dir_far:
            Lk[-1] = 0.0
        Yc = Y[:, 1:]
        M, N, A = self.sops.M, self.sops.N, self.sops.A
        hY = pr.theta.d2(Y) * (M.T @ Lk @ self.tops.D)
        hY[:, 1:] += (pr.beta.d2(Yc) * (N.T @ Lk) + pr.alpha.d2(Yc) * (A.T @ Lk)) * self.psi
        if self.has_path:
            lp = lam[self.n_eq:].reshape(nt, nx).T
            args = (Yc, self.x[:, None], self.Tc[None, :], U1[None, :], U2[None, :])
            hY[:, 1:] += lp * np.broadcast_to(pr.path.d_yy(*args), Yc.shape)
        # objective curvature blocks
        Yq = self.sops.phi.T @ Yc
        Lyy = np.broadcast_to(
            pr.running_cost.d_yy(self.sops.xq[:, None], self.Tc[None, :], Yq), Yq.shape
        )
        blk = (self._hS @ Lyy) * (obj_factor * self.qw)
        # point cost and flux curvature among (u1, u2, y0, yf)
        H4 = obj_factor * pr.point_cost.hess(self.Tc, U1, U2, Yc[0], Yc[-1]) * self.qw
        H4 = np.array(np.broadcast_to(H4, (4, 4, nt)))
        near, far = self._boundary_args(Y, U1, U2)
        if self.dir_near:
            H4[0, 0] -= Lam[0] * pr.near.d_uu(*near)
        else:
            w = Lam[0] * self.psi
            H4[2, 2] += w * pr.near.d_yy(*near)
            H4[0, 2] += w * pr.near.d_yu(*near)
            H4[2, 0] += w * pr.near.d_yu(*near)
            H4[0, 0] += w * pr.near.d_uu(*near)
        if self.dir_far:
            H4[1, 1] -= Lam[-1] * pr.far.d_uu(*far)
        else:
            w = -Lam[-1] * self.psi
            H4[3, 3] += w * pr.far.d_yy(*far)
            H4[1, 3] += w * pr.far.d_yu(*far)
            H4[3, 1] += w * pr.far.d_yu(*far)
            H4[1, 1] += w * pr.far.d_uu(*far)
        vals = np.concatenate([blk.T.ravel(), hY.T.ravel(), H4.ravel()])
        return self._hpat.build(self._check(vals, "lagrangian hessian"))

    # -- solution handling -------------------------------------------------
    def unpack(self, z):
        Y, U1, U2 = self.layout.unpack(z)
        return Solution(Y.copy(), U1.copy(), U2.copy(), self.T.copy(), self.objective(z),
                        self.smesh, self.tmesh, np.array(z, dtype=float))

    def pack(self, sol):
        return self.layout.pack(sol.Y, sol.U1, sol.U2)

    def initial_guess(self, previous=None):
        lay = self.layout
        lb, ub = self.bounds()
        if previous is None:
            Y = np.repeat(self.q0[:, None], lay.n_t + 1, axis=1)
            U1 = np.zeros(lay.n_t)
            U2 = np.zeros(lay.n_t)
        else:
            Y, U1, U2 = interpolate_solution(previous, self.smesh, self.tmesh)
        z = lay.pack(Y, U1, U2)
        return np.clip(z, lb, ub)


def interpolate_solution(sol, smesh, tmesh):
    """Transfer a solution to new meshes (state in space and time, controls in time)."""
    tops = build_temporal(tmesh)
    same_t = sol.tmesh == tmesh
    same_x = sol.smesh == smesh
    if same_t:
        Yt, U1, U2 = sol.Y, sol.U1.copy(), sol.U2.copy()
    else:
        S = state_interp_matrix(sol.tmesh, tops.T)
        C = control_interp_matrix(sol.tmesh, tops.T[1:])
        Yt = (S @ sol.Y.T).T
        U1, U2 = C @ sol.U1, C @ sol.U2
    if same_x:
        Y = Yt.copy()
    else:
        V, _ = eval_matrices(sol.smesh, smesh.support_points)
        Y = V @ Yt
    return Y, U1, U2


def build_nlp(problem, smesh, tmesh):
    return DiscreteOCP(problem, smesh, tmesh)


def eval_objective(ocp, z):
    return ocp.objective(z)


def gradient(ocp, z):
    return ocp.gradient(z)


def eval_constraints(ocp, z):
    return ocp.constraints(z)


def jacobian(ocp, z):
    return ocp.jacobian(z)


def initial_guess(ocp, problem=None, previous=None):
    return ocp.initial_guess(previous)


def unpack(ocp, z):
    return ocp.unpack(z)
