"""Spatial mesh, global degree-of-freedom layout and Galerkin assembly.

Elements carry equidistant Lagrange support on the local coordinate
r in [0, 1].  Neighbouring elements share their interface coefficient, so
the global vector has ``sum(p) + 1`` entries.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .basis import gauss_nodes, lagrange_eval


def local_support(p):
    return np.linspace(0.0, 1.0, p + 1)


@dataclass(frozen=True, eq=False)
class SpatialMesh:
    boundaries: np.ndarray
    degrees: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        p = np.asarray(self.degrees, dtype=int)
        if b.ndim != 1 or len(b) < 2:
            raise ValueError("need at least one element")
        if len(p) != len(b) - 1:
            raise ValueError("one degree per element required")
        if np.any(np.diff(b) <= 0):
            raise ValueError("element boundaries must be strictly increasing")
        if np.any(p < 1):
            raise ValueError("element degrees must be >= 1")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "degrees", p)

    @classmethod
    def uniform(cls, x0, xf, n_elements, degree):
        return cls(np.linspace(x0, xf, n_elements + 1), np.full(n_elements, degree))

    @property
    def n_elements(self):
        return len(self.degrees)

    @property
    def widths(self):
        return np.diff(self.boundaries)

    @property
    def n_x(self):
        return int(self.degrees.sum()) + 1

    @cached_property
    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.degrees)))

    def element_dofs(self, k):
        return np.arange(self.offsets[k], self.offsets[k] + self.degrees[k] + 1)

    @cached_property
    def support_points(self):
        x = np.empty(self.n_x)
        for k in range(self.n_elements):
            a, b = self.boundaries[k], self.boundaries[k + 1]
            x[self.element_dofs(k)] = a + (b - a) * local_support(self.degrees[k])
        # interface coordinates exactly equal to the stored boundaries
        x[self.offsets] = self.boundaries
        return x

    def locate(self, x, side="left"):
        """Element index containing ``x``; interior ties go to ``side``."""
        x = np.asarray(x, dtype=float)
        b = self.boundaries
        if np.any((x < b[0]) | (x > b[-1])):
            raise ValueError(f"point outside spatial domain [{b[0]}, {b[-1]}]")
        if side == "left":
            k = np.searchsorted(b, x, side="left") - 1
        else:
            k = np.searchsorted(b, x, side="right") - 1
        return np.clip(k, 0, self.n_elements - 1)

    def to_dict(self):
        return {"boundaries": self.boundaries.tolist(), "degrees": self.degrees.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, SpatialMesh)
            and np.array_equal(self.boundaries, other.boundaries)
            and np.array_equal(self.degrees, other.degrees)
        )


@dataclass(frozen=True, eq=False)
class SpatialOperators:
    """Assembled Galerkin operators plus the quadrature data that produced them.

    ``phi`` and ``phi_x`` are ``N_x x n_quad`` sparse matrices of basis values and
    physical x-derivatives at the global quadrature points ``xq``; ``wq`` holds
    the physical quadrature weights (``h/2`` already applied).
    """

    mesh: SpatialMesh
    M: sp.csr_matrix
    N: sp.csr_matrix
    A: sp.csr_matrix
    xq: np.ndarray
    wq: np.ndarray
    phi: sp.csr_matrix
    phi_x: sp.csr_matrix
    quad_element: np.ndarray = field(repr=False)

    @property
    def n_x(self):
        return self.mesh.n_x


def assemble(mesh, quad_per_degree=2):
    """Assemble M, N and A with a ``2p``-point Gauss rule in every element."""
    rows, cols, mv, nv, av = [], [], [], [], []
    prow, pcol, pv, pxv = [], [], [], []
    xq, wq, qel = [], [], []
    nq = 0
    for k in range(mesh.n_elements):
        p = int(mesh.degrees[k])
        h = mesh.widths[k]
        rule = gauss_nodes("LG", quad_per_degree * p)
        r = 0.5 * (rule.nodes + 1.0)
        w = 0.5 * rule.weights
        phi, dphi = lagrange_eval(local_support(p), r)
        dofs = mesh.element_dofs(k)
        m_loc = (phi * w) @ phi.T * h
        n_loc = (phi * w) @ dphi.T
        a_loc = (dphi * w) @ dphi.T / h
        ii, jj = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        mv.append(m_loc.ravel())
        nv.append(n_loc.ravel())
        av.append(a_loc.ravel())
        qidx = nq + np.arange(len(r))
        qi, qd = np.meshgrid(qidx, dofs)
        prow.append(qd.ravel())
        pcol.append(qi.ravel())
        pv.append(phi.ravel())
        pxv.append((dphi / h).ravel())
        xq.append(mesh.boundaries[k] + h * r)
        wq.append(w * h)
        qel.append(np.full(len(r), k))
        nq += len(r)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    shape = (mesh.n_x, mesh.n_x)

    def build(vals):
        return sp.coo_matrix((np.concatenate(vals), (rows, cols)), shape=shape).tocsr()

    pshape = (mesh.n_x, nq)
    prow = np.concatenate(prow)
    pcol = np.concatenate(pcol)
    phi = sp.coo_matrix((np.concatenate(pv), (prow, pcol)), shape=pshape).tocsr()
    phi_x = sp.coo_matrix((np.concatenate(pxv), (prow, pcol)), shape=pshape).tocsr()
    return SpatialOperators(
        mesh,
        build(mv),
        build(nv),
        build(av),
        np.concatenate(xq),
        np.concatenate(wq),
        phi,
        phi_x,
        np.concatenate(qel),
    )


def project_source(mesh, f, times, ops=None):
    """Columns ``F[:, j] = integral(phi^T f(x, times[j]))`` over the domain."""
    ops = assemble(mesh) if ops is None else ops
    times = np.atleast_1d(np.asarray(times, dtype=float))
    vals = np.asarray(f(ops.xq[:, None], times[None, :]), dtype=float)
    vals = np.broadcast_to(vals, (len(ops.xq), len(times)))
    if not np.all(np.isfinite(vals)):
        i, j = np.argwhere(~np.isfinite(vals))[0]
        raise FloatingPointError(
            f"source term not finite at x={ops.xq[i]!r}, t={times[j]!r}"
        )
    return ops.phi @ (ops.wq[:, None] * vals)


def eval_matrices(mesh, x, side="left"):
    """Sparse maps from global coefficients to values and x-derivatives at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = mesh.locate(x, side)
    rows, cols, vals, ders = [], [], [], []
    for e in np.unique(k):
        sel = np.nonzero(k == e)[0]
        a, h = mesh.boundaries[e], mesh.widths[e]
        r = np.clip((x[sel] - a) / h, 0.0, 1.0)
        phi, dphi = lagrange_eval(local_support(mesh.degrees[e]), r)
        dofs = mesh.element_dofs(e)
        ri, ci = np.meshgrid(sel, dofs)
        rows.append(ri.ravel())
        cols.append(ci.ravel())
        vals.append(phi.ravel())
        ders.append((dphi / h).ravel())
    shape = (len(x), mesh.n_x)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    V = sp.coo_matrix((np.concatenate(vals), (rows, cols)), shape=shape).tocsr()
    Dx = sp.coo_matrix((np.concatenate(ders), (rows, cols)), shape=shape).tocsr()
    return V, Dx


def eval_state(mesh, coeffs, x, side="left"):
    """Value and x-derivative of the finite element function at ``x``.

    At an interior element boundary the value is continuous; the derivative is
    taken from the element on ``side`` ("left" or "right").
    """
    scalar = np.ndim(x) == 0
    V, Dx = eval_matrices(mesh, x, side)
    coeffs = np.asarray(coeffs, dtype=float)
    val, der = V @ coeffs, Dx @ coeffs
    if scalar:
        return val[0], der[0]
    return val, der
