"""Temporal mesh and flipped Radau collocation operators.

Each interval carries a noncollocated initial point at s = -1 followed by
its fLGR collocation points.  Consecutive intervals share the state column
at their common mesh point, which gives the overlapping block layout of the
global differentiation matrix.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .basis import diff_matrix, gauss_nodes, interp_matrix


@dataclass(frozen=True, eq=False)
class TemporalMesh:
    t0: float
    tf: float
    tau_points: np.ndarray
    degrees: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau_points, dtype=float)
        n = np.asarray(self.degrees, dtype=int)
        if not self.tf > self.t0:
            raise ValueError("need tf > t0")
        if len(tau) < 2 or tau[0] != -1.0 or tau[-1] != 1.0:
            raise ValueError("tau points must run from -1 to 1")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("tau points must be strictly increasing")
        if len(n) != len(tau) - 1 or np.any(n < 1):
            raise ValueError("one degree >= 1 per interval required")
        object.__setattr__(self, "tau_points", tau)
        object.__setattr__(self, "degrees", n)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

    @classmethod
    def uniform(cls, t0, tf, n_intervals, n_points):
        return cls(t0, tf, np.linspace(-1.0, 1.0, n_intervals + 1), np.full(n_intervals, n_points))

    @property
    def n_intervals(self):
        return len(self.degrees)

    @property
    def n_t(self):
        return int(self.degrees.sum())

    @cached_property
    def offsets(self):
        """Column of each interval's noncollocated point in the global layout."""
        return np.concatenate(([0], np.cumsum(self.degrees)))

    def psi(self, j):
        return 0.25 * (self.tf - self.t0) * (self.tau_points[j + 1] - self.tau_points[j])

    def time_of(self, j, s):
        """Physical time of canonical point ``s`` in interval ``j`` (0-based)."""
        if not 0 <= j < self.n_intervals:
            raise ValueError(f"interval index {j} out of range")
        s = np.asarray(s, dtype=float)
        ta, tb = self.tau_points[j], self.tau_points[j + 1]
        tau = ta + 0.5 * (s + 1.0) * (tb - ta)
        return self.t0 + 0.5 * (tau + 1.0) * (self.tf - self.t0)

    def interval_bounds(self, j):
        return self.time_of(j, -1.0), self.time_of(j, 1.0)

    def to_dict(self):
        return {
            "t0": self.t0,
            "tf": self.tf,
            "tau_points": self.tau_points.tolist(),
            "degrees": self.degrees.tolist(),
        }

    def __eq__(self, other):
        return (
            isinstance(other, TemporalMesh)
            and self.t0 == other.t0
            and self.tf == other.tf
            and np.array_equal(self.tau_points, other.tau_points)
            and np.array_equal(self.degrees, other.degrees)
        )


def time_of(mesh, j, s):
    return mesh.time_of(j, s)


def interval_support(n):
    """Noncollocated -1 followed by the ``n`` fLGR nodes."""
    return np.concatenate(([-1.0], gauss_nodes("fLGR", n).nodes))


@dataclass(frozen=True, eq=False)
class TemporalOperators:
    mesh: TemporalMesh
    D: sp.csr_matrix
    omega: np.ndarray
    psi: np.ndarray
    T: np.ndarray
    interval_index: np.ndarray
    s: np.ndarray  # canonical coordinate of each collocation point

    @property
    def n_t(self):
        return self.mesh.n_t


def build_temporal(mesh):
    rows, cols, vals = [], [], []
    omega, psi, T, idx, s_all = [], [], [mesh.t0], [], []
    for j, n in enumerate(mesh.degrees):
        rule = gauss_nodes("fLGR", n)
        support = np.concatenate(([-1.0], rule.nodes))
        d = diff_matrix(support, rule.nodes)
        r0 = mesh.offsets[j]
        ri, ci = np.meshgrid(r0 + np.arange(n), r0 + np.arange(n + 1), indexing="ij")
        rows.append(ri.ravel())
        cols.append(ci.ravel())
        vals.append(d.ravel())
        omega.append(rule.weights)
        psi.append(np.full(n, mesh.psi(j)))
        t = mesh.time_of(j, rule.nodes)
        t[-1] = mesh.time_of(j, 1.0)
        T.append(t)
        idx.append(np.full(n, j))
        s_all.append(rule.nodes)
    T = np.concatenate([np.atleast_1d(t) for t in T])
    T[-1] = mesh.tf
    D = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(mesh.n_t, mesh.n_t + 1),
    ).tocsr()
    return TemporalOperators(
        mesh,
        D,
        np.concatenate(omega),
        np.concatenate(psi),
        T,
        np.concatenate(idx),
        np.concatenate(s_all),
    )


def _interval_of(mesh, t, side="right"):
    """Interval containing ``t``; a mesh point goes to the interval on ``side``."""
    t = np.asarray(t, dtype=float)
    tb = mesh.t0 + 0.5 * (mesh.tau_points + 1.0) * (mesh.tf - mesh.t0)
    j = np.searchsorted(tb, t, side=side) - 1
    return np.clip(j, 0, mesh.n_intervals - 1)


def _canonical(mesh, j, t):
    tau = 2.0 * (t - mesh.t0) / (mesh.tf - mesh.t0) - 1.0
    ta, tb = mesh.tau_points[j], mesh.tau_points[j + 1]
    return 2.0 * (tau - ta) / (tb - ta) - 1.0


def state_interp_matrix(mesh, times):
    """Sparse map from the ``N_t + 1`` state columns to values at ``times``.

    Times outside [t0, tf] are extrapolated from the end intervals.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    j = _interval_of(mesh, times)
    rows, cols, vals = [], [], []
    for jj in np.unique(j):
        sel = np.nonzero(j == jj)[0]
        n = mesh.degrees[jj]
        s = _canonical(mesh, jj, times[sel])
        L = interp_matrix(interval_support(n), s)
        ri, ci = np.meshgrid(sel, mesh.offsets[jj] + np.arange(n + 1), indexing="ij")
        rows.append(ri.ravel())
        cols.append(ci.ravel())
        vals.append(L.ravel())
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(times), mesh.n_t + 1),
    ).tocsr()


def control_interp_matrix(mesh, times):
    """Sparse map from the ``N_t`` collocated control values to ``times``.

    Each interval uses the polynomial through its own collocation points
    only.  An interval's end time is one of its collocation points, so mesh
    points are assigned to the interval on their left.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    j = _interval_of(mesh, times, side="left")
    rows, cols, vals = [], [], []
    for jj in np.unique(j):
        sel = np.nonzero(j == jj)[0]
        n = mesh.degrees[jj]
        s = _canonical(mesh, jj, times[sel])
        L = interp_matrix(gauss_nodes("fLGR", n).nodes, s)
        ri, ci = np.meshgrid(sel, mesh.offsets[jj] + np.arange(n), indexing="ij")
        rows.append(ri.ravel())
        cols.append(ci.ravel())
        vals.append(L.ravel())
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(times), mesh.n_t),
    ).tocsr()
