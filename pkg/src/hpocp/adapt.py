"""Mesh refinement and reduction in space and time, and the adaptive driver.

Refinement chooses between raising the degree of a cell and splitting it
from the decay rate of the Legendre coefficients of the discrete solution.
Reduction lowers degrees or merges neighbours where a power series argument
shows the tolerance still holds.  The same planning code serves elements
(space) and intervals (time); only the source of the local samples differs.
"""
from dataclasses import asdict, dataclass, field
import logging
import math
import time
from typing import Optional

import numpy as np

from .basis import legendre_vandermonde, monomial_coefficients
from .estimator import estimate_all
from .nlp import NlpSpec, SolverOptions, solve
from .spatial import SpatialMesh, local_support
from .temporal import TemporalMesh, interval_support
from .transcribe import build_nlp

log = logging.getLogger(__name__)

STRATEGIES = ("local_hp", "global_h", "global_p", "global_ph")


@dataclass
class DecayEstimate:
    coeffs: np.ndarray
    sigma: float
    c: float


@dataclass(frozen=True)
class MeshAction:
    """Planned change to one cell.

    ``kind`` is one of ``"p"`` (raise degree to ``p_new``), ``"h"`` (split into
    ``H`` equal children of degree ``p_new``), ``"reduce"`` (lower degree to
    ``p_new``), ``"merge"`` (join with the next cell, keeping ``p_new``) or
    ``"keep"``.
    """

    cell: int
    kind: str
    p_new: int
    H: int = 1


# -- regularity -----------------------------------------------------------------

def legendre_coeffs(values, support):
    """Legendre coefficients of the interpolant through ``values`` at ``support``.

    ``support`` must already lie in [-1, 1]; ``values`` may carry extra
    trailing columns (one fit per column).
    """
    support = np.asarray(support, dtype=float)
    V = legendre_vandermonde(len(support) - 1, support)
    if np.linalg.cond(V) > 1e14:
        raise np.linalg.LinAlgError("singular Legendre-Vandermonde matrix")
    return np.linalg.solve(V, np.asarray(values, dtype=float))


def decay_rate(coeffs, filter_rel=1e-14):
    """Fit ``|a_i| ~ c 10^(-sigma i)`` by total least squares in (i, log10|a_i|).

    Coefficients at or below ``filter_rel * max|a|`` are dropped before the
    fit.  Fewer than two survivors or a nonnegative slope give ``sigma = 0``.
    """
    a = np.abs(np.asarray(coeffs, dtype=float))
    amax = a.max(initial=0.0)
    if amax == 0.0 or not np.isfinite(amax):
        return DecayEstimate(np.asarray(coeffs), 0.0, 0.0)
    idx = np.nonzero(a > filter_rel * amax)[0]
    if len(idx) < 2:
        return DecayEstimate(np.asarray(coeffs), 0.0, float(np.log10(amax)))
    pts = np.column_stack([idx.astype(float), np.log10(a[idx])])
    mean = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mean)
    dx, dy = vt[0]
    if abs(dx) < 1e-300:
        return DecayEstimate(np.asarray(coeffs), 0.0, float(mean[1]))
    slope = dy / dx
    c = 10.0 ** (mean[1] - slope * mean[0])
    return DecayEstimate(np.asarray(coeffs), float(max(0.0, -slope)), float(c))


def _min_sigma(samples, support01):
    """Smallest decay rate over the columns of ``samples`` (rows = support points)."""
    xi = 2.0 * np.asarray(support01) - 1.0
    A = legendre_coeffs(samples, xi)
    return min(decay_rate(A[:, i]).sigma for i in range(A.shape[1]))


def element_samples(solution, k):
    """Solution coefficients of element ``k`` (rows) at every time column."""
    sm = solution.smesh
    return solution.Y[sm.element_dofs(k)], local_support(int(sm.degrees[k]))


def interval_samples(solution, j):
    """Time samples of interval ``j`` for every spatial coefficient (rows = time)."""
    tm = solution.tmesh
    n = int(tm.degrees[j])
    off = tm.offsets[j]
    vals = solution.Y[:, off:off + n + 1].T
    return vals, 0.5 * (interval_support(n) + 1.0)


# -- planning -----------------------------------------------------------------------

def plan_refinement(eta, sigma_min, p, eps, sigma_bar, p_max, cell=0):
    """Refinement action for one cell with indicator ``eta > eps``."""
    if not np.isfinite(eta):
        return MeshAction(cell, "h", p, 2)
    ratio = math.log10(eta / eps)
    if sigma_min > sigma_bar:
        p_new = p + math.ceil(ratio / sigma_min)
        p_new = max(p_new, p + 1)
        if p_new <= p_max:
            return MeshAction(cell, "p", p_new)
        H = max(2, math.ceil(p_new / p))
        return MeshAction(cell, "h", p, H)
    p_tilde = p + ratio / sigma_bar
    H = max(2, math.ceil(p_tilde / p))
    return MeshAction(cell, "h", p, H)


def reduce_degree(samples, support01, chi, eps, safety=0.1, cell=0):
    """Lowest degree whose dropped monomial terms stay below ``safety * eps``.

    ``samples`` holds the nodal values (rows = support points, columns =
    sample sets) and ``chi`` the per-column normalization.
    """
    a = monomial_coefficients(support01)
    b = np.abs(a @ samples) / np.asarray(chi)[None, :]
    p = len(support01) - 1
    p_new = p
    while p_new > 1 and np.max(b[p_new]) < safety * eps:
        p_new -= 1
    kind = "reduce" if p_new < p else "keep"
    return MeshAction(cell, kind, p_new)


def merge_bound(samples_a, samples_b, support01, h_a, h_b, chi):
    """Normalized bound on the gap between two neighbours' junction expansions."""
    support01 = np.asarray(support01, dtype=float)
    a_left = monomial_coefficients(support01 - 1.0)  # about the right end of cell a
    a_right = monomial_coefficients(support01)  # about the left end of cell b
    hbar = max(h_a, h_b)
    lpow = np.arange(len(support01))[:, None]
    b_a = (a_left @ samples_a) * (hbar / h_a) ** lpow
    b_b = (a_right @ samples_b) * (hbar / h_b) ** lpow
    bound = np.abs(b_a - b_b).sum(axis=0) / np.asarray(chi)
    return float(np.max(bound))


def try_merge(samples_a, samples_b, support01, h_a, h_b, chi, eps, safety=0.1):
    if np.shape(samples_a) != np.shape(samples_b):
        return False
    return merge_bound(samples_a, samples_b, support01, h_a, h_b, chi) < safety * eps


def _plan(n_cells, degrees, widths, eta, samples_fn, chi_fn, eps, sigma_bar, p_max, safety,
          reduce=True):
    actions = [None] * n_cells
    for c in range(n_cells):
        if eta[c] > eps:
            vals, sup = samples_fn(c)
            sig = _min_sigma(vals, sup) if np.isfinite(eta[c]) else 0.0
            actions[c] = plan_refinement(eta[c], sig, int(degrees[c]), eps, sigma_bar, p_max, c)
    if reduce:
        c = 0
        while c < n_cells - 1:
            if (actions[c] is None and actions[c + 1] is None and degrees[c] == degrees[c + 1]):
                va, sup = samples_fn(c)
                vb, _ = samples_fn(c + 1)
                if try_merge(va, vb, sup, widths[c], widths[c + 1], chi_fn(c), eps, safety):
                    actions[c] = MeshAction(c, "merge", int(degrees[c]))
                    actions[c + 1] = MeshAction(c + 1, "keep", int(degrees[c]))
                    c += 2
                    continue
            c += 1
        for c in range(n_cells):
            if actions[c] is None:
                vals, sup = samples_fn(c)
                actions[c] = reduce_degree(vals, sup, chi_fn(c), eps, safety, c)
    for c in range(n_cells):
        if actions[c] is None:
            actions[c] = MeshAction(c, "keep", int(degrees[c]))
    return actions


def plan_spatial(report, solution, eps, sigma_bar=0.5, p_max=8, safety=0.1, reduce=True):
    sm = solution.smesh
    return _plan(
        sm.n_elements, sm.degrees, sm.widths, report.eta_x,
        lambda k: element_samples(solution, k),
        lambda k: report.elements[k].chi,
        eps, sigma_bar, p_max, safety, reduce,
    )


def plan_temporal(report, solution, eps, sigma_bar=0.5, n_max=12, safety=0.1, reduce=True):
    tm = solution.tmesh
    return _plan(
        tm.n_intervals, tm.degrees, np.diff(tm.tau_points), report.eta_t,
        lambda j: interval_samples(solution, j),
        lambda j: report.intervals[j].chi,
        eps, sigma_bar, n_max, safety, reduce,
    )


def apply_actions(points, degrees, actions):
    """New (points, degrees) after applying one action per cell."""
    points = np.asarray(points, dtype=float)
    if len(actions) != len(degrees):
        raise ValueError("need exactly one action per cell")
    new_pts = [points[0]]
    new_deg = []
    skip = False
    for c, act in enumerate(actions):
        if act.cell != c:
            raise ValueError(f"action for cell {act.cell} found at position {c}")
        if skip:
            skip = False
            continue
        a, b = points[c], points[c + 1]
        if act.kind == "merge":
            if c + 1 >= len(degrees) or actions[c + 1].kind != "keep":
                raise ValueError(f"conflicting merge at cell {c}")
            new_pts.append(points[c + 2])
            new_deg.append(act.p_new)
            skip = True
        elif act.kind == "h":
            if act.H < 2:
                raise ValueError("h-split needs at least two children")
            new_pts.extend(np.linspace(a, b, act.H + 1)[1:])
            new_deg.extend([act.p_new] * act.H)
        elif act.kind in ("p", "reduce", "keep"):
            new_pts.append(b)
            new_deg.append(act.p_new)
        else:
            raise ValueError(f"unknown action {act.kind!r}")
    new_pts = np.array(new_pts)
    new_pts[-1] = points[-1]
    return new_pts, np.array(new_deg, dtype=int)


def apply(meshes, spatial_actions=None, temporal_actions=None):
    smesh, tmesh = meshes
    if spatial_actions is not None:
        b, p = apply_actions(smesh.boundaries, smesh.degrees, spatial_actions)
        smesh = SpatialMesh(b, p)
    if temporal_actions is not None:
        tau, n = apply_actions(tmesh.tau_points, tmesh.degrees, temporal_actions)
        tmesh = TemporalMesh(tmesh.t0, tmesh.tf, tau, n)
    return smesh, tmesh


def global_strategy(kind, violated, degrees, cap=8):
    """Actions for the global baselines in one dimension."""
    n = len(degrees)
    if not violated:
        return [MeshAction(c, "keep", int(degrees[c])) for c in range(n)]
    if kind == "global_h":
        return [MeshAction(c, "h", int(degrees[c]), 2) for c in range(n)]
    if kind == "global_p":
        return [MeshAction(c, "p", int(degrees[c]) + 4) for c in range(n)]
    if kind == "global_ph":
        if np.all(np.asarray(degrees) >= cap):
            return [MeshAction(c, "h", int(degrees[c]), 2) for c in range(n)]
        return [MeshAction(c, "p", min(int(degrees[c]) + 1, cap)) if degrees[c] < cap
                else MeshAction(c, "keep", int(degrees[c])) for c in range(n)]
    raise ValueError(f"unknown strategy {kind!r}")


# -- driver --------------------------------------------------------------------------

@dataclass
class AdaptConfig:
    eps: float = 1e-4
    strategy: str = "local_hp"
    sigma_bar: float = 0.5
    p_max: int = 8
    n_max: int = 12
    rho_safe: float = 0.1
    max_iter: int = 25
    global_cap: int = 8
    threads: int = 1
    initial_mesh: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        for key, v in self.initial_mesh.items():
            if int(v) < 1:
                raise ValueError(f"initial mesh field {key} must be positive")


@dataclass
class RunHistory:
    problem: str
    config: AdaptConfig
    rows: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    reports: list = field(default_factory=list, repr=False)
    solution: Optional[object] = field(default=None, repr=False)
    status: str = "running"
    message: str = ""

    @property
    def converged(self):
        return self.status == "converged"


def initial_meshes(problem, overrides=None):
    im = dict(problem.initial_mesh)
    im.update(overrides or {})
    smesh = SpatialMesh.uniform(problem.x0, problem.xf, int(im["n_elements"]), int(im["degree"]))
    tmesh = TemporalMesh.uniform(problem.t0, problem.tf, int(im["n_intervals"]), int(im["n_points"]))
    return smesh, tmesh


def solve_on_mesh(problem, smesh, tmesh, previous=None, solver_options=None, timings=None):
    """Transcribe and solve on fixed meshes; returns (ocp, SolveResult).

    The exact Lagrangian Hessian is the default here; pass
    ``{"hessian": "lbfgs"}`` for the limited-memory model.  If ``timings``
    is a dict it receives the ``build`` and ``nlp`` wall-times.
    """
    opts = dict(hessian="exact")
    opts.update(solver_options or {})
    t0 = time.perf_counter()
    ocp = build_nlp(problem, smesh, tmesh)
    spec = NlpSpec.from_ocp(ocp)
    t1 = time.perf_counter()
    res = solve(spec, ocp.initial_guess(previous), SolverOptions.from_dict(opts))
    if not res.success and previous is not None:
        log.warning("NLP failed from warm start (%s); retrying cold", res.message)
        res = solve(spec, ocp.initial_guess(None), SolverOptions.from_dict(opts))
    if timings is not None:
        timings["build"] = t1 - t0
        timings["nlp"] = time.perf_counter() - t1
    return ocp, res


def run_adaptive(problem, config=None, callback=None):
    """Solve, estimate and adapt until every indicator meets ``eps``.

    Parameters
    ----------
    problem : ProblemDefinition
    config : AdaptConfig or dict, optional
    callback : callable, optional
        Called with each new history row.

    Returns
    -------
    RunHistory
        ``status`` is ``"converged"``, ``"max-iter"`` or ``"failed"``.
    """
    if config is None:
        config = AdaptConfig()
    elif isinstance(config, dict):
        config = AdaptConfig(**config)
    eps = config.eps
    smesh, tmesh = initial_meshes(problem, config.initial_mesh)
    hist = RunHistory(problem.name, config)
    previous = None
    for it in range(config.max_iter + 1):
        tm = {}
        ocp, res = solve_on_mesh(problem, smesh, tmesh, previous, config.solver, tm)
        hist.meshes.append({"spatial": smesh.to_dict(), "temporal": tmesh.to_dict()})
        if not res.success:
            hist.status, hist.message = "failed", f"NLP failed on iteration {it}: {res.message}"
            log.error(hist.message)
            break
        sol = ocp.unpack(res.z)
        report = estimate_all(sol, problem, threads=config.threads)
        row = {
            "iteration": it,
            "eta_t_max": report.eta_t_max,
            "eta_x_max": report.eta_x_max,
            "objective": sol.objective,
            "N_t": int(tmesh.n_t),
            "J": int(tmesh.n_intervals),
            "N_x": int(smesh.n_x),
            "K": int(smesh.n_elements),
            "nlp_status": res.status,
            "nlp_iterations": int(res.iterations),
            "kkt_error": float(res.kkt_error),
            "time_build": tm["build"],
            "time_nlp": tm["nlp"],
            "time_estimate_x": report.timings.get("estimate_x", 0.0),
            "time_estimate_t": report.timings.get("estimate_t", 0.0),
            "time_adapt": 0.0,
        }
        hist.rows.append(row)
        hist.reports.append(report)
        hist.solution = sol
        log.info("iter %d  J*=%.10e  eta_t=%.3e  eta_x=%.3e  N_t=%d J=%d N_x=%d K=%d",
                 it, sol.objective, report.eta_t_max, report.eta_x_max,
                 tmesh.n_t, tmesh.n_intervals, smesh.n_x, smesh.n_elements)
        if report.eta_t_max <= eps and report.eta_x_max <= eps:
            hist.status = "converged"
            break
        if it == config.max_iter:
            hist.status, hist.message = "max-iter", "refinement iteration cap reached"
            break
        t1 = time.perf_counter()
        smesh, tmesh = next_meshes(config, report, sol, (smesh, tmesh))
        row["time_adapt"] = time.perf_counter() - t1
        if callback is not None:
            callback(row)
        previous = sol
    # the last row of a converged or capped run has not been reported yet
    if callback is not None and hist.rows and hist.status in ("converged", "max-iter"):
        callback(hist.rows[-1])
    return hist


def next_meshes(config, report, solution, meshes):
    smesh, tmesh = meshes
    eps = config.eps
    if config.strategy == "local_hp":
        sa = plan_spatial(report, solution, eps, config.sigma_bar, config.p_max, config.rho_safe)
        ta = plan_temporal(report, solution, eps, config.sigma_bar, config.n_max, config.rho_safe)
    else:
        sa = global_strategy(config.strategy, report.eta_x_max > eps, smesh.degrees, config.global_cap)
        ta = global_strategy(config.strategy, report.eta_t_max > eps, tmesh.degrees, config.global_cap)
    return apply(meshes, sa, ta)


def config_to_dict(config):
    return asdict(config)
