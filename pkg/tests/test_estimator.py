import copy

import numpy as np
import pytest

from hpocp.adapt import initial_meshes, solve_on_mesh
from hpocp.basis import gauss_nodes
from hpocp.estimator import (
    IntervalResidual,
    estimate_all,
    solve_element_residual,
    solve_interval_residual,
    spatial_indicator,
    temporal_indicator,
)
from hpocp.problems import burgers
from hpocp.spatial import SpatialMesh, eval_state
from hpocp.temporal import TemporalMesh
from hpocp.transcribe import build_nlp

from oracles import check_zero_residual, diffusion_problem, linear_state_solve


@pytest.fixture(scope="module")
def burgers_initial():
    p = burgers()
    ocp, res = solve_on_mesh(p, *initial_meshes(p))
    return p, ocp.unpack(res.z)


def linear_solution(scale=1.0, smesh=None, tmesh=None):
    prob = diffusion_problem(q=lambda x: scale * (1 + np.cos(np.pi * x) + x**3),
                             source=lambda x, t: scale * np.sin(x) * (1 + t))
    smesh = smesh or SpatialMesh.uniform(0, 1, 4, 2)
    tmesh = tmesh or TemporalMesh.uniform(0, 1, 2, 3)
    ocp = build_nlp(prob, smesh, tmesh)
    return prob, ocp.unpack(linear_state_solve(ocp))


def test_zero_residual_case():
    ok, detail = check_zero_residual()
    assert ok, detail


def test_burgers_initial_indicators(burgers_initial):
    p, sol = burgers_initial
    rep = estimate_all(sol, p)
    assert len(rep.eta_x) == 9 and len(rep.eta_t) == 2
    assert 4.43e-4 / 2 <= rep.eta_x_max <= 4.43e-4 * 2
    assert 5.36e-5 / 2 <= rep.eta_t_max <= 5.36e-5 * 2
    assert rep.warnings == []


def test_doubling_degree_reduces_spatial_indicator(burgers_initial):
    p, sol = burgers_initial
    base = estimate_all(sol, p).eta_x
    sm = SpatialMesh(sol.smesh.boundaries, 2 * sol.smesh.degrees)
    ocp, res = solve_on_mesh(p, sm, sol.tmesh)
    fine = estimate_all(ocp.unpack(res.z), p).eta_x
    assert np.all(base / fine >= 10.0)


def test_extra_collocation_point_reduces_temporal_indicator(burgers_initial):
    p, sol = burgers_initial
    base = estimate_all(sol, p).eta_t
    tm = TemporalMesh(sol.tmesh.t0, sol.tmesh.tf, sol.tmesh.tau_points, sol.tmesh.degrees + 1)
    ocp, res = solve_on_mesh(p, sol.smesh, tm)
    fine = estimate_all(ocp.unpack(res.z), p).eta_t
    assert np.all(fine < base)


def test_element_residual_structure(burgers_initial):
    p, sol = burgers_initial
    r = solve_element_residual(3, sol, p)
    deg = int(sol.smesh.degrees[3])
    assert r.E.shape == (deg + 2, sol.n_t + 1)
    assert len(r.x_support) == deg + 2
    # column 0 is q - y_h at the error support points
    y0, _ = eval_state(sol.smesh, sol.Y[:, 0], r.x_support)
    np.testing.assert_allclose(r.E[:, 0], p.initial_condition(r.x_support) - y0, atol=1e-14)
    assert r.eta >= 0 and r.converged
    with pytest.raises(ValueError):
        solve_element_residual(9, sol, p)


def test_interval_residual_structure(burgers_initial):
    p, sol = burgers_initial
    r = solve_interval_residual(1, sol, p)
    n = int(sol.tmesh.degrees[1])
    assert r.E.shape == (sol.n_x, n + 2)
    assert np.all(r.E[:, 0] == 0.0)
    assert r.eta >= 0 and r.converged
    # residual points differ from the collocation points of the interval
    own = gauss_nodes("fLGR", n).nodes
    assert not np.any(np.isin(r.s_support[1:-1], own))
    with pytest.raises(ValueError):
        solve_interval_residual(2, sol, p)


def test_spatial_indicator_closed_forms(burgers_initial):
    p, sol = burgers_initial
    r = copy.copy(solve_element_residual(0, sol, p))
    h = sol.smesh.widths[0]
    r.E = np.zeros_like(r.E)
    assert spatial_indicator(r, sol) == 0.0
    c = 0.3
    r.E = np.full_like(r.E, c)
    r.chi = np.ones(r.E.shape[1])
    assert spatial_indicator(r, sol) == pytest.approx(c * np.sqrt(h), rel=1e-12)
    # divisor 1 + max(|y|, |y_x|) per time point
    r.chi = np.full(r.E.shape[1], 1.0 + max(2.0, 3.0))
    assert spatial_indicator(r, sol) == pytest.approx(c * np.sqrt(h) / 4.0, rel=1e-12)


def test_temporal_indicator_closed_forms():
    n = 3
    res = IntervalResidual(0, np.zeros(n + 2), np.zeros((2, n + 2)), 0.0)
    res.psi = 0.25
    res.weights = gauss_nodes("fLGR", n + 1).weights
    assert temporal_indicator(res) == 0.0
    c = 0.7
    res.E = np.full((2, n + 2), c)
    res.chi = np.ones(2)
    assert temporal_indicator(res) == pytest.approx(c * np.sqrt(0.5), rel=1e-12)


def test_toy_report_sizes():
    prob, sol = linear_solution(smesh=SpatialMesh.uniform(0, 1, 1, 2),
                                tmesh=TemporalMesh.uniform(0, 1, 1, 3))
    rep = estimate_all(sol, prob)
    assert rep.eta_x.shape == (1,) and rep.eta_t.shape == (1,)


def test_estimator_does_not_mutate_solution(burgers_initial):
    p, sol = burgers_initial
    before = copy.deepcopy(sol)
    estimate_all(sol, p, threads=2)
    for name in ("Y", "U1", "U2", "T", "z"):
        np.testing.assert_array_equal(getattr(sol, name), getattr(before, name))
    assert sol.objective == before.objective


def test_threads_and_order_do_not_matter(burgers_initial):
    p, sol = burgers_initial
    a = estimate_all(sol, p, threads=1)
    b = estimate_all(sol, p, threads=4)
    np.testing.assert_array_equal(a.eta_x, b.eta_x)
    np.testing.assert_array_equal(a.eta_t, b.eta_t)
    single = [solve_element_residual(k, sol, p).eta for k in reversed(range(9))]
    np.testing.assert_array_equal(single[::-1], a.eta_x)


def test_scale_awareness():
    prob, sol = linear_solution()
    big_prob, big_sol = linear_solution(scale=1e6)
    a = estimate_all(sol, prob)
    b = estimate_all(big_sol, big_prob)
    assert not b.warnings
    for u, v in ((a.eta_x, b.eta_x), (a.eta_t, b.eta_t)):
        ratio = v / u
        assert np.all(ratio < 10.0) and np.all(ratio > 0.1)
    tol = 5e-3
    assert set(np.flatnonzero(a.eta_x > tol)) == set(np.flatnonzero(b.eta_x > tol))
