import numpy as np
import pytest
import scipy.sparse as sp

from hpocp.adapt import initial_meshes, solve_on_mesh
from hpocp.nlp import ACCEPTABLE, FAILED, OPTIMAL, NlpSpec, SolverOptions, kkt_error, solve
from hpocp.problems import burgers


def quadratic_spec(H, g, A=None, b=None, G=None, h=None, lb=-np.inf, ub=np.inf):
    """min 1/2 z'Hz + g'z  s.t.  A z = b,  G z <= h,  lb <= z <= ub."""
    n = len(g)
    A = np.zeros((0, n)) if A is None else A
    b = np.zeros(0) if b is None else b
    G = np.zeros((0, n)) if G is None else G
    h = np.zeros(0) if h is None else h
    C = np.vstack([A, G])
    d = np.concatenate([b, h])
    return NlpSpec(
        n=n, lb=lb, ub=ub,
        objective=lambda z: 0.5 * z @ H @ z + g @ z,
        gradient=lambda z: H @ z + g,
        constraints=lambda z: C @ z - d,
        jacobian=lambda z: sp.csr_matrix(C),
        n_eq=len(b), m=len(d),
        hessian=lambda z, y, s=1.0: sp.csr_matrix(s * H),
    )


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


@pytest.mark.parametrize("hessian", ["lbfgs", "exact"])
def test_active_bound(hessian):
    spec = quadratic_spec(np.array([[2.0]]), np.array([-2.0]), lb=0.0, ub=0.5)
    res = solve(spec, np.array([0.2]), {"hessian": hessian})
    assert res.status == OPTIMAL
    assert res.z[0] == pytest.approx(0.5, abs=1e-9)
    assert res.z_upper[0] == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("hessian", ["lbfgs", "exact"])
def test_symmetric_equality(hessian):
    spec = quadratic_spec(2 * np.eye(2), np.zeros(2), A=np.ones((1, 2)), b=np.ones(1))
    res = solve(spec, np.array([3.0, -1.0]), {"hessian": hessian})
    assert res.success
    np.testing.assert_allclose(res.z, [0.5, 0.5], atol=1e-10)
    assert res.y[0] == pytest.approx(-1.0, abs=1e-8)


def test_inequality_constraint():
    # min (z1-2)^2 + (z2-2)^2  s.t.  z1 + z2 <= 2
    spec = quadratic_spec(2 * np.eye(2), -4 * np.ones(2), G=np.ones((1, 2)), h=np.array([2.0]))
    res = solve(spec, np.zeros(2))
    assert res.success
    np.testing.assert_allclose(res.z, [1.0, 1.0], atol=1e-9)
    assert res.y[0] == pytest.approx(2.0, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_random_equality_qp_matches_dense_kkt(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 51))
    m = int(rng.integers(1, n // 2 + 1))
    H = random_spd(rng, n)
    g = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    ref = np.linalg.solve(K, np.concatenate([-g, b]))
    res = solve(quadratic_spec(H, g, A, b), np.zeros(n))
    assert res.success
    np.testing.assert_allclose(res.z, ref[:n], atol=1e-8)
    np.testing.assert_allclose(res.y, ref[n:], atol=1e-8)


def test_random_bounded_qp_interior_and_kkt():
    rng = np.random.default_rng(11)
    n = 30
    H = random_spd(rng, n)
    g = 10 * rng.standard_normal(n)
    spec = quadratic_spec(H, g, lb=-0.1, ub=0.2)
    res = solve(spec, np.zeros(n), SolverOptions(print_level=0))
    assert res.success
    assert kkt_error(spec, res.z, res.y, res.z_lower, res.z_upper) <= 1e-10
    assert np.all(res.z >= -0.1) and np.all(res.z <= 0.2)
    assert res.iterations > 0 and len(res.history) > 0


def test_iterates_stay_inside_bounds():
    calls = []
    H = np.diag([1.0, 3.0])
    base = quadratic_spec(H, np.array([-5.0, 4.0]), lb=[0.0, -1.0], ub=[1.0, 1.0])

    inner = base.objective

    def objective(z):
        calls.append(z.copy())
        return inner(z)

    base.objective = objective
    res = solve(base, np.array([0.5, 0.0]))
    assert res.success
    for z in calls:
        assert 0.0 < z[0] < 1.0 and -1.0 < z[1] < 1.0


def test_kkt_error_properties():
    spec = quadratic_spec(2 * np.eye(3), np.array([-2.0, 4.0, 0.0]))
    assert kkt_error(spec, np.array([1.0, -2.0, 0.0]), np.zeros(0)) == 0.0
    assert kkt_error(spec, np.zeros(3), np.zeros(0)) > 0
    eq = quadratic_spec(2 * np.eye(2), np.zeros(2), A=np.ones((1, 2)), b=np.ones(1))
    assert kkt_error(eq, np.array([0.5, 0.5]), np.array([-1.0])) <= 1e-15
    assert kkt_error(eq, np.array([1.0, 0.0]), np.array([-1.0])) > 0


def test_deterministic():
    rng = np.random.default_rng(4)
    n = 20
    H = random_spd(rng, n)
    spec = quadratic_spec(H, rng.standard_normal(n), A=rng.standard_normal((3, n)),
                          b=rng.standard_normal(3), lb=-1.0, ub=1.0)
    a = solve(spec, np.zeros(n))
    b = solve(spec, np.zeros(n))
    assert a.iterations == b.iterations
    np.testing.assert_array_equal(a.z, b.z)
    assert a.history == b.history


def test_nonfinite_callback_fails():
    spec = quadratic_spec(np.eye(2), np.zeros(2))
    spec.objective = lambda z: np.nan
    res = solve(spec, np.ones(2))
    assert res.status == FAILED


def test_bad_arguments():
    spec = quadratic_spec(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        solve(spec, np.array([np.inf, 0.0]))
    with pytest.raises(ValueError):
        solve(spec, np.zeros(2), {"tol": 0.0})
    with pytest.raises(ValueError):
        solve(spec, np.zeros(2), {"no_such_option": 1})
    with pytest.raises(ValueError):
        NlpSpec(1, [1.0], [0.0], None, None, None, None, 0, 0)


def test_burgers_initial_mesh_objective():
    p = burgers()
    sm, tm = initial_meshes(p)
    ocp, res = solve_on_mesh(p, sm, tm)
    assert res.status in (OPTIMAL, ACCEPTABLE)
    assert ocp.unpack(res.z).objective == pytest.approx(2.8940597e-5, rel=5e-3)
    spec = NlpSpec.from_ocp(ocp)
    assert kkt_error(spec, res.z, res.y, res.z_lower, res.z_upper) <= 1e-10
