import numpy as np
import pytest

from hpocp.problems import PROBLEMS, burgers, get_problem, heat, strong_residual

from oracles import diffusion_problem


def test_burgers_parameters():
    p = burgers()
    assert (p.x0, p.xf, p.t0, p.tf) == (0.0, 1.0, 0.0, 1.0)
    assert p.u1_bounds == (-0.015, 0.015) and p.u2_bounds == (-0.015, 0.015)
    assert p.beta(3.0) == pytest.approx(4.5)
    assert p.initial_condition(0.5) == pytest.approx(0.0625)
    assert p.alpha.d1(0.3) == pytest.approx(0.1)
    assert p.near.value(0.2, 0.01, 0.0) == pytest.approx(0.1 * 0.01)
    assert p.far.value(0.2, -0.01, 0.0) == pytest.approx(-0.1 * 0.01)
    # running cost (y - 0.035)^2 / 2 and control cost gamma/2 (u1^2 + u2^2)
    assert p.running_cost.value(0.0, 0.0, 0.035) == 0.0
    assert p.point_cost.value(0.0, 0.1, 0.2, 0.0, 0.0) == pytest.approx(0.005 * 0.05)


def test_heat_parameters():
    p = heat()
    assert p.tf == 0.5
    assert p.u1_bounds[1] == 0.1 and p.u1_bounds[0] <= -1e19
    assert p.initial_condition(0.0) == pytest.approx(3.0)
    assert p.initial_condition(1.0) == pytest.approx(1.0)
    assert p.source(0.0, 0.0) == pytest.approx(np.pi**2 - 7.0, abs=1e-12)
    # tracking target y_d(t) = 2 - exp(rho t) at the far boundary
    g = p.point_cost.grad(0.0, 0.0, 0.0, 0.0, 1.0)
    assert g[3] == pytest.approx(0.0)
    assert p.theta.d1(1.0) == pytest.approx(4.0 + 1.0)
    assert p.alpha.d1(1.0) == pytest.approx(4.0 - 1.0)
    # flux g (y - u) at the near boundary
    assert p.near.value(2.0, 0.5, 0.0) == pytest.approx(1.5)
    assert p.far.value(2.0, 0.5, 0.0) == pytest.approx(0.0)


def test_registry():
    assert set(PROBLEMS) == {"burgers", "heat"}
    assert get_problem("burgers", nu=0.2).alpha.d1(0.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        get_problem("nope")


@pytest.mark.parametrize("factory", [burgers, heat])
def test_transform_derivatives(factory):
    p = factory()
    y = np.random.default_rng(0).uniform(-10, 10, 100)
    h = 1e-5
    for tr in (p.theta, p.beta, p.alpha):
        fd = (tr(y + h) - tr(y - h)) / (2 * h)
        np.testing.assert_allclose(tr.d1(y), fd, rtol=1e-6, atol=1e-8)
        fd2 = (tr.d1(y + h) - tr.d1(y - h)) / (2 * h)
        np.testing.assert_allclose(tr.d2(y), fd2, rtol=1e-6, atol=1e-8)
        assert np.all(np.isfinite(tr(y)))
    if factory is burgers:
        assert np.all(p.theta.d1(y) > 0)


def test_strong_residual_examples():
    assert strong_residual(burgers(), 0.0, 0.0, 0.0, 0.0, 0.3, 0.2) == 0.0
    lin = diffusion_problem()
    x = 0.3
    assert strong_residual(lin, x**2, 0.0, 2 * x, 2.0, x, 0.0) == pytest.approx(-2.0)
    hp = heat()
    assert abs(strong_residual(hp, 1.0, 0.0, 0.0, 0.0, 0.2, 0.1)) > 1e-3
