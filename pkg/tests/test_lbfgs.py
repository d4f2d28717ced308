import numpy as np
import pytest

from pbf_thermal.lbfgs import LbfgsConfig, lbfgs_minimize, strong_wolfe


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_rosenbrock():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iterations=200))
    assert res.loss < 1e-10
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-5)
    assert res.iterations <= 200
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_isotropic_quadratic(rng):
    target = rng.normal(size=8)
    res = lbfgs_minimize(lambda x: (0.5 * np.sum((x - target) ** 2), x - target), np.zeros(8))
    np.testing.assert_allclose(res.x, target, atol=1e-12)
    assert res.iterations <= 8 + 2
    assert res.status == "converged"


def test_spd_quadratic_matches_direct_solve(rng):
    Q = rng.normal(size=(10, 10))
    A = Q @ Q.T + 10 * np.eye(10)
    b = rng.normal(size=10)
    obj = lambda x: (0.5 * x @ A @ x - b @ x, A @ x - b)
    res = lbfgs_minimize(obj, np.zeros(10), LbfgsConfig(gradient_tolerance=1e-12))
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_iteration_cap_and_trace_length():
    res = lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iterations=5))
    assert res.status == "max_iterations"
    assert res.iterations == 5 and len(res.trace) == 6


def test_line_search_failure_returns_best_so_far():
    # objective whose reported gradient points the wrong way: no descent possible
    obj = lambda x: (float(x @ x), -2 * x)
    x0 = np.array([1.0, 2.0])
    res = lbfgs_minimize(obj, x0)
    assert res.status == "line_search_failed"
    assert not res.ok
    np.testing.assert_array_equal(res.x, x0)


def test_strong_wolfe_on_parabola():
    phi = lambda a: ((a - 2.0) ** 2, None, 2 * (a - 2.0))
    a, f, g, n, ok = strong_wolfe(phi, 4.0, -4.0, 1.0)
    assert ok and f < 4.0 and abs(2 * (a - 2.0)) <= 0.9 * 4.0


@pytest.mark.parametrize("kw", [dict(history_size=0), dict(gradient_tolerance=0.0), dict(c1=0.9, c2=0.1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        LbfgsConfig(**kw)


def test_callback_receives_iterations():
    seen = []
    lbfgs_minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsConfig(max_iterations=3),
                   callback=lambda it, f, g: seen.append(it))
    assert seen == [1, 2, 3]
