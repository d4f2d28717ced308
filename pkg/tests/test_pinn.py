import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import constant_material
from pbf_thermal.fd import BoundarySpec, Convective, Dirichlet, Insulated, Neumann
from pbf_thermal.laser import LaserParams, Scenario, Track, Workpiece, heat_source
from pbf_thermal.lbfgs import LbfgsConfig
from pbf_thermal.neural import DTYPE
from pbf_thermal.physics import (
    ClusterConfig,
    CollocationCounts,
    NormalizationSpec,
    ThermalProblem,
    boundary_loss,
    capture_weights,
    compute_losses,
    prepare_inputs,
    residual_from_derivatives,
    residual_scale,
    sample_collocation,
    sobol_points,
)
from pbf_thermal.pinn import PinnConfig, PinnRegressor, TrainedPinn, UniformInitial, pde_residual, train_pinn

WP = Workpiece(1e-3, 0.6e-3, 0.3e-3)
TRACK = Track(1, (0.0, 0.3e-3), (1e-3, 0.3e-3))
SCEN = Scenario((TRACK,), 0.1)
TINY = PinnConfig(hidden_layers=2, width=8, counts=CollocationCounts(256, 64, 32),
                  lbfgs=LbfgsConfig(history_size=10, max_iterations=30))


# collocation -----------------------------------------------------------------

def test_sobol_first_points():
    np.testing.assert_array_equal(sobol_points(1, 3)[:, 0], [0.5, 0.75, 0.25])
    p = sobol_points(4, 8)
    np.testing.assert_array_equal(p[0], [0.5] * 4)
    np.testing.assert_array_equal(sobol_points(4, 4, offset=4), p[4:])


def test_collocation_layout_and_determinism():
    counts = CollocationCounts(400, 50, 20)
    a = sample_collocation(WP, (0.0, 0.01), counts, SCEN, LaserParams(), ClusterConfig(0.5, 100e-6), seed=3)
    b = sample_collocation(WP, (0.0, 0.01), counts, SCEN, LaserParams(), ClusterConfig(0.5, 100e-6), seed=3)
    np.testing.assert_array_equal(a.interior, b.interior)
    assert a.counts == (400, 50, 120)
    assert np.all(a.initial[:, 0] == 0.0)
    assert np.all((a.interior[:, 1:] > WP.lower) & (a.interior[:, 1:] < WP.upper))
    assert np.all(a.boundary["x+"][:, 1] == WP.upper[0])
    assert np.all(a.boundary["z-"][:, 3] == WP.lower[2])
    # unclustered prefix equals the plain Sobol prefix
    plain = sample_collocation(WP, (0.0, 0.01), counts, cluster=ClusterConfig(0.0))
    np.testing.assert_array_equal(a.interior[:200], plain.interior[:200])


def test_clustered_points_gather_at_the_spot():
    counts = CollocationCounts(2000, 10, 10)
    c = sample_collocation(WP, (0.0, 0.01), counts, SCEN, LaserParams(), ClusterConfig(0.5, 50e-6), seed=0)
    P = c.interior[1000:]
    xl = P[:, 0] * 0.1
    d = np.hypot(P[:, 1] - xl, P[:, 2] - 0.3e-3)
    assert np.median(d) < 100e-6
    P0 = c.interior[:1000]
    d0 = np.hypot(P0[:, 1] - P0[:, 0] * 0.1, P0[:, 2] - 0.3e-3)
    assert np.median(d0) > 2 * np.median(d)


def test_normalization_round_trip(rng):
    norm = NormalizationSpec.for_interval(WP, 0.002, 0.01)
    X = norm.from_unit(rng.uniform(-1, 1, (50, 4)))
    np.testing.assert_allclose(norm.to_unit(X), norm.to_unit(norm.from_unit(norm.to_unit(X))))
    np.testing.assert_allclose(norm.to_unit([0.002, 0, 0, -0.3e-3]), [-1, -1, -1, -1])
    assert NormalizationSpec.from_dict(norm.to_dict()) == norm


# residual --------------------------------------------------------------------

def _t(*a):
    return [torch.tensor(np.asarray(v, dtype=float), dtype=DTYPE) for v in a]


def test_residual_constant_state():
    mat = constant_material()
    T, = _t([300.0, 400.0])
    zeros = torch.zeros((4, 2), dtype=DTYPE)
    R = residual_from_derivatives(T, zeros, torch.zeros((3, 2), dtype=DTYPE), torch.tensor([1e12, 0.0],
                                  dtype=DTYPE), mat)
    np.testing.assert_allclose(R.numpy(), [-1e12, 0.0])


def test_residual_hand_values():
    mat = constant_material(k=20, cp=500, rho=8000)
    T, = _t([500.0])
    dT = torch.tensor([[1e3], [0.0], [0.0], [0.0]], dtype=DTYPE)
    d2T = torch.tensor([[1e6], [2e6], [0.0]], dtype=DTYPE)
    R = residual_from_derivatives(T, dT, d2T, torch.zeros(1, dtype=DTYPE), mat)
    assert float(R) == pytest.approx(8000 * 500 * 1e3 - 20 * 3e6)


def test_residual_gradient_term_uses_conductivity_slope():
    from pbf_thermal.material import CapacityLaw, ConductivityLaw, MaterialParams

    mat = MaterialParams(8000.0, ConductivityLaw(10.0, 0.02, 0.0, 0.0, 0.0), CapacityLaw(500, 0, 0, 0, 0, 0, 0, 0))
    T, = _t([1000.0])
    dT = torch.tensor([[0.0], [3e5], [4e5], [0.0]], dtype=DTYPE)
    R = residual_from_derivatives(T, dT, torch.zeros((3, 1), dtype=DTYPE), torch.zeros(1, dtype=DTYPE), mat)
    assert float(R) == pytest.approx(-0.02 * (3e5**2 + 4e5**2))


def _manufactured_field(norm, a, b):
    """T = T0 + a x^2 + b t in physical units, expressed in unit coordinates."""
    half, c = norm.half, norm.center

    def f(U):
        t = U[:, 0] * half[0] + c[0]
        x = U[:, 1] * half[1] + c[1]
        T = norm.T0 + a * x**2 + b * (t - norm.lower[0])
        u = (T - norm.T0) / norm.T_scale
        du = torch.stack([b * half[0] + 0 * t, 2 * a * x * half[1], 0 * x, 0 * x]) / norm.T_scale
        d2u = torch.stack([2 * a * half[1] ** 2 + 0 * x, 0 * x, 0 * x]) / norm.T_scale
        return u, du, d2u

    return f


def test_manufactured_solution_residual(rng):
    mat = constant_material()
    prob = ThermalProblem(WP, mat, LaserParams(), BoundarySpec.uniform(Insulated()))
    norm = NormalizationSpec.for_interval(WP, 0.0, 0.01)
    a, b = 1e8, 2e4
    colloc = sample_collocation(WP, (0.0, 0.01), CollocationCounts(64, 8, 8))
    inp = prepare_inputs(colloc, norm, prob, None, 300.0)
    u, du, d2u = _manufactured_field(norm, a, b)(inp.interior)
    from pbf_thermal.physics import physical_derivatives

    T, dT, d2T = physical_derivatives(u, du, d2u, norm)
    R = residual_from_derivatives(T, dT, d2T, inp.source, mat)
    np.testing.assert_allclose(R.numpy(), 8000 * 500 * b - 20 * 2 * a, rtol=1e-10)


# losses ----------------------------------------------------------------------

def _zero_field(U):
    n = U.shape[0]
    return torch.zeros(n, dtype=DTYPE), torch.zeros((4, n), dtype=DTYPE), torch.zeros((3, n), dtype=DTYPE)


def test_uniform_initial_state_losses():
    prob = ThermalProblem(WP, constant_material(), LaserParams())
    norm = NormalizationSpec.for_interval(WP, 0.0, 0.01)
    colloc = sample_collocation(WP, (0.0, 0.01), CollocationCounts(128, 16, 16), SCEN, prob.laser)
    inp = prepare_inputs(colloc, norm, prob, SCEN, 300.0)
    terms = compute_losses(_zero_field, inp, norm, prob)
    q = heat_source(*colloc.interior[:, 1:].T, colloc.interior[:, 0], SCEN, prob.laser)
    expected = np.mean((q / residual_scale(prob, norm)) ** 2)
    assert float(terms.pde) == pytest.approx(expected, rel=1e-12)
    assert float(terms.ic) == 0.0
    assert float(terms.bc_total) == 0.0


def test_residual_scale_value():
    prob = ThermalProblem(WP, constant_material(), LaserParams())
    norm = NormalizationSpec.for_interval(WP, 0.0, 0.01)
    assert residual_scale(prob, norm) == pytest.approx(8000 * 500 * 1700 / 0.01)


@pytest.mark.parametrize("face,sign", [("x+", 1.0), ("x-", -1.0)])
def test_neumann_sign(face, sign):
    norm = NormalizationSpec.for_interval(WP, 0.0, 0.01)
    s = 0.2  # u = s * x_unit, so dT/dx = T_scale * s / half_x
    grad_x = norm.T_scale * s / norm.half[1]
    u = torch.zeros(5, dtype=DTYPE)
    du = torch.zeros((4, 5), dtype=DTYPE)
    du[1] = s
    mat = constant_material()
    assert float(boundary_loss(face, Neumann(sign * grad_x), u, du, norm, mat)) == pytest.approx(0.0, abs=1e-28)
    assert float(boundary_loss(face, Neumann(-sign * grad_x), u, du, norm, mat)) == pytest.approx(4 * s * s)
    assert float(boundary_loss(face, Insulated(), u, du, norm, mat)) == pytest.approx(s * s)


def test_convective_and_dirichlet_targets():
    norm = NormalizationSpec.for_interval(WP, 0.0, 0.01)
    mat = constant_material(k=20)
    T = 800.0
    u = torch.full((3,), (T - 300) / 1700, dtype=DTYPE)
    # -k dT/dn = h (T - Tinf)  ->  dT/dn = -h (T - Tinf) / k
    dTdn = -10.0 * (T - 300.0) / 20.0
    du = torch.zeros((4, 3), dtype=DTYPE)
    du[3] = dTdn * norm.half[3] / 1700
    assert float(boundary_loss("z+", Convective(10.0, 300.0), u, du, norm, mat)) == pytest.approx(0.0, abs=1e-30)
    assert float(boundary_loss("z-", Dirichlet(300.0 + 170.0), torch.zeros(3, dtype=DTYPE), du, norm, mat)) \
        == pytest.approx(0.01)


def test_capture_weights():
    w = capture_weights(2.0, 4.0, 8.0)
    assert (w.ic, w.bc, w.pde) == (0.5, 0.25, 0.125)
    with pytest.warns(UserWarning, match="clamping"):
        w = capture_weights(0.0, 4.0, 1e-13)
    assert (w.ic, w.bc, w.pde) == (1.0, 0.25, 1.0)
    assert w.clamped == ("ic", "pde")


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
@settings(max_examples=50, deadline=None)
def test_weighted_initial_total_is_three(a, b, c):
    w = capture_weights(a, b, c)
    assert w.ic * a + w.bc * b + w.pde * c == pytest.approx(3.0, rel=1e-12)


# training --------------------------------------------------------------------

def _problem():
    return ThermalProblem(WP, constant_material(), LaserParams())


def test_initial_total_loss_counts_clamped_groups():
    with pytest.warns(UserWarning, match="clamping"):
        res = train_pinn(_problem(), SCEN, (0.0, 0.01), TINY)
    clamped = res.metadata["weights"]["clamped"]
    assert clamped == ["ic", "bc"]
    assert res.metadata["initial_total_loss"] == pytest.approx(3 - len(clamped), rel=1e-12)


def test_laser_off_random_init_relaxes_towards_initial_state():
    cfg = PinnConfig(hidden_layers=2, width=8, counts=CollocationCounts(512, 128, 64), output_init_scale=0.1,
                     lbfgs=LbfgsConfig(history_size=20, max_iterations=200))
    prob = ThermalProblem(WP, constant_material(), LaserParams(), BoundarySpec.uniform(Insulated()))
    res = train_pinn(prob, None, (0.0, 0.01), cfg)
    X = NormalizationSpec.for_interval(WP, 0, 0.01).from_unit(np.random.default_rng(0).uniform(-1, 1, (2000, 4)))
    assert np.max(np.abs(res.predict(X) - 300.0)) < 1.0
    trace = [r["total"] for r in res.metadata["trace"]]
    assert trace[-1] < 1e-2 * trace[0]


def test_laser_off_zero_init_is_exact():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = train_pinn(_problem(), None, (0.0, 0.01), TINY)
    X = NormalizationSpec.for_interval(WP, 0, 0.01).from_unit(np.random.default_rng(0).uniform(-1, 1, (500, 4)))
    np.testing.assert_array_equal(res.predict(X), 300.0)


def test_training_reduces_loss_and_is_deterministic(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = train_pinn(_problem(), SCEN, (0.0, 0.01), TINY)
        b = train_pinn(_problem(), SCEN, (0.0, 0.01), TINY)
    np.testing.assert_array_equal(a.model.pack(), b.model.pack())
    tr = [r["total"] for r in a.metadata["trace"]]
    assert tr[-1] < tr[0]
    assert all(y <= x for x, y in zip(tr, tr[1:]))
    assert {"ic", "bc", "pde", "bc[z+]"} <= set(a.metadata["trace"][1])
    a.save(tmp_path / "m.pbfm")
    back = TrainedPinn.load(tmp_path / "m.pbfm")
    X = np.array([[0.005, 5e-4, 3e-4, -1e-5], [0.0, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(back.predict(X), a.predict(X))
    assert back.metadata["weights"] == a.metadata["weights"]
    assert back.interval == (0.0, 0.01)


def test_pde_residual_of_initial_model_is_minus_source():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = train_pinn(_problem(), SCEN, (0.0, 0.01), PinnConfig(hidden_layers=1, width=4,
                         counts=CollocationCounts(16, 8, 8), lbfgs=LbfgsConfig(max_iterations=1)))
    from pbf_thermal.neural import MlpModel

    res.model = MlpModel.init(res.model.layer_sizes, 0, output_scale=0.0)
    X = np.array([[0.005, 5e-4, 3e-4, 0.0]])
    q = heat_source(X[:, 1], X[:, 2], X[:, 3], X[:, 0], SCEN, LaserParams())
    np.testing.assert_allclose(pde_residual(res, _problem(), SCEN, X), -q)


def test_regressor_params_and_validation():
    est = PinnRegressor(problem=_problem(), scenario=SCEN, hidden_layers=2, width=8, n_pde=128, n_ic=32, n_bc=16,
                        max_iterations=5)
    p = est.get_params()
    assert p["width"] == 8 and p["max_iterations"] == 5
    assert clone(est).get_params()["n_pde"] == 128
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 4)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est.fit()
    assert est.n_iter_ <= 5
    assert est.predict(np.zeros((3, 4))).shape == (3,)
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        est.predict(np.array([[np.nan, 0, 0, 0]]))


def test_config_validation():
    with pytest.raises(ValueError):
        PinnConfig(hidden_layers=0)
    with pytest.raises(ValueError):
        CollocationCounts(0, 1, 1)
    with pytest.raises(ValueError):
        ClusterConfig(1.5)
    with pytest.raises(ValueError):
        train_pinn(_problem(), SCEN, (0.01, 0.01), TINY)
