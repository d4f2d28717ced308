import math
import warnings

import numpy as np
import pytest

from conftest import constant_material
from fd_oracles import gaussian_1d
from pbf_thermal.fd import (
    BlowUpError,
    BoundarySpec,
    Convective,
    Dirichlet,
    FdConfig,
    FdSolver,
    Grid,
    Insulated,
    Neumann,
    TemperatureField,
    apply_boundary,
    solve,
    stable_dt,
    step,
    thermal_energy,
)
from pbf_thermal.laser import LaserParams, Scenario, Track, Workpiece
from pbf_thermal.material import HASTELLOY_X

INSULATED = BoundarySpec.uniform(Insulated())


def test_stable_dt_isotropic(const_mat):
    h = 1e-4
    g = Grid(5, 5, 5, h, h, h)
    alpha = 20.0 / (8000.0 * 500.0)
    assert stable_dt(g, const_mat, 0.5) == pytest.approx(0.5 * h * h / (6 * alpha), rel=1e-12)


def test_stable_dt_scaling(const_mat):
    g1 = Grid(5, 5, 5, 1e-4, 2e-4, 3e-4)
    g2 = Grid(5, 5, 5, 2e-4, 4e-4, 6e-4)
    assert stable_dt(g2, const_mat) == pytest.approx(4 * stable_dt(g1, const_mat), rel=1e-12)


def test_stable_dt_hastelloy():
    # oracle: 1 K scan of alpha(T) gives 8.29992054e-5 m^2/s -> 4.51811554e-6 s
    g = Grid(5, 5, 5, 50e-6, 50e-6, 50e-6)
    assert stable_dt(g, HASTELLOY_X, 0.9) == pytest.approx(4.5181155428255825e-06, rel=1e-6)
    with pytest.raises(ValueError):
        stable_dt(g, HASTELLOY_X, 0.0)


def test_uniform_field_is_fixed_point(const_mat):
    g = Grid(6, 5, 4, 1e-4, 1e-4, 1e-4)
    f = TemperatureField(g, 0.0, np.full(g.shape, 400.0))
    out = step(f, 1e-3, None, None, const_mat, INSULATED)
    np.testing.assert_array_equal(out.values, f.values)


def test_single_node_stencil(const_mat):
    h = 1e-4
    g = Grid(7, 7, 7, h, h, h)
    T = np.full(g.shape, 300.0)
    dT = 10.0
    T[3, 3, 3] += dT
    f = TemperatureField(g, 0.0, T)
    dt = 0.5 * stable_dt(g, const_mat)
    out = step(f, dt, None, None, const_mat, INSULATED)
    a = dt * 20.0 / (8000.0 * 500.0) * dT / h**2
    assert out.values[3, 3, 3] == pytest.approx(300.0 + dT - 6 * a, rel=1e-14)
    for idx in [(2, 3, 3), (4, 3, 3), (3, 2, 3), (3, 4, 3), (3, 3, 2), (3, 3, 4)]:
        assert out.values[idx] == pytest.approx(300.0 + a, rel=1e-14)


def _run_1d(n, mat, n_steps=None, t_end=None, safety=0.9):
    """Gaussian bump along x with insulated faces; thin 3-node y and z axes."""
    L = 2e-3
    h = L / (n - 1)
    g = Grid(n, 3, 3, h, h, h)
    alpha = 20.0 / (8000.0 * 500.0)
    x = np.linspace(0.0, L, n)
    s0, amp = 0.1e-3, 100.0
    T = 300.0 + gaussian_1d(x, 0.0, L / 2, amp, s0, alpha)[:, None, None] * np.ones((1, 3, 3))
    f = TemperatureField(g, 0.0, T)
    dt = stable_dt(g, mat, safety)
    if t_end is not None:
        n_steps = math.ceil(t_end / dt)
        dt = t_end / n_steps
    solver = FdSolver(g, mat, INSULATED)
    for k in range(n_steps):
        f = solver.step(f, dt)
    exact = 300.0 + gaussian_1d(x, n_steps * dt, L / 2, amp, s0, alpha)
    return f.values[:, 1, 1], exact, amp


def test_gaussian_1d_heat_kernel(const_mat):
    num, exact, amp = _run_1d(81, const_mat, n_steps=100)
    assert np.max(np.abs(num - exact)) / amp < 0.01


def test_second_order_spatial_convergence(const_mat):
    errs = []
    for n in (41, 81, 161):
        num, exact, amp = _run_1d(n, const_mat, t_end=2e-3)
        errs.append(np.max(np.abs(num - exact)))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 4 * 0.7 < r1 < 4 * 1.3
    assert 4 * 0.7 < r2 < 4 * 1.3


def test_time_refinement_trend():
    wp = Workpiece(0.4e-3, 0.4e-3, 0.2e-3)
    sc = Scenario((Track(1, (0.0, 0.2e-3), (0.4e-3, 0.2e-3)),), 0.1)
    base = dict(workpiece=wp, spacing=50e-6, scenario=sc, laser=LaserParams(radius=200e-6), end_time=1e-3)
    dt0 = stable_dt(FdConfig(**base).grid(), HASTELLOY_X)
    finals = [solve(FdConfig(**base, dt=dt0 / 2**k)).snapshots[-1].values for k in range(3)]
    d1 = np.max(np.abs(finals[1] - finals[0]))
    d2 = np.max(np.abs(finals[2] - finals[1]))
    assert d2 < d1


def test_energy_conservation_insulated():
    g = Grid(20, 20, 20, 25e-6, 25e-6, 25e-6)
    X, Y, Z = g.mesh()
    c = 237.5e-6
    T = 300.0 + 400.0 * np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) / (2 * (80e-6) ** 2))
    f = TemperatureField(g, 0.0, T)
    cp0 = HASTELLOY_X.heat_capacity(T)
    e0 = thermal_energy(f, HASTELLOY_X.density, cp0)
    solver = FdSolver(g, HASTELLOY_X, INSULATED)
    dt = stable_dt(g, HASTELLOY_X)
    for _ in range(1000):
        f = solver.step(f, dt)
    e1 = thermal_energy(f, HASTELLOY_X.density, cp0)
    assert abs(e1 - e0) / e0 < 0.005


def test_xy_transpose_invariance():
    wp = Workpiece(0.5e-3, 0.3e-3, 0.2e-3)
    wpT = Workpiece(0.3e-3, 0.5e-3, 0.2e-3)
    las = LaserParams(radius=150e-6)
    sc = Scenario((Track(1, (0.0, 0.15e-3), (0.5e-3, 0.15e-3)),), 0.1)
    scT = Scenario((Track(1, (0.15e-3, 0.0), (0.15e-3, 0.5e-3)),), 0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = solve(FdConfig(wp, 25e-6, sc, las, end_time=1e-3)).snapshots[-1].values
        b = solve(FdConfig(wpT, 25e-6, scT, las, end_time=1e-3)).snapshots[-1].values
    np.testing.assert_allclose(a, b.transpose(1, 0, 2), rtol=1e-12, atol=0)


def test_dirichlet_and_insulated_faces(const_mat):
    g = Grid(4, 4, 4, 1e-4, 1e-4, 1e-4)
    f = TemperatureField(g, 0.0, np.random.default_rng(0).uniform(300, 400, g.shape))
    bc = BoundarySpec({**INSULATED.faces, "z-": Dirichlet(300.0)})
    apply_boundary(f, bc, const_mat)
    assert np.all(f.values[:, :, 0] == 300.0)
    u = TemperatureField(g, 0.0, np.full(g.shape, 350.0))
    apply_boundary(u, INSULATED, const_mat)
    assert np.all(u.values == 350.0)


def test_convective_face_cools(const_mat):
    g = Grid(4, 4, 4, 1e-4, 1e-4, 1e-4)
    T = np.full(g.shape, 1000.0)
    ins = apply_boundary(TemperatureField(g, 0.0, T.copy()), INSULATED, const_mat)
    conv = apply_boundary(TemperatureField(g, 0.0, T.copy()),
                          BoundarySpec({**INSULATED.faces, "z+": Convective(1e4, 300.0)}), const_mat)
    assert np.all(conv.values[:, :, -1] < ins.values[:, :, -1])
    # one-sided algebra: -k (T_f - T_a)/d = h (T_f - T_inf)
    Tf = conv.values[1, 1, -1]
    assert -20.0 * (Tf - 1000.0) / 1e-4 == pytest.approx(1e4 * (Tf - 300.0), rel=1e-12)


def test_neumann_face(const_mat):
    g = Grid(4, 4, 4, 1e-4, 1e-4, 1e-4)
    f = TemperatureField(g, 0.0, np.full(g.shape, 300.0))
    apply_boundary(f, BoundarySpec({**INSULATED.faces, "x+": Neumann(1e5)}), const_mat)
    assert f.values[-1, 2, 2] == pytest.approx(300.0 + 1e5 * 1e-4)


def test_laser_off_stays_uniform():
    wp = Workpiece(0.4e-3, 0.4e-3, 0.2e-3)
    run = solve(FdConfig(wp, 50e-6, None, None, end_time=1e-3, snapshot_times=[0.0, 1e-3]))
    for s in run.snapshots:
        np.testing.assert_allclose(s.values, 300.0, rtol=0, atol=1e-9)


def test_single_track_melts_on_coarse_grid():
    # 40 x 24 x 12 cells over 1 x 0.6 x 0.3 mm, track end after 10 ms
    wp = Workpiece(1e-3, 0.6e-3, 0.3e-3)
    sc = Scenario((Track(1, (0.0, 0.3e-3), (1e-3, 0.3e-3)),), 0.1)
    run = solve(FdConfig(wp, 25e-6, sc, LaserParams()))
    assert run.grid.shape == (41, 25, 13)
    assert run.snapshots[-1].values.max() > 1600.0
    assert run.snapshots[-1].time == pytest.approx(0.01)


def test_determinism_bitwise():
    wp = Workpiece(0.4e-3, 0.4e-3, 0.2e-3)
    sc = Scenario((Track(1, (0.0, 0.2e-3), (0.4e-3, 0.2e-3)),), 0.1)
    cfg = FdConfig(wp, 50e-6, sc, LaserParams(radius=200e-6), snapshot_times=[1e-3, 4e-3])
    a, b = solve(cfg), solve(cfg)
    for x, y in zip(a.snapshots, b.snapshots):
        assert x.values.tobytes() == y.values.tobytes()
    assert [s.time for s in a.snapshots] == [s.time for s in b.snapshots]


def test_blow_up_names_node_and_step(const_mat):
    g = Grid(5, 5, 5, 1e-4, 1e-4, 1e-4)
    T = np.full(g.shape, 300.0)
    T[2, 2, 2] = 2000.0
    solver = FdSolver(g, const_mat, INSULATED)
    f = TemperatureField(g, 0.0, T)
    with pytest.raises(BlowUpError, match=r"node \(\d+, \d+, \d+\) at step \d+"):
        for n in range(1, 200):
            f = solver.step(f, 50 * stable_dt(g, const_mat), step_index=n)


def test_under_resolved_radius_warns():
    g = Grid(5, 5, 5, 200e-6, 200e-6, 200e-6)
    sc = Scenario((Track(1, (0.0, 0.0), (1e-3, 0.0)),), 0.1)
    with pytest.warns(UserWarning, match="nodes"):
        FdSolver(g, HASTELLOY_X, BoundarySpec.default(), LaserParams(), sc)


def test_field_validation_and_flat_order():
    g = Grid(3, 4, 5, 1.0, 1.0, 1.0)
    v = np.arange(60, dtype=float).reshape(g.shape) + 1
    f = TemperatureField(g, 0.0, v)
    assert f.flat()[1] == v[1, 0, 0]  # x fastest
    np.testing.assert_array_equal(g.points()[1], [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        Grid(2, 3, 3, 1.0, 1.0, 1.0)


def test_boundary_spec_round_trip():
    bc = BoundarySpec.default()
    assert BoundarySpec.from_dict(bc.to_dict()) == bc
    assert isinstance(bc["z+"], Convective) and isinstance(bc["z-"], Dirichlet)
    with pytest.raises(ValueError):
        BoundarySpec.from_dict({"w+": {"kind": "insulated"}})
