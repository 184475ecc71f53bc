import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptive_control.dynamics import ExtendedState, hjb_residual_scan, polynomial_model, wind_tunnel
from adaptive_control.errors import InvalidArgument, SolverError
from adaptive_control.filtering import InfoState, Prior
from adaptive_control.harness import estimate_cost
from adaptive_control.lq import solve_riccati
from adaptive_control.simulate import SimConfig
from adaptive_control.solver import (
    Axis,
    GridSpec,
    bellman_step,
    interp3,
    load_tables,
    policy_from_table,
    save_tables,
    solve,
    value_query,
)

SMALL = dict(a_axis=Axis(-3, 3, 13), upsilon_axis=Axis(-4, 8, 9), gamma_axis=Axis(0, 16, 5))
free = polynomial_model(b=[[1.0, 0, 1]], k=[[0.0, 0, 0, 0]], g=[[0.0, 0, 0]], n_controls=9)


def x(a=0.0, v=0.0, g=0.0, t=0.0):
    return ExtendedState(t, a, InfoState([v], [g]))


@pytest.fixture(scope="module")
def small_solution():
    m = wind_tunnel(n_controls=9)
    p = Prior.uniform(0, 1, 16)
    g = GridSpec(n_dyadic=3, **SMALL)
    vt, ft = solve(m, p, g)
    return m, p, g, vt, ft


def test_gridspec_validation():
    with pytest.raises(InvalidArgument):
        Axis(0, 1, 1)
    with pytest.raises(InvalidArgument):
        GridSpec(gamma_axis=Axis(-1, 1, 3))
    with pytest.raises(InvalidArgument):
        GridSpec(a_scale="log")
    with pytest.raises(InvalidArgument):
        GridSpec(n_dyadic=5, fine_dyadic=4)
    g = GridSpec.for_model(wind_tunnel())
    assert g.gamma_axis.hi == 16.0
    assert GridSpec.from_config(g.to_dict()) == g


def test_bellman_step_examples():
    g = GridSpec(n_dyadic=3, **SMALL)
    dt = g.step(1.0)
    p = Prior.uniform(0, 1, 8)
    assert bellman_step(free, p, lambda a, v, gg: np.full(a.shape, 3.5), 0.0, x(0.3, 1.0, 2.0), 1.0, g) == pytest.approx(3.5)
    assert bellman_step(free, p, lambda a, v, gg: a, 0.0, x(0.7), 0.0, g) == pytest.approx(0.7, abs=1e-14)
    assert bellman_step(free, p, lambda a, v, gg: a**2, 0.0, x(0.0), 0.0, g) == pytest.approx(dt, rel=1e-12)


def test_bellman_step_running_cost():
    m = wind_tunnel()
    g = GridSpec(n_dyadic=2, cost_rule="left", **SMALL)
    dt = g.step(1.0)
    val = bellman_step(m, Prior.point_mass(0.5), lambda a, v, gg: 0.0 * a, 0.0, x(1.0), 0.5, g)
    assert val == pytest.approx(dt * (2 * 1.0 + 2 * 0.25))


@given(st.integers(0, 2**32 - 1), st.sampled_from(["linear", "signed_square"]))
def test_bellman_monotone_and_constant_shift(seed, scale):
    r = np.random.default_rng(seed)
    m = wind_tunnel(n_controls=5)
    p = Prior.uniform(0, 1, 8)
    g = GridSpec(n_dyadic=2, a_scale=scale, **SMALL)
    w1 = r.normal(size=g.shape)
    w2 = w1 + r.uniform(0, 1, g.shape)
    s = x(r.uniform(-3, 3), r.uniform(-4, 8), r.uniform(0, 16))
    u = float(r.choice(m.controls.values))
    b1 = bellman_step(m, p, w1, 0.25, s, u, g)
    assert b1 <= bellman_step(m, p, w2, 0.25, s, u, g) + 1e-12
    assert bellman_step(m, p, w1 + 2.0, 0.25, s, u, g) == pytest.approx(b1 + 2.0, abs=1e-12)


def test_kernel_matches_numpy_step(small_solution):
    m, p, g, vt, ft = small_solution
    r = np.random.default_rng(3)
    for _ in range(12):
        k = int(r.integers(0, g.n_steps))
        ia, iv, ig = (int(r.integers(0, n)) for n in g.shape)
        s = x(g.a_axis.nodes[ia], g.upsilon_axis.nodes[iv], g.gamma_axis.nodes[ig], k * g.step(1.0))
        vals = [bellman_step(m, p, vt.values[k + 1], s.t, s, u, g) for u in m.controls.values]
        assert vt.values[k][ia, iv, ig] == pytest.approx(min(vals), rel=1e-12, abs=1e-12)
        best = [j for j in m.controls.order if vals[j] <= min(vals) + 1e-12 * max(1, abs(min(vals)))][0]
        assert ft.controls[k][ia, iv, ig] == pytest.approx(m.controls.values[best])


def test_terminal_and_positivity(small_solution):
    m, p, g, vt, ft = small_solution
    A, _, _ = g.mesh()
    np.testing.assert_array_equal(vt.values[-1], 5.0 * A**2)
    assert np.all(vt.values >= 0)
    assert set(np.unique(ft.controls)) <= set(m.controls.values)


def test_values_below_zero_control_cost(small_solution):
    m, p, g, vt, ft = small_solution
    a = g.a_axis.nodes
    zero = 2 * (a**2 + 0.5) + 5 * (a**2 + 1.0)
    inner = np.abs(a) <= 2
    assert np.all(vt.values[0][inner, 4, 0] <= zero[inner] + 1e-2)


def test_zero_costs_give_zero_and_smallest_control():
    g = GridSpec(n_dyadic=2, **SMALL)
    vt, ft = solve(free, Prior.uniform(0, 1, 8), g)
    assert np.all(vt.values == 0.0)
    assert np.all(ft.controls == 0.0)


def test_nan_aborts():
    bad = polynomial_model(b=[[1.0, 0, 1]], k=[[1.0, 0, 0, 0]], g=[[1.0, 0, 0]], n_controls=3)

    def g_nan(y, ell):
        return np.where(np.asarray(y) > 2.0, np.nan, 1.0) + 0.0 * np.asarray(ell)[..., 0]

    object.__setattr__(bad, "g", g_nan)
    with pytest.raises(SolverError) as err:
        solve(bad, Prior.uniform(0, 1, 4), GridSpec(n_dyadic=1, **SMALL))
    assert err.value.slice_index is not None


def test_point_mass_axes_inert():
    m = wind_tunnel(n_controls=9)
    g = GridSpec(n_dyadic=3, **SMALL)
    vt, _ = solve(m, Prior.point_mass(0.6), g)
    v0 = vt.values[0]
    spread = v0.max(axis=(1, 2)) - v0.min(axis=(1, 2))
    assert np.all(spread <= 1e-9 * (1 + np.abs(v0).max()))


def test_control_refinement_never_increases():
    m = wind_tunnel(n_controls=5)
    p = Prior.uniform(0, 1, 8)
    g = GridSpec(n_dyadic=3, **SMALL)
    v1, _ = solve(m, p, g)
    v2, _ = solve(m, p, g, controls=m.controls.refined())
    assert np.all(v2.values <= v1.values + 1e-12)


def test_dyadic_refinement_nested_scheme():
    m = wind_tunnel(n_controls=9)
    p = Prior.uniform(0, 1, 16)
    V = {}
    for n in (2, 3, 4):
        V[n] = solve(m, p, GridSpec(n_dyadic=n, fine_dyadic=4, **SMALL))[0].values
    assert np.all(V[3][::2] <= V[2] + 1e-12)
    assert np.all(V[4][::2] <= V[3] + 1e-12)
    # at the finest level the nested scheme is the plain scheme
    plain = solve(m, p, GridSpec(n_dyadic=4, **SMALL))[0].values
    np.testing.assert_array_equal(plain, V[4])


def test_value_query(small_solution):
    m, p, g, vt, ft = small_solution
    dt = g.step(1.0)
    node = (3, 4, 2)
    a, v, gg = (ax.nodes[i] for ax, i in zip((g.a_axis, g.upsilon_axis, g.gamma_axis), node))
    assert value_query(vt, 2 * dt, a, v, gg) == vt.values[2][node]
    lo, hi = vt.values[2][node], vt.values[3][node]
    assert value_query(vt, 2.25 * dt, a, v, gg) == pytest.approx(0.75 * lo + 0.25 * hi)
    aa = np.linspace(-3, 3, 7)
    np.testing.assert_allclose(value_query(vt, 1.0, aa, 0.3, 1.0), 5 * aa**2, rtol=1e-12)


def test_interp_reproduces_affine():
    g = GridSpec(a_scale="linear", **SMALL)
    A, V, G = g.mesh()
    table = 1.5 * A - 0.25 * V + 0.1 * G + 2.0
    r = np.random.default_rng(0)
    a, v, gg = r.uniform(-3, 3, 50), r.uniform(-4, 8, 50), r.uniform(0, 16, 50)
    np.testing.assert_allclose(interp3(g, table, a, v, gg), 1.5 * a - 0.25 * v + 0.1 * gg + 2.0, rtol=1e-12)
    sq = GridSpec(a_scale="signed_square", **SMALL)
    As, _, _ = sq.mesh()
    np.testing.assert_allclose(interp3(sq, As * np.abs(As), a, v, gg), a * np.abs(a), rtol=1e-12, atol=1e-12)


def test_policy_from_table(small_solution):
    m, p, g, vt, ft = small_solution
    pol = policy_from_table(ft)
    dt = g.step(1.0)
    node = (5, 2, 1)
    a, v, gg = (np.array([ax.nodes[i]]) for ax, i in zip((g.a_axis, g.upsilon_axis, g.gamma_axis), node))
    assert pol(3 * dt, a, v, gg)[0] == ft.controls[3][node]
    assert pol(3.7 * dt, a, v, gg)[0] == ft.controls[3][node]
    corner = ft.controls[0][-1, -1, -1]
    assert pol(0.0, np.array([50.0]), np.array([80.0]), np.array([100.0]))[0] == corner
    out = pol(0.01, np.linspace(-5, 5, 33), np.zeros(33), np.ones(33))
    assert set(np.unique(out)) <= set(m.controls.values)
    assert policy_from_table(ft, hold=True).decision_step == dt
    assert policy_from_table(ft).decision_step is None


def test_save_load_roundtrip(tmp_path, small_solution):
    m, p, g, vt, ft = small_solution
    path = tmp_path / "t.npz"
    save_tables(path, vt, ft, {"config_hash": "abc"})
    first = path.read_bytes()
    vt2, ft2, meta = load_tables(path)
    np.testing.assert_array_equal(vt2.values, vt.values)
    np.testing.assert_array_equal(ft2.controls, ft.controls)
    assert meta["config_hash"] == "abc" and vt2.grid == g
    save_tables(path, vt, ft, {"config_hash": "abc"})
    assert path.read_bytes() == first


def test_residual_scan_coarse_grid():
    m = wind_tunnel(n_controls=9)
    g = GridSpec(n_dyadic=3, a_axis=Axis(-4, 4, 8), upsilon_axis=Axis(-8, 8, 8), gamma_axis=Axis(0, 16, 8))
    vt, _ = solve(m, Prior.uniform(0, 1, 16), g)
    pts = [(0.5, 0.3, 0.5, 4.0), (0.5, -1.0, 2.0, 8.0), (0.0, 0.0, 0.0, 0.0)]
    out = hjb_residual_scan(vt, m, Prior.uniform(0, 1, 16), pts)
    assert out["n_used"] == 2 and out["n_skipped"] == 1 and np.isfinite(out["max"])


@pytest.mark.slow
def test_point_mass_against_riccati_small():
    m = wind_tunnel()
    lam = 0.6
    g = GridSpec(n_dyadic=5, a_axis=Axis(-4, 4, 49), upsilon_axis=Axis(-8, 8, 5), gamma_axis=Axis(0, 16, 3))
    vt, _ = solve(m, Prior.point_mass(lam), g)
    sol = solve_riccati(lam, m.lq_params)
    for a in (-1.0, 0.0, 1.5):
        exact = float(sol.value(0.0, a))
        assert value_query(vt, 0.0, a, 0.0, 0.0) == pytest.approx(exact, rel=0.03)


@pytest.mark.slow
def test_rollout_consistency_point_mass():
    m = wind_tunnel()
    lam = 0.6
    g = GridSpec(n_dyadic=5, a_axis=Axis(-4, 4, 49), upsilon_axis=Axis(-8, 8, 5), gamma_axis=Axis(0, 16, 3))
    prior = Prior.point_mass(lam)
    vt, ft = solve(m, prior, g)
    cfg = SimConfig(n_steps=128, seed=11, mode="innovations")
    x0 = ExtendedState(0.0, 1.0, InfoState([0.0], [0.0]))
    est = estimate_cost(m, prior, policy_from_table(ft), 0.0, x0, 100_000, cfg)
    v = float(value_query(vt, 0.0, 1.0, 0.0, 0.0))
    # budget: Euler bias O(dt) plus O(h^2) interpolation of a slowly varying table
    bias_tol = 0.02 * v
    assert abs(est.mean - v) <= 3 * est.stderr + bias_tol, (est, v)
