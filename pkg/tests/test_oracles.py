import numpy as np
import pytest

from jumpfilter.model import LevyMeasureSpec, moment_function
from jumpfilter.oracles import (
    GridConfigError,
    GridSolution,
    LinearModel,
    NumericalFailure,
    SimpleProcessFixture,
    grid_zakai_1d,
    kalman_bucy,
    projection_theorem_test,
    shipped_fixtures,
    write_comparison_csv,
)
from jumpfilter.particle_filter import FilterConfig, run_filter
from jumpfilter.paths import ObservationDecomposition, TimeGrid, decompose_observation, sample_noise
from jumpfilter.simulator import initial_states, simulate_system
from jumpfilter.zoo import build_model

from conftest import make_spec


def observe(spec, n_steps, seed):
    g = TimeGrid(spec.horizon_T, n_steps)
    noise = sample_noise(spec, g, seed)
    path = simulate_system(spec, g, noise, initial_states(spec, 1, seed)[0])
    return decompose_observation(spec, g, path.y, mode="oracle", atoms=noise.atoms1)


def quiet_obs(g, atoms=(np.zeros(0), np.zeros((0, 1)))):
    """Observation record with zero continuous increments."""
    n = g.n_steps
    return ObservationDecomposition(g, np.zeros((n + 1, 1)), np.zeros((n, 1)), atoms, np.zeros(1), "oracle")


# --- Kalman-Bucy ------------------------------------------------------------------


def test_linear_model_validation():
    with pytest.raises(ValueError):
        LinearModel(-1.0, 1.0, 1.0, 0.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        LinearModel(np.eye(2), np.ones(2), np.eye(2), np.zeros(2), np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    m = LinearModel.from_params({"A": -1.0, "H": 1.0, "sigma": 1.0, "rho": 0.5, "m0": 1.0, "P0": 0.5})
    assert m.dim_x == 1 and m.rho.shape == (1, 1)


def test_no_information_riccati():
    # H = 0, rho = 0, A = 0, sigma = 1: P_t = P0 + t
    g = TimeGrid(2.0, 200)
    res = kalman_bucy(LinearModel(0.0, 0.0, 1.0, 0.0, 0.3, 0.5), np.random.default_rng(0).normal(size=200), g)
    np.testing.assert_allclose(res.variance[:, 0], 0.5 + g.t, rtol=1e-12)
    assert np.all(res.mean == 0.3)


@pytest.mark.parametrize("rho,p_star", [(0.0, np.sqrt(2) - 1), (0.5, (-3 + np.sqrt(13)) / 2)])
def test_stationary_riccati(rho, p_star):
    # 0 = -2p + 1 + rho^2 - (p + rho)^2
    g = TimeGrid(20.0, 20_000)
    res = kalman_bucy(LinearModel(-1.0, 1.0, 1.0, rho, 0.0, 2.0), np.zeros(g.n_steps), g)
    assert res.variance[-1, 0] == pytest.approx(p_star, rel=2e-3)


def test_degenerate_noise_free_model():
    g = TimeGrid(1.0, 100)
    res = kalman_bucy(LinearModel(-1.0, 1.0, 0.0, 0.0, 2.0, 0.0), np.random.default_rng(1).normal(size=100), g)
    assert np.all(res.cov == 0.0)
    np.testing.assert_allclose(res.mean[:, 0], 2.0 * (1 - g.dt) ** np.arange(101), rtol=1e-12)


def test_covariance_failure_detected():
    g = TimeGrid(1.0, 1)  # dt = 1 overshoots: P = 10 + (1 - 100) < 0
    with pytest.raises(NumericalFailure):
        kalman_bucy(LinearModel(0.0, 1.0, 1.0, 0.0, 0.0, 10.0), np.zeros(1), g)


def test_covariance_symmetric_2d():
    A = np.array([[-1.0, 0.3], [-0.2, -0.5]])
    m = LinearModel(A, np.array([[1.0, 0.5]]), np.eye(2), np.array([[0.2], [0.1]]), np.zeros(2), np.eye(2))
    res = kalman_bucy(m, np.random.default_rng(2).normal(size=(500, 1)) * 0.045, TimeGrid(1.0, 500))
    np.testing.assert_array_equal(res.cov, np.swapaxes(res.cov, 1, 2))
    assert np.all(np.linalg.eigvalsh(res.cov) > 0)


def test_particle_filter_tracks_kalman():
    spec = build_model("linear_gaussian", {"rho": 0.5})
    obs = observe(spec, 200, 3)
    kb = kalman_bucy(LinearModel.from_params(spec.params), np.diff(obs.y, axis=0), obs.grid)
    out = run_filter(spec, obs, FilterConfig(4000, "systematic", mode="fkk"), 3,
                     test_functions=[moment_function(1, 0, 1), moment_function(1, 0, 2)])
    mean = out.P_phi[:, 1]
    var = out.P_phi[:, 2] - mean**2
    assert np.sqrt(np.mean((mean - kb.mean[:, 0]) ** 2)) / np.sqrt(np.mean(kb.mean[:, 0] ** 2)) < 0.05
    assert var[-1] == pytest.approx(kb.variance[-1, 0], rel=0.1)


# --- grid Zakai -----------------------------------------------------------------------


def test_heat_variance_grows_by_t():
    spec = make_spec(sigma=1.0, prior=(0.0, 0.5))
    g = TimeGrid(1.0, 200)
    sol = grid_zakai_1d(spec, quiet_obs(g), np.linspace(-10, 10, 801))
    assert sol.variance()[-1] - sol.variance()[0] == pytest.approx(1.0, rel=0.02)
    np.testing.assert_allclose(sol.mass(), 1.0, rtol=1e-12)


def test_transport_speed_one():
    spec = make_spec(b=1.0, sigma=0.01, prior=(-1.0, 0.01))
    g = TimeGrid(1.0, 400)
    mesh = np.linspace(-3, 3, 1201)
    sol = grid_zakai_1d(spec, quiet_obs(g), mesh)
    mode0, mode1 = mesh[np.argmax(sol.density[0])], mesh[np.argmax(sol.density[-1])]
    assert mode1 - mode0 == pytest.approx(1.0, rel=0.02)
    assert sol.mean()[-1] - sol.mean()[0] == pytest.approx(1.0, rel=0.02)


def test_observed_atom_shifts_density_exactly():
    h = 1.0 / 128  # dyadic width so c / h is exactly 25
    mesh = np.arange(-400, 401) * h
    c = 25 * h
    spec = make_spec(xi=lambda t, z, m: c * m, nu1=LevyMeasureSpec.atomic([1.0], [1e-300]), prior=(0.0, 0.1))
    g = TimeGrid(1.0, 10)
    sol = grid_zakai_1d(spec, quiet_obs(g, (np.array([0.45]), np.array([[1.0]]))), mesh)
    k = int(g.step_of(0.45))
    before, after = sol.density[k], sol.density[k + 1]
    np.testing.assert_array_equal(after[25:-1], before[:-26])
    np.testing.assert_array_equal(after[:25], 0.0)
    # mass pushed past the mesh end is kept in the boundary cell
    assert after[-1] == pytest.approx(before[-26:].sum(), rel=1e-12)


def test_grid_mass_conservation_without_B():
    spec = build_model("ou_jump", {"h": 0.0})
    obs = observe(spec, 400, 2)
    sol = grid_zakai_1d(spec, obs, np.linspace(-4, 6, 501))
    rel = np.abs(np.diff(sol.mass())) / sol.mass()[:-1]
    assert np.max(rel) <= 1e-8


def test_grid_matches_particles_on_jump_model():
    spec = build_model("ou_jump")
    obs = next(o for o in (observe(spec, 400, s) for s in range(50)) if o.atoms1[0].size)
    sol = grid_zakai_1d(spec, obs, np.linspace(-4, 6, 401))
    out = run_filter(spec, obs, FilterConfig(8000, "systematic", mode="fkk"), 1, test_functions=[moment_function(1)])
    assert out.mu_phi[-1, 1] == pytest.approx(sol.moment(1)[-1], rel=0.05)
    assert out.mu_one[-1] == pytest.approx(sol.mass()[-1], rel=0.05)


def test_grid_config_errors():
    g = TimeGrid(1.0, 10)
    mesh = np.linspace(-1, 1, 21)
    with pytest.raises(GridConfigError, match="Courant"):
        grid_zakai_1d(make_spec(b=100.0), quiet_obs(g), mesh)
    with pytest.raises(GridConfigError):
        grid_zakai_1d(build_model("rotation"), quiet_obs(g), mesh)
    with pytest.raises(GridConfigError):
        grid_zakai_1d(build_model("scaled_jump"), quiet_obs(g), mesh)
    with pytest.raises(GridConfigError):
        grid_zakai_1d(make_spec(), quiet_obs(g), np.array([0.0, 0.1, 0.3]))
    with pytest.raises(GridConfigError):
        grid_zakai_1d(make_spec(rho=lambda t, z: z[:, 0]), quiet_obs(g), mesh)


def test_grid_solution_moments():
    mesh = np.array([-1.0, 0.0, 1.0])
    sol = GridSolution(TimeGrid(1.0, 1), mesh, np.array([[1.0, 2.0, 1.0], [0.0, 1.0, 3.0]]))
    np.testing.assert_allclose(sol.mass(), [4.0, 4.0])
    np.testing.assert_allclose(sol.mean(), [0.0, 0.75])
    np.testing.assert_allclose(sol.variance(), [0.5, 0.75 - 0.5625])


# --- projection fixtures -------------------------------------------------------------


@pytest.mark.parametrize("fx", shipped_fixtures(), ids=lambda f: f.name)
def test_shipped_fixture_passes(fx):
    rep = projection_theorem_test(fx, 100_000, 0)
    assert rep.passed, rep.bins
    if fx.expect_zero:
        assert rep.conditional_is_zero


def test_constant_integrand_rhs_is_exact():
    fx = shipped_fixtures()[0]
    rep = projection_theorem_test(fx, 10_000, 1)
    assert all(b["discrepancy"] == 0.0 for b in rep.bins)


def test_wrong_conditional_is_rejected():
    zero = lambda inp: np.zeros((inp["U"].size, 1))  # noqa: E731
    fx = SimpleProcessFixture("bad", (0.0, 1.0), "w1", lambda inp: np.full((inp["U"].size, 1), 0.7), zero,
                              lambda inp: inp["W1"][:, -1], 0.7)
    assert not projection_theorem_test(fx, 20_000, 0).passed


def test_bin_starvation_reported():
    fx = shipped_fixtures()[1]
    rep = projection_theorem_test(fx, 100, 0, n_bins=5, min_count=30)
    assert len(rep.excluded) == 5 and not rep.passed and rep.notes


def test_fixture_validation():
    f = lambda inp: np.zeros((inp["U"].size, 1))  # noqa: E731
    with pytest.raises(ValueError):
        SimpleProcessFixture("x", (0.0, 1.0), "w2", f, f, f, 1.0)
    with pytest.raises(ValueError):
        SimpleProcessFixture("x", (0.5, 1.0), "w1", f, f, f, 1.0)
    big = SimpleProcessFixture("x", (0.0, 1.0), "w1", lambda inp: np.full((inp["U"].size, 1), 5.0), f,
                               lambda inp: inp["U"], 1.0)
    with pytest.raises(ValueError):
        projection_theorem_test(big, 100, 0)


def test_comparison_csv(tmp_path):
    file = write_comparison_csv(tmp_path / "c.csv", [0.0, 0.5], [1.0, 2.0], [1.1, 2.1], [0.1, 0.2], [0.3, 0.4])
    lines = file.read_text().splitlines()
    assert lines[0] == "t,oracle_mean,filter_mean,oracle_var,filter_var"
    assert lines[2] == "0.5,2.0,2.1,0.2,0.4"
