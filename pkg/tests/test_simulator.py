import numpy as np
import pytest

from jumpfilter.model import LevyMeasureSpec, builtin_test_functions
from jumpfilter.paths import TimeGrid, decompose_observation, sample_noise, sample_noise_batch
from jumpfilter.simulator import (
    SchemeConfig,
    compensator,
    estimate_moment_bound,
    initial_states,
    simulate_batch,
    simulate_signal_under_Q,
    simulate_system,
)
from jumpfilter.zoo import build_model

from conftest import make_spec


def test_zero_model_stays_put():
    spec = build_model("zero")
    g = TimeGrid(1.0, 50)
    z0 = np.array([0.3, -1.2])
    noise = sample_noise(spec, g, 0)
    path = simulate_system(spec, g, noise, z0)
    assert np.all(path.x == 0.3)
    # dV enters Y with unit coefficient, so only the noiseless path is constant in Y
    np.testing.assert_allclose(path.y[:, 0], -1.2 + np.concatenate([[0.0], np.cumsum(noise.dV[:, 0])]), atol=1e-14)
    still = simulate_system(spec, g, noise.zeroed(), z0)
    assert np.all(still.z == z0)


def test_constant_drift_is_exact():
    spec = build_model("constant_drift", {"c": 1.0})
    g = TimeGrid(1.0, 64)  # dt a power of two keeps the sum exact
    path = simulate_system(spec, g, sample_noise(spec, g, 0), np.zeros(2))
    assert path.x[-1, 0] == 1.0
    np.testing.assert_array_equal(path.x[:, 0], g.t)


def test_ou_stationary_variance():
    spec = make_spec(b=lambda t, z: -z[:, 0], sigma=1.0, T=20.0, prior=(0.0, 0.5))
    g = TimeGrid(20.0, 2000)
    P = 4000
    res = simulate_batch(spec, g, sample_noise_batch(spec, g, 1, P), initial_states(spec, P, 1), record=False)
    # Euler on dX = -X dt + dW has stationary variance dt / (1 - (1 - dt)^2) = 1 / (2 - dt)
    var = res.x_final[:, 0].var(ddof=1)
    se = var * np.sqrt(2.0 / (P - 1))
    assert abs(var - 1.0 / (2.0 - g.dt)) <= 3 * se
    assert abs(var - 0.5) <= 3 * se + 0.01


def test_shared_jump_in_same_step():
    spec = build_model("ou_jump", {"sigma": 0.0, "kappa": 0.0, "h": 0.0, "nu0_masses": []})
    g = TimeGrid(1.0, 100)
    for seed in range(10):
        noise = sample_noise(spec, g, seed)
        if noise.atoms1[0].size:
            break
    path = simulate_system(spec, g, noise, np.array([0.0, 0.0]))
    steps = noise.steps1()
    dx, dy = np.diff(path.x[:, 0]), np.diff(path.y[:, 0])
    comp = spec.levy_nu1.mean_mark()[0] * g.dt
    np.testing.assert_allclose(dx[steps] + comp, noise.atoms1[1][:, 0], atol=1e-12)
    np.testing.assert_allclose(dy - noise.dV[:, 0], dx, atol=1e-12)


def test_zero_noise_reduces_to_euler_ode():
    spec = build_model("ou_jump")
    g = TimeGrid(1.0, 200)
    path = simulate_system(spec, g, sample_noise(spec, g, 0).zeroed(), np.array([2.0, 0.0]))
    # dx = kappa (theta - x) - compensator, with compensator = 0.3 + (0.5 - 0.25)
    x = 2.0
    for _ in range(g.n_steps):
        x += g.dt * (1.0 * (1.0 - x) - 0.55)
    assert path.x[-1, 0] == pytest.approx(x, rel=1e-12)
    exact = 0.45 + (2.0 - 0.45) * np.exp(-1.0)
    assert abs(path.x[-1, 0] - exact) < 2 * g.dt


def test_compensator_values():
    spec = build_model("ou_jump")
    z = np.zeros((3, 2))
    np.testing.assert_allclose(compensator(spec, 0.0, z), 0.3 + 0.5 - 0.25)


def test_jump_adapted_keeps_grid_noise():
    spec = build_model("ou_jump", {"sigma": 0.0, "kappa": 0.0, "h": 0.0})
    g = TimeGrid(1.0, 20)
    noise = sample_noise(spec, g, 2)
    a = simulate_system(spec, g, noise, np.array([0.0, 0.0]))
    b = simulate_system(spec, g, noise, np.array([0.0, 0.0]), SchemeConfig(20, jump_adapted=True))
    # with constant coefficients the inserted nodes change nothing
    np.testing.assert_allclose(a.x, b.x, atol=1e-12)
    np.testing.assert_allclose(a.vtilde_increments, b.vtilde_increments, atol=1e-12)


def test_rejected_and_exited_paths():
    spec = make_spec(b=lambda t, z: 1e200 * z[:, 0] ** 2, growth=(1, 1, 1, 1))
    g = TimeGrid(1.0, 10)
    path = simulate_system(spec, g, sample_noise(spec, g, 0), np.array([1.0, 0.0]))
    assert path.status == "rejected"
    assert "first_non_finite_node" in path.diagnostics
    spec = build_model("constant_drift")
    path = simulate_system(spec, g, sample_noise(spec, g, 0).zeroed(), np.zeros(2), SchemeConfig(10, clip_radius=0.5))
    assert path.status == "exited" and path.diagnostics["exit_node"] == 6


def test_simulate_system_checks():
    spec = build_model("zero")
    g = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        simulate_system(spec, g, sample_noise(spec, g, 0), np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        simulate_system(spec, g, sample_noise(spec, TimeGrid(1.0, 5), 0), np.zeros(2))
    with pytest.raises(ValueError):
        SchemeConfig(0)


def test_batch_matches_single_paths():
    spec = build_model("ou_jump")
    g = TimeGrid(1.0, 50)
    z0 = initial_states(spec, 3, 4)
    res = simulate_batch(spec, g, sample_noise_batch(spec, g, 4, 3), z0)
    for p in range(3):
        path = simulate_system(spec, g, sample_noise(spec, g, 4, p), z0[p])
        np.testing.assert_allclose(res.x[p], path.x, atol=1e-13)
        np.testing.assert_allclose(res.y[p], path.y, atol=1e-13)


def test_weak_convergence_ou():
    # X_T for b = -x, sigma = 1, X_0 ~ N(0, 1): N(0, e^{-2} + (1 - e^{-2}) / 2)
    spec = make_spec(b=lambda t, z: -z[:, 0], sigma=1.0)
    g = TimeGrid(1.0, 100)
    P = 20_000
    x = simulate_batch(spec, g, sample_noise_batch(spec, g, 3, P), initial_states(spec, P, 3), record=False).x_final
    v = np.exp(-2) + (1 - np.exp(-2)) / 2
    for f in builtin_test_functions(1)[1:]:
        vals = f.value(x)
        ref = f.value(np.sqrt(v) * np.random.default_rng(0).standard_normal((400_000, 1))).mean()
        assert abs(vals.mean() - ref) <= 3 * vals.std() / np.sqrt(P) + 0.02, f.name


# --- under Q ---------------------------------------------------------------------


def _obs(spec, g, seed):
    noise = sample_noise(spec, g, seed)
    path = simulate_system(spec, g, noise, initial_states(spec, 1, seed)[0])
    return decompose_observation(spec, g, path.y, mode="oracle", atoms=noise.atoms1), path


def test_no_coupling_ignores_observation():
    spec = make_spec(b=lambda t, z: -z[:, 0], sigma=1.0, B=lambda t, z: z[:, 0], nu0=LevyMeasureSpec.atomic([0.3], [1.0]),
                     eta=lambda t, z, m: m)
    g = TimeGrid(1.0, 50)
    obs_a, _ = _obs(spec, g, 1)
    obs_b, _ = _obs(spec, g, 2)
    pn = sample_noise(spec, g, 99)
    np.testing.assert_array_equal(simulate_signal_under_Q(spec, g, obs_a, pn, [0.2]),
                                  simulate_signal_under_Q(spec, g, obs_b, pn, [0.2]))


def test_zero_B_under_Q_equals_P():
    spec = build_model("ou_jump", {"h": 0.0, "rho": 0.5})
    g = TimeGrid(1.0, 80)
    noise = sample_noise(spec, g, 6)
    z0 = initial_states(spec, 1, 6)[0]
    path = simulate_system(spec, g, noise, z0)
    obs = decompose_observation(spec, g, path.y, mode="oracle", atoms=noise.atoms1)
    xq = simulate_signal_under_Q(spec, g, obs, noise, z0[:1])
    np.testing.assert_allclose(xq, path.x, atol=1e-12)


def test_particle_jumps_by_observed_marks():
    spec = make_spec(xi=lambda t, z, m: m, nu1=LevyMeasureSpec.atomic([0.5, -0.5], [1.0, 1.0]))
    g = TimeGrid(1.0, 100)
    obs, _ = _obs(spec, g, 5)
    assert obs.atoms1[0].size > 0
    pn = sample_noise(spec, g, 1).zeroed()
    x = simulate_signal_under_Q(spec, g, obs, pn, [0.0])
    # symmetric atoms: zero compensator, so the particle moves only at observed jumps
    np.testing.assert_allclose(np.diff(x[:, 0]), obs.jump_sums()[:, 0], atol=1e-14)


# --- moments --------------------------------------------------------------------


def test_moment_bound_trivial_cases():
    g = TimeGrid(1.0, 20)
    # zero coefficients: sup |Z| is sup |V| of the observation noise
    spec = build_model("zero")
    est = estimate_moment_bound(spec, 2.0, 10, g, seed=3, refine=False)
    noise = sample_noise_batch(spec, g, 3, 10)
    v = np.concatenate([np.zeros((10, 1)), np.cumsum(noise.dV[:, :, 0], axis=1)], axis=1)
    assert est.estimate == pytest.approx(np.mean(np.max(np.abs(v), axis=1) ** 2), rel=1e-12)
    # b = 1 with h = 0 has sup |X| = 1 only when the observation noise is ignored
    est = estimate_moment_bound(build_model("constant_drift"), 1.0, 200, g, refine=False)
    assert est.estimate >= 1.0
    with pytest.raises(ValueError):
        estimate_moment_bound(build_model("zero"), 3.0, 10, g)


def test_moment_bound_stable_under_refinement():
    spec = make_spec(b=lambda t, z: -z[:, 0], sigma=1.0)
    est = estimate_moment_bound(spec, 2.0, 4000, TimeGrid(1.0, 100), seed=2)
    assert np.isfinite(est.estimate) and est.stable
    e, se = est
    assert se > 0 and e > 0


def test_compensator_matches_node_loop(monkeypatch):
    from jumpfilter import simulator

    spec = build_model("scaled_jump", {})
    z = np.random.default_rng(9).normal(size=(7, 2))
    marks, weights = spec.levy_nu1.nodes()
    expected = sum(w * spec.jump_xi(0.3, z, np.broadcast_to(m, (7, m.size))) for m, w in zip(marks, weights))
    monkeypatch.setattr(simulator, "_COMPENSATOR_ROWS", 50)  # several uneven chunks
    np.testing.assert_allclose(simulator.compensator(spec, 0.3, z), expected, rtol=1e-12, atol=1e-14)
