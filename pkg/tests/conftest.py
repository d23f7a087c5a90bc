import numpy as np
import pytest

from jumpfilter.model import GaussianPrior, GrowthConstants, LevyMeasureSpec, ModelSpec


def _vector(v):
    """Coefficient ``(t, z) -> (n, 1)`` from a constant or a callable of ``(t, z)``."""
    if callable(v):
        return lambda t, z: np.reshape(v(t, z), (-1, 1))
    c = float(v)
    return lambda t, z: np.full((z.shape[0], 1), c)


def _matrix(v):
    if callable(v):
        return lambda t, z: np.reshape(v(t, z), (-1, 1, 1))
    c = np.array([[float(v)]])
    return lambda t, z: c


def _jump(v):
    if v is None:
        return lambda t, z, m: np.zeros((z.shape[0], 1))
    if callable(v):
        return v
    c = float(v)
    return lambda t, z, m: np.full((z.shape[0], 1), c)


def make_spec(b=0.0, sigma=0.0, rho=0.0, B=0.0, eta=None, xi=None, nu0=None, nu1=None, T=1.0,
              prior=(0.0, 1.0), growth=(100.0, 100.0, 100.0, 100.0), state_independent_jumps=True):
    """Scalar test model; coefficients are constants or callables of ``(t, z)``.

    Jump coefficients are constants or callables of ``(t, z, marks)``.
    """
    return ModelSpec(
        dim_x=1,
        dim_y=1,
        dim_w=1,
        drift_b=_vector(b),
        diffusion_sigma=_matrix(sigma),
        diffusion_rho=_matrix(rho),
        obs_drift_B=_vector(B),
        jump_eta=_jump(eta),
        jump_xi=_jump(xi),
        levy_nu0=nu0 if nu0 is not None else LevyMeasureSpec.empty(1),
        levy_nu1=nu1 if nu1 is not None else LevyMeasureSpec.empty(1),
        horizon_T=T,
        growth_constants=GrowthConstants(*growth),
        prior=None if prior is None else GaussianPrior(np.array([prior[0]]), np.array([[prior[1]]])),
        state_independent_jumps=state_independent_jumps,
    )


@pytest.fixture
def spec_factory():
    return make_spec


# PASS/FAIL lines recorded by the acceptance suite, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
