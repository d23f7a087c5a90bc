import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpfilter.model import LevyMeasureSpec, TestFunction, builtin_test_functions, moment_function
from jumpfilter.operators import (
    OperatorContext,
    OperatorEvaluationError,
    apply_I,
    apply_J,
    apply_L,
    apply_M,
    diffusion_matrix,
    integrate_jump_operator,
)

from conftest import make_spec

SIN = next(f for f in builtin_test_functions(1) if f.name == "sin(1x1)")
X1 = moment_function(1, 0, 1)
X2 = moment_function(1, 0, 2)


def ctx_for(spec, t=0.0, y=0.0):
    return OperatorContext(spec, t, np.array([y]))


def test_generator_on_sine():
    # b(x) = x, sigma = sqrt 2 gives L sin = -sin x + x cos x
    spec = make_spec(b=lambda t, z: z[:, 0], sigma=np.sqrt(2.0))
    x = np.linspace(-2, 2, 9)
    got = apply_L(ctx_for(spec), SIN, x[:, None])
    np.testing.assert_allclose(got, -np.sin(x) + x * np.cos(x), rtol=1e-13, atol=1e-14)


def test_generator_includes_correlated_part():
    # a = (sigma^2 + rho^2) / 2 = (1 + 0.25) / 2
    spec = make_spec(sigma=1.0, rho=0.5)
    assert apply_L(ctx_for(spec), X2, np.array([0.3])) == pytest.approx(1.25)


def test_M_operator():
    spec = make_spec(rho=0.5, B=lambda t, z: 2 * z[:, 0])
    x = np.array([[1.5]])
    # rho * d/dx x^2 + B x^2 = 0.5 * 3 + 3 * 2.25
    assert apply_M(ctx_for(spec), X2, x, 0) == pytest.approx(1.5 + 6.75)
    with pytest.raises(IndexError):
        apply_M(ctx_for(spec), X2, x, 1)


def test_J_of_square_with_constant_jump():
    c = 0.7
    spec = make_spec(xi=c, nu1=LevyMeasureSpec.atomic([1.0], [1.0]))
    x = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(apply_J(ctx_for(spec), X2, x, [1.0]), c**2, rtol=1e-12)
    np.testing.assert_allclose(apply_I(ctx_for(spec), X2, x, [1.0]), 2 * c * x[:, 0] + c**2, rtol=1e-12)


def test_J_vanishes_on_affine_functions():
    spec = make_spec(xi=lambda t, z, m: z[:, :1] * m, nu1=LevyMeasureSpec.atomic([0.5], [1.0]))
    x = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(apply_J(ctx_for(spec), X1, x, [0.5]), 0.0, atol=1e-15)


def test_atomic_jump_integral_is_exact():
    # xi(z, m) = m, nu = delta_1 + delta_{-1}: J x^2 integrates to 1 + 1
    spec = make_spec(xi=lambda t, z, m: m, nu1=LevyMeasureSpec.atomic([1.0, -1.0], [1.0, 1.0]))
    q = integrate_jump_operator(ctx_for(spec), X2, np.array([0.4]), "xi", "J")
    assert q.value == pytest.approx(2.0, rel=1e-14) and q.stderr == 0.0


def test_empty_measure_integral_is_zero():
    spec = make_spec()
    q = integrate_jump_operator(ctx_for(spec), SIN, np.array([[0.1], [0.2]]), "eta", "I")
    np.testing.assert_array_equal(q.value, [0.0, 0.0])


def test_density_jump_integral():
    # J x^2 with xi = m integrates to int m^2 nu(dm) = 2 (1 + 0.09)
    spec = make_spec(xi=lambda t, z, m: m, nu1=LevyMeasureSpec.gaussian(2.0, 1.0, 0.3))
    q = integrate_jump_operator(ctx_for(spec), X2, np.array([0.0]), "xi", "J")
    assert q.value == pytest.approx(2.18, abs=max(5 * q.stderr, 1e-3))


def test_bad_arguments():
    spec = make_spec(xi=1.0, nu1=LevyMeasureSpec.atomic([1.0], [1.0]))
    with pytest.raises(ValueError):
        apply_I(ctx_for(spec), SIN, np.array([0.0]), [1.0], which="zeta")
    with pytest.raises(ValueError):
        integrate_jump_operator(ctx_for(spec), SIN, np.array([0.0]), op="K")
    with pytest.raises(ValueError):
        OperatorContext(spec, 2.0, np.array([0.0]))
    with pytest.raises(ValueError):
        OperatorContext(spec, 0.0, np.array([np.nan]))


def test_nonfinite_result_raises():
    spec = make_spec(b=1e308, sigma=0.0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(OperatorEvaluationError):
        apply_L(ctx_for(spec), X2, np.array([1e10]))


def test_diffusion_matrix_is_psd():
    rng = np.random.default_rng(0)
    s, r = rng.normal(size=(20, 3, 2)), rng.normal(size=(20, 3, 4))
    a = diffusion_matrix(s, r)
    np.testing.assert_allclose(a, np.swapaxes(a, 1, 2))
    assert np.all(np.linalg.eigvalsh(a) >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(-2, 2), st.floats(0.1, 2), st.floats(-1, 1))
def test_L_is_linear_in_phi(x, b, s, r):
    spec = make_spec(b=b, sigma=s, rho=r)
    ctx = ctx_for(spec)
    pt = np.array([x])
    funcs = builtin_test_functions(1)
    f, g = funcs[1], funcs[2]
    h = TestFunction("f+2g", 1, lambda p: f.value(p) + 2 * g.value(p),
                     lambda p: f.gradient(p) + 2 * g.gradient(p),
                     lambda p: f.hessian(p) + 2 * g.hessian(p), 3.0)
    assert apply_L(ctx, h, pt) == pytest.approx(apply_L(ctx, f, pt) + 2 * apply_L(ctx, g, pt), abs=1e-12)
    # constants are annihilated by L and J
    assert apply_L(ctx, funcs[0], pt) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(-2, 2))
def test_I_of_constant_and_J_of_affine(x, c):
    spec = make_spec(xi=c, nu1=LevyMeasureSpec.atomic([1.0], [1.0]))
    ctx = ctx_for(spec)
    one = builtin_test_functions(1)[0]
    assert apply_I(ctx, one, np.array([x]), [1.0]) == 0.0
    assert apply_J(ctx, X1, np.array([x]), [1.0]) == pytest.approx(0.0, abs=1e-12)
