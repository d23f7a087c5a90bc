"""Generator, observation and jump operators acting on test functions.

All operators accept either one point ``x`` of shape ``(d,)`` (returning a
float) or a batch of shape ``(n, d)`` (returning an array of length ``n``).
Derivatives come from the analytic evaluators of :class:`TestFunction`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import ModelSpec, TestFunction, _batched, as_points, stack_z

__all__ = [
    "OperatorContext",
    "OperatorEvaluationError",
    "Quadrature",
    "apply_I",
    "apply_J",
    "apply_L",
    "apply_M",
    "diffusion_matrix",
    "integrate_jump_operator",
    "jump_vectors",
]


class OperatorEvaluationError(ArithmeticError):
    pass


class Quadrature(NamedTuple):
    value: float | np.ndarray
    stderr: float


@dataclass(frozen=True)
class OperatorContext:
    """Freezes ``t`` and the observation state ``y`` entering the coefficients."""

    spec: ModelSpec
    t: float
    y: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if y.shape != (self.spec.dim_y,):
            raise ValueError(f"y must have shape ({self.spec.dim_y},)")
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        if not 0.0 <= self.t <= self.spec.horizon_T:
            raise ValueError(f"t={self.t} outside [0, {self.spec.horizon_T}]")
        object.__setattr__(self, "y", y)

    def z(self, x: np.ndarray) -> np.ndarray:
        return stack_z(x, self.y)

    def coefficients(self, x: np.ndarray):
        return _batched(self.spec, self.t, self.z(x))


def _finish(values: np.ndarray, single: bool, what: str):
    if not np.all(np.isfinite(values)):
        raise OperatorEvaluationError(f"{what} produced a non-finite value")
    return float(values[0]) if single else values


def _points(ctx: OperatorContext, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1 and arr.size == ctx.spec.dim_x
    return as_points(arr, ctx.spec.dim_x), single


def diffusion_matrix(sigma: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """``a = (sigma sigma^T + rho rho^T) / 2`` for batched coefficient arrays."""
    return 0.5 * (np.einsum("nik,njk->nij", sigma, sigma) + np.einsum("nil,njl->nij", rho, rho))


def L_from_coefficients(b, sigma, rho, grad, hess) -> np.ndarray:
    a = diffusion_matrix(sigma, rho)
    return np.einsum("nij,nij->n", a, hess) + np.einsum("ni,ni->n", b, grad)


def M_from_coefficients(rho, B, value, grad) -> np.ndarray:
    """All components ``M^k phi`` as an array of shape ``(n, d')``."""
    return np.einsum("nik,ni->nk", rho, grad) + B * value[:, None]


def apply_L(ctx: OperatorContext, phi: TestFunction, x):
    """``a^{ij} D_ij phi + b^i D_i phi`` evaluated at ``(t, x, y)``."""
    pts, single = _points(ctx, x)
    b, sigma, rho, _ = ctx.coefficients(pts)
    out = L_from_coefficients(b, sigma, rho, phi.gradient(pts), phi.hessian(pts))
    return _finish(out, single, "L")


def apply_M(ctx: OperatorContext, phi: TestFunction, x, k: int):
    """``rho^{ik} D_i phi + B^k phi`` for the zero-based component ``k``."""
    if not 0 <= k < ctx.spec.dim_y:
        raise IndexError(f"component {k} out of range for d'={ctx.spec.dim_y}")
    pts, single = _points(ctx, x)
    _, _, rho, B = ctx.coefficients(pts)
    out = M_from_coefficients(rho, B, phi.value(pts), phi.gradient(pts))[:, k]
    return _finish(out, single, "M")


def jump_vectors(spec: ModelSpec, t: float, z: np.ndarray, mark, which: str) -> np.ndarray:
    """Jump displacement ``xi(t, z, mark)`` or ``eta(t, z, mark)``, shape ``(n, d)``."""
    mark = np.atleast_1d(np.asarray(mark, dtype=float))
    if which == "xi":
        fn, mdim = spec.jump_xi, spec.levy_nu1.mark_dim
    elif which == "eta":
        fn, mdim = spec.jump_eta, spec.levy_nu0.mark_dim
    else:
        raise ValueError(f"which must be 'xi' or 'eta', got {which!r}")
    if mark.shape[-1] != mdim:
        raise ValueError(f"mark for {which} must have {mdim} components")
    marks = np.broadcast_to(mark, (z.shape[0], mdim))
    jump = np.broadcast_to(fn(t, z, marks), (z.shape[0], spec.dim_x))
    if not np.all(np.isfinite(jump)):
        raise OperatorEvaluationError(f"jump coefficient {which} is not finite")
    return jump


def _I(phi, pts, jump, value=None):
    if value is None:
        value = phi.value(pts)
    return phi.value(pts + jump) - value


def apply_I(ctx: OperatorContext, phi: TestFunction, x, mark, which: str = "xi"):
    """``phi(x + jump) - phi(x)`` with the selected jump coefficient."""
    pts, single = _points(ctx, x)
    jump = jump_vectors(ctx.spec, ctx.t, ctx.z(pts), mark, which)
    return _finish(_I(phi, pts, jump), single, "I")


def apply_J(ctx: OperatorContext, phi: TestFunction, x, mark, which: str = "xi"):
    """``I phi - jump . grad phi``; vanishes for affine ``phi``."""
    pts, single = _points(ctx, x)
    jump = jump_vectors(ctx.spec, ctx.t, ctx.z(pts), mark, which)
    out = _I(phi, pts, jump) - np.einsum("ni,ni->n", jump, phi.gradient(pts))
    return _finish(out, single, "J")


def integrate_jump_operator(
    ctx: OperatorContext, phi: TestFunction, x, which: str = "xi", op: str = "J"
) -> Quadrature:
    """Integrate ``I phi`` or ``J phi`` over the mark measure, pointwise in ``x``.

    Atomic measures are summed exactly; density measures use the fixed
    quasi-random rule of :class:`LevyMeasureSpec` and report its standard
    error.
    """
    if op not in ("I", "J"):
        raise ValueError(f"op must be 'I' or 'J', got {op!r}")
    nu = ctx.spec.levy_nu1 if which == "xi" else ctx.spec.levy_nu0
    if which not in ("xi", "eta"):
        raise ValueError(f"which must be 'xi' or 'eta', got {which!r}")
    pts, single = _points(ctx, x)
    if nu.is_empty:
        zero = np.zeros(pts.shape[0])
        return Quadrature(_finish(zero, single, op), 0.0)
    z = ctx.z(pts)
    value = phi.value(pts)
    grad = phi.gradient(pts) if op == "J" else None

    def integrand(mark):
        jump = jump_vectors(ctx.spec, ctx.t, z, mark, which)
        out = _I(phi, pts, jump, value)
        if grad is not None:
            out = out - np.einsum("ni,ni->n", jump, grad)
        return out

    total, se = nu.integrate(integrand)
    return Quadrature(_finish(np.asarray(total), single, op), se)
