"""Model description for partially observed jump diffusions.

The signal ``X`` (dimension ``d``) and the observation ``Y`` (dimension
``d'``) are driven by Wiener processes ``W`` (``d1``) and ``V`` (``d'``) and
by two independent compensated Poisson random measures.  All coefficient
callables are *batched*: they receive a time ``t`` and an array ``z`` of
shape ``(n, d + d')`` and return arrays with a leading axis of length ``n``.

Jump coefficients additionally receive marks of shape ``(n, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Iterator, NamedTuple

import numpy as np
from scipy.stats import qmc

__all__ = [
    "AssumptionCheck",
    "AssumptionReport",
    "CoefficientValues",
    "GaussianPrior",
    "GrowthConstants",
    "LevyMeasureSpec",
    "ModelEvaluationError",
    "ModelSpec",
    "TestFunction",
    "builtin_test_functions",
    "moment_function",
    "check_assumptions",
    "evaluate_coefficients",
]

#: number of quasi-random nodes used for density-type Levy measures
QMC_NODES = 2048
_QMC_SEED = 20240917

Coefficient = Callable[[float, np.ndarray], np.ndarray]
JumpCoefficient = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class ModelEvaluationError(ArithmeticError):
    """A coefficient produced a non-finite value."""

    def __init__(self, coefficient: str, t: float, z: np.ndarray):
        self.coefficient = coefficient
        self.t = float(t)
        self.z = np.asarray(z, dtype=float)
        super().__init__(f"coefficient {coefficient!r} is not finite at t={self.t!r}, z={self.z.tolist()!r}")


# ---------------------------------------------------------------------------
# Levy measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LevyMeasureSpec:
    """Finite characteristic measure of a Poisson random measure.

    Two representations are supported: a finite list of atoms
    ``(mark, mass)``, or a total mass together with a normalized law given by
    its quantile transform ``ppf`` (uniforms of shape ``(n, m)`` to marks) and
    density ``pdf``.  Use the constructors :meth:`atomic`, :meth:`gaussian`
    and :meth:`empty`.
    """

    mark_dim: int
    kind: str
    marks: np.ndarray
    masses: np.ndarray
    density_mass: float = 0.0
    ppf: Callable[[np.ndarray], np.ndarray] | None = None
    pdf: Callable[[np.ndarray], np.ndarray] | None = None
    moments: tuple[np.ndarray, float] | None = None  # (mean mark, E|mark|^2) of the normalized law
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("atomic", "density"):
            raise ValueError(f"unknown Levy measure kind {self.kind!r}")
        if self.kind == "atomic":
            if self.marks.ndim != 2 or self.marks.shape[1] != self.mark_dim:
                raise ValueError("atomic marks must have shape (k, mark_dim)")
            if self.masses.shape != (self.marks.shape[0],):
                raise ValueError("one mass per atom is required")
            if np.any(self.masses <= 0) or not np.all(np.isfinite(self.masses)):
                raise ValueError("atom masses must be positive and finite")
            if not np.all(np.isfinite(self.marks)):
                raise ValueError("atom marks must be finite")
        else:
            if not (np.isfinite(self.density_mass) and self.density_mass >= 0):
                raise ValueError("total mass must be finite and nonnegative")
            if self.ppf is None:
                raise ValueError("density measures need a quantile transform")

    # constructors ---------------------------------------------------------

    @classmethod
    def empty(cls, mark_dim: int = 1) -> "LevyMeasureSpec":
        return cls(mark_dim, "atomic", np.zeros((0, mark_dim)), np.zeros(0), label="empty")

    @classmethod
    def atomic(cls, marks, masses, label: str = "atomic") -> "LevyMeasureSpec":
        marks = np.asarray(marks, dtype=float)
        if marks.ndim == 1:
            marks = marks[:, None]
        masses = np.atleast_1d(np.asarray(masses, dtype=float))
        return cls(marks.shape[1], "atomic", marks, masses, label=label)

    @classmethod
    def gaussian(cls, total_mass: float, mean, std, label: str = "gaussian") -> "LevyMeasureSpec":
        """Total mass times an axis-aligned normal law of the marks."""
        from scipy.stats import norm

        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape).copy()

        def ppf(u):
            return mean + std * norm.ppf(u)

        def pdf(marks):
            return np.prod(norm.pdf(marks, loc=mean, scale=std), axis=-1)

        second = float(np.sum(mean**2 + std**2))
        return cls(
            mean.size,
            "density",
            np.zeros((0, mean.size)),
            np.zeros(0),
            density_mass=float(total_mass),
            ppf=ppf,
            pdf=pdf,
            moments=(mean, second),
            label=label,
        )

    # basic quantities -----------------------------------------------------

    @property
    def total_mass(self) -> float:
        if self.kind == "atomic":
            return float(self.masses.sum())
        return float(self.density_mass)

    @property
    def is_empty(self) -> bool:
        return self.total_mass == 0.0

    @cached_property
    def _qmc_marks(self) -> np.ndarray:
        u = qmc.Sobol(d=self.mark_dim, scramble=True, seed=_QMC_SEED).random_base2(int(np.log2(QMC_NODES)))
        return self.ppf(u)

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes ``(marks, weights)`` with ``sum(weights) == total_mass``.

        Exact for atomic measures; a fixed scrambled Sobol rule otherwise.
        """
        if self.kind == "atomic":
            return self.marks, self.masses
        marks = self._qmc_marks
        return marks, np.full(marks.shape[0], self.density_mass / marks.shape[0])

    def iter_nodes(self) -> Iterator[tuple[np.ndarray, float]]:
        marks, weights = self.nodes()
        for k in range(marks.shape[0]):
            yield marks[k], float(weights[k])

    def integrate(self, f: Callable[[np.ndarray], Any]) -> tuple[np.ndarray | float, float]:
        """Integrate ``f(mark)`` against the measure.

        Returns ``(value, standard_error)``; the error is zero for atomic
        measures and the Monte Carlo standard error of the quadrature rule
        for density measures.
        """
        if self.is_empty:
            return 0.0, 0.0
        marks, weights = self.nodes()
        values = np.stack([np.asarray(f(marks[k]), dtype=float) for k in range(marks.shape[0])])
        total = np.tensordot(weights, values, axes=(0, 0))
        if self.kind == "atomic":
            return total, 0.0
        scaled = values.reshape(values.shape[0], -1) * self.density_mass
        se = float(np.max(scaled.std(axis=0, ddof=1)) / np.sqrt(marks.shape[0]))
        return total, se

    def mean_mark(self) -> np.ndarray:
        """``int z nu(dz)`` as a vector of length ``mark_dim``."""
        if self.is_empty:
            return np.zeros(self.mark_dim)
        if self.kind == "atomic":
            return self.masses @ self.marks
        if self.moments is not None:
            return self.density_mass * self.moments[0]
        return np.asarray(self.integrate(lambda m: m)[0])

    def second_moment(self) -> float:
        """``int |z|^2 nu(dz)``; exact for atomic and Gaussian specs."""
        if self.is_empty:
            return 0.0
        if self.kind == "atomic":
            return float(self.masses @ np.sum(self.marks**2, axis=1))
        if self.moments is not None:
            return self.density_mass * self.moments[1]
        return float(self.integrate(lambda m: float(m @ m))[0])

    def sample_marks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. marks from the normalized measure."""
        if n == 0:
            return np.zeros((0, self.mark_dim))
        if self.is_empty:
            raise ValueError("cannot sample marks from a zero measure")
        if self.kind == "atomic":
            idx = rng.choice(self.masses.size, size=n, p=self.masses / self.masses.sum())
            return self.marks[idx]
        return self.ppf(rng.random((n, self.mark_dim)))

    def describe(self) -> dict:
        if self.kind == "atomic":
            return {"kind": "atomic", "marks": self.marks.tolist(), "masses": self.masses.tolist()}
        return {"kind": "density", "label": self.label, "total_mass": self.density_mass}


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A bounded C^2 function with analytic first and second derivatives.

    ``value``, ``gradient`` and ``hessian`` take ``x`` of shape ``(n, d)``
    and return arrays of shape ``(n,)``, ``(n, d)`` and ``(n, d, d)``.
    ``bound`` dominates the absolute value of the function and of every
    gradient and Hessian entry.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    dim: int
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    bound: float

    def __call__(self, x) -> np.ndarray:
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))


def _constant(d: int) -> TestFunction:
    return TestFunction(
        "one",
        d,
        lambda x: np.ones(x.shape[0]),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros(x.shape + (x.shape[1],)),
        1.0,
    )


def _trig(d: int, j: int, k: float, kind: str) -> TestFunction:
    e = np.zeros(d)
    e[j] = 1.0
    E = np.outer(e, e)
    if kind == "sin":
        f, df, d2f = np.sin, np.cos, lambda u: -np.sin(u)
    else:
        f, df, d2f = np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u)
    return TestFunction(
        f"{kind}({k:g}x{j + 1})",
        d,
        lambda x: f(k * x[:, j]),
        lambda x: (k * df(k * x[:, j]))[:, None] * e,
        lambda x: (k * k * d2f(k * x[:, j]))[:, None, None] * E,
        max(1.0, k, k * k),
    )


def _sigmoid(a, c: float) -> TestFunction:
    a = np.asarray(a, dtype=float)

    def s(x):
        return 0.5 * (1.0 + np.tanh(0.5 * (x @ a + c)))

    def grad(x):
        v = s(x)
        return (v * (1 - v))[:, None] * a

    def hess(x):
        v = s(x)
        return (v * (1 - v) * (1 - 2 * v))[:, None, None] * np.outer(a, a)

    amax = float(np.max(np.abs(a)))
    # max |s'| = 1/4, max |s''| = 1/(6 sqrt 3)
    return TestFunction(
        f"sigmoid(a={a.tolist()},c={c:g})", a.size, s, grad, hess, max(1.0, amax / 4, amax**2 / (6 * np.sqrt(3)))
    )


def _gaussian(c, s: float) -> TestFunction:
    c = np.asarray(c, dtype=float)
    d = c.size

    def g(x):
        r = x - c
        return np.exp(-np.sum(r * r, axis=1) / (2 * s * s))

    def grad(x):
        return -(x - c) / (s * s) * g(x)[:, None]

    def hess(x):
        r = (x - c) / (s * s)
        return (r[:, :, None] * r[:, None, :] - np.eye(d) / (s * s)) * g(x)[:, None, None]

    return TestFunction(f"gauss(c={c.tolist()},s={s:g})", d, g, grad, hess, max(1.0, 1 / s, 1 / s**2))


def builtin_test_functions(dim: int) -> list[TestFunction]:
    """Fixture basis of bounded smooth test functions on ``R^dim``.

    Always starts with the constant one.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    funcs = [_constant(dim)]
    for j in range(dim):
        funcs += [_trig(dim, j, 1.0, "sin"), _trig(dim, j, 1.0, "cos")]
    funcs += [_trig(dim, 0, 2.0, "sin"), _trig(dim, 0, 2.0, "cos")]
    ones = np.ones(dim) / np.sqrt(dim)
    e0 = np.eye(dim)[0]
    funcs += [_sigmoid(ones, 0.0), _sigmoid(2 * e0, -1.0)]
    funcs += [_gaussian(np.zeros(dim), 1.0), _gaussian(np.ones(dim), 0.5)]
    return funcs


def moment_function(dim: int, j: int = 0, power: int = 1) -> TestFunction:
    """Unbounded monomial ``x_j`` or ``x_j^2`` for posterior moments.

    Its ``bound`` is infinite, so residual pass bounds do not apply to it.
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    e = np.eye(dim)[j]
    E = np.outer(e, e)
    if power == 1:
        return TestFunction(
            f"x{j + 1}",
            dim,
            lambda x: x[:, j].copy(),
            lambda x: np.broadcast_to(e, x.shape).copy(),
            lambda x: np.zeros(x.shape + (dim,)),
            np.inf,
        )
    return TestFunction(
        f"x{j + 1}^2",
        dim,
        lambda x: x[:, j] ** 2,
        lambda x: 2 * x[:, j][:, None] * e,
        lambda x: np.broadcast_to(2 * E, x.shape + (dim,)).copy(),
        np.inf,
    )


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


class GrowthConstants(NamedTuple):
    K0: float
    K1: float
    K2: float
    K: float


@dataclass(frozen=True)
class GaussianPrior:
    """Law of ``X_0`` given ``Y_0``; independent of ``Y_0`` here."""

    mean: np.ndarray
    cov: np.ndarray

    def sample(self, rng: np.random.Generator, n: int, y0=None) -> np.ndarray:
        mean = np.atleast_1d(self.mean)
        cov = np.atleast_2d(self.cov)
        z = rng.standard_normal((n, mean.size))
        # eigen square root tolerates singular covariances
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        return mean + z @ root.T


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Coefficients, noise measures and constants of the jump-diffusion system.

    The fields mirror the system::

        dX = b dt + sigma dW + rho dV + int eta dN0~ + int xi dN1~
        dY = B dt + dV + int z dN1~

    ``state_independent_jumps`` declares that ``eta`` and ``xi`` do not
    depend on ``x`` (required by the grid density oracle).
    """

    dim_x: int
    dim_y: int
    dim_w: int
    drift_b: Coefficient
    diffusion_sigma: Coefficient
    diffusion_rho: Coefficient
    obs_drift_B: Coefficient
    jump_eta: JumpCoefficient
    jump_xi: JumpCoefficient
    levy_nu0: LevyMeasureSpec
    levy_nu1: LevyMeasureSpec
    horizon_T: float
    growth_constants: GrowthConstants
    prior: GaussianPrior | None = None
    y0: np.ndarray | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    state_independent_jumps: bool = False

    def __post_init__(self):
        for attr in ("dim_x", "dim_y", "dim_w"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"{attr} must be a positive integer")
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if self.levy_nu1.mark_dim != self.dim_y:
            raise ValueError("marks of nu1 must live in R^{dim_y}")
        if any(c < 0 for c in self.growth_constants):
            raise ValueError("growth constants must be nonnegative")

    @property
    def dim_z(self) -> int:
        return self.dim_x + self.dim_y

    def initial_y(self) -> np.ndarray:
        return np.zeros(self.dim_y) if self.y0 is None else np.asarray(self.y0, dtype=float)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return z[..., : self.dim_x], z[..., self.dim_x :]

    def describe(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "dims": {"x": self.dim_x, "y": self.dim_y, "w": self.dim_w},
            "T": self.horizon_T,
            "growth_constants": self.growth_constants._asdict(),
            "nu0": self.levy_nu0.describe(),
            "nu1": self.levy_nu1.describe(),
        }


class CoefficientValues(NamedTuple):
    b: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    B: np.ndarray


def _batched(spec: ModelSpec, t: float, z: np.ndarray) -> CoefficientValues:
    n = z.shape[0]
    d, dy, dw = spec.dim_x, spec.dim_y, spec.dim_w
    b = np.broadcast_to(spec.drift_b(t, z), (n, d))
    sigma = np.broadcast_to(spec.diffusion_sigma(t, z), (n, d, dw))
    rho = np.broadcast_to(spec.diffusion_rho(t, z), (n, d, dy))
    B = np.broadcast_to(spec.obs_drift_B(t, z), (n, dy))
    return CoefficientValues(b, sigma, rho, B)


def evaluate_coefficients(spec: ModelSpec, t: float, z) -> CoefficientValues:
    """Evaluate ``b``, ``sigma``, ``rho`` and ``B`` at a single point ``(t, z)``.

    Raises
    ------
    ModelEvaluationError
        If any entry is not finite.
    ValueError
        If ``t`` lies outside ``[0, T]`` or ``z`` has the wrong length.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.dim_z,):
        raise ValueError(f"z must have shape ({spec.dim_z},), got {z.shape}")
    if not 0.0 <= t <= spec.horizon_T:
        raise ValueError(f"t={t} outside [0, {spec.horizon_T}]")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    vals = _batched(spec, t, z[None, :])
    out = []
    for name, v in zip(CoefficientValues._fields, vals):
        v = np.array(v[0], dtype=float)
        if not np.all(np.isfinite(v)):
            raise ModelEvaluationError(name, t, z)
        out.append(v)
    return CoefficientValues(*out)


# ---------------------------------------------------------------------------
# Growth assumptions
# ---------------------------------------------------------------------------


@dataclass
class AssumptionCheck:
    name: str
    inequality: str
    max_ratio: float
    witness_t: float | None
    witness_z: list | None
    passed: bool


@dataclass
class AssumptionReport:
    """Sampled maximum of LHS/RHS for every growth inequality.

    A sampling check over a ball, not a proof.
    """

    checks: list[AssumptionCheck]
    n_samples: int
    radius: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_samples": self.n_samples,
            "radius": self.radius,
            "checks": [c.__dict__ for c in self.checks],
        }


_RATIO_TOL = 1e-12


def _ratio(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    return np.where(np.isnan(r), np.inf, r)


def _sample_points(spec: ModelSpec, n: int, radius: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    D = spec.dim_z
    u = qmc.Halton(d=D + 2, scramble=True, seed=seed).random(n)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    from scipy.stats import norm

    t = u[:, 0] * spec.horizon_T
    direction = norm.ppf(u[:, 2:])
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * u[:, 1] ** (1.0 / D)
    z = direction * r[:, None]
    # the boundary sphere carries the worst case of most growth conditions
    z[: max(1, n // 4)] = direction[: max(1, n // 4)] * radius
    return t, z


def check_assumptions(spec: ModelSpec, n_samples: int = 512, radius: float = 10.0, seed: int = 0) -> AssumptionReport:
    """Statistically check the growth conditions on the ball ``|z| <= radius``.

    For every inequality the largest observed ratio LHS/RHS over
    ``n_samples`` quasi-random points ``(t, z)`` is reported together with
    the point where it occurred.  An inequality passes iff that ratio is at
    most ``1 + 1e-12``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    K0, K1, K2, K = spec.growth_constants
    ts, zs = _sample_points(spec, n_samples, radius, seed)
    z2 = np.sum(zs * zs, axis=1)

    lhs = {name: np.empty(n_samples) for name in ("drift", "diffusion", "jumps", "obs_girsanov")}
    for i in range(n_samples):
        t, z = ts[i], zs[i : i + 1]
        b, sigma, rho, B = _batched(spec, t, z)
        lhs["drift"][i] = np.sum(b**2)
        lhs["diffusion"][i] = np.sum(sigma**2) + np.sum(rho**2) + np.sum(B**2)
        l2 = 0.0
        for mark, w in spec.levy_nu0.iter_nodes():
            l2 += w * float(np.sum(spec.jump_eta(t, z, mark[None, :]) ** 2))
        for mark, w in spec.levy_nu1.iter_nodes():
            l2 += w * float(np.sum(spec.jump_xi(t, z, mark[None, :]) ** 2))
        lhs["jumps"][i] = l2
        x = z[0, : spec.dim_x]
        lhs["obs_girsanov"][i] = -float(x @ rho[0] @ B[0])

    rhs = {
        "drift": K0 + K1 * z2,
        "diffusion": K0 + K2 * z2,
        "jumps": K0 + K2 * z2,
        "obs_girsanov": K * (1.0 + z2),
    }
    labels = {
        "drift": "|b|^2 <= K0 + K1|z|^2",
        "diffusion": "|sigma|^2 + |rho|^2 + |B|^2 <= K0 + K2|z|^2",
        "jumps": "|eta|^2_L2(nu0) + |xi|^2_L2(nu1) <= K0 + K2|z|^2",
        "obs_girsanov": "-x.rho.B <= K(1 + |z|^2)",
    }
    checks = []
    for name in ("drift", "diffusion", "jumps", "obs_girsanov"):
        r = _ratio(lhs[name], rhs[name])
        i = int(np.argmax(r))
        m = float(r[i])
        checks.append(AssumptionCheck(name, labels[name], m, float(ts[i]), zs[i].tolist(), m <= 1 + _RATIO_TOL))
    m2 = spec.levy_nu1.second_moment()
    r = float(_ratio(np.array([m2]), np.array([K0]))[0])
    checks.append(AssumptionCheck("nu1_moment", "int |z|^2 nu1(dz) <= K0", r, None, None, r <= 1 + _RATIO_TOL))
    return AssumptionReport(checks, n_samples, float(radius))


def sample_points_in_ball(spec: ModelSpec, n: int, radius: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Quasi-random ``(t, z)`` pairs used by :func:`check_assumptions`."""
    return _sample_points(spec, n, radius, seed)


def as_points(x, dim: int) -> np.ndarray:
    """Promote a point or a batch of points to shape ``(n, dim)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, dim) if x.size == dim else x.reshape(-1, 1)
    if x.shape[1] != dim:
        raise ValueError(f"points must have {dim} coordinates, got shape {x.shape}")
    return x


def stack_z(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Join signal points ``(n, d)`` with a shared or per-point observation."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = np.broadcast_to(y, (x.shape[0], y.size))
    return np.concatenate([x, y], axis=1)
