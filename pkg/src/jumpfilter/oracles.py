"""Independent reference computations for the particle filter.

* :func:`kalman_bucy` - correlated-noise Kalman-Bucy filter for linear
  Gaussian models without jumps, Euler-integrated on the filter grid.
* :func:`grid_zakai_1d` - finite-difference solver for the unnormalized
  conditional density of a scalar signal with state-independent jumps.
* :func:`projection_theorem_test` - Monte Carlo check that conditioning a
  stochastic integral of a simple process on the observation-type history
  integrates the conditioned integrand.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import ModelSpec, _batched, stack_z
from .paths import ObservationDecomposition, TimeGrid
from .rng import StreamFactory, purpose_id

__all__ = [
    "GridConfigError",
    "GridSolution",
    "KalmanResult",
    "LinearModel",
    "NumericalFailure",
    "ProjectionReport",
    "SimpleProcessFixture",
    "grid_zakai_1d",
    "kalman_bucy",
    "projection_theorem_test",
    "shipped_fixtures",
    "write_comparison_csv",
]


class NumericalFailure(ArithmeticError):
    pass


class GridConfigError(ValueError):
    pass


# --- Kalman-Bucy --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearModel:
    """``dX = A X dt + sigma dW + rho dV``, ``dY = H X dt + dV``."""

    A: np.ndarray
    H: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d = A.shape[0]
        H = np.asarray(self.H, dtype=float).reshape(-1, d)
        sigma = np.asarray(self.sigma, dtype=float).reshape(d, -1)
        rho = np.asarray(self.rho, dtype=float).reshape(d, H.shape[0])
        m0 = np.asarray(self.m0, dtype=float).reshape(d)
        P0 = np.asarray(self.P0, dtype=float).reshape(d, d)
        if A.shape != (d, d):
            raise ValueError("A must be square")
        if not np.allclose(P0, P0.T):
            raise ValueError("P0 must be symmetric")
        if np.min(np.linalg.eigvalsh(P0)) < -1e-12:
            raise ValueError("P0 must be positive semidefinite")
        for k, v in dict(A=A, H=H, sigma=sigma, rho=rho, m0=m0, P0=P0).items():
            object.__setattr__(self, k, v)

    @property
    def dim_x(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_params(cls, params: dict) -> "LinearModel":
        """Build from ``linear_gaussian`` zoo parameters (scalars broadcast)."""
        A = np.atleast_2d(np.asarray(params["A"], dtype=float))
        d = A.shape[0]
        H = np.asarray(params["H"], dtype=float)
        H = np.full((1, d), float(H)) if H.ndim == 0 else H.reshape(-1, d)
        sigma = np.asarray(params["sigma"], dtype=float)
        sigma = sigma * np.eye(d) if sigma.ndim == 0 else sigma
        rho = np.asarray(params["rho"], dtype=float)
        rho = np.full((d, H.shape[0]), float(rho)) if rho.ndim == 0 else rho
        P0 = np.asarray(params["P0"], dtype=float)
        P0 = P0 * np.eye(d) if P0.ndim == 0 else P0
        m0 = np.broadcast_to(np.asarray(params["m0"], dtype=float), (d,))
        return cls(A, H, sigma, rho, m0, P0)


@dataclass(eq=False)
class KalmanResult:
    grid: TimeGrid
    mean: np.ndarray  # (n+1, d)
    cov: np.ndarray  # (n+1, d, d)

    @property
    def variance(self) -> np.ndarray:
        return np.diagonal(self.cov, axis1=1, axis2=2)


def kalman_bucy(model: LinearModel, dY: np.ndarray, grid: TimeGrid, psd_tol: float = 1e-10) -> KalmanResult:
    """Explicit Euler integration of the correlated-noise Kalman-Bucy filter.

    ``dm = A m dt + G (dY - H m dt)``, ``dP/dt = A P + P A^T + sigma sigma^T
    + rho rho^T - G G^T`` with gain ``G = P H^T + rho``.

    Raises
    ------
    NumericalFailure
        If the covariance acquires an eigenvalue below ``-psd_tol``.
    """
    dY = np.asarray(dY, dtype=float).reshape(grid.n_steps, -1)
    A, H, S, R = model.A, model.H, model.sigma, model.rho
    Q = S @ S.T + R @ R.T
    dt = grid.dt
    d = model.dim_x
    mean = np.empty((grid.n_steps + 1, d))
    cov = np.empty((grid.n_steps + 1, d, d))
    m, P = model.m0.copy(), model.P0.copy()
    mean[0], cov[0] = m, P
    for i in range(grid.n_steps):
        G = P @ H.T + R
        m = m + A @ m * dt + G @ (dY[i] - H @ m * dt)
        P = P + dt * (A @ P + P @ A.T + Q - G @ G.T)
        P = 0.5 * (P + P.T)
        lam = np.linalg.eigvalsh(P)[0]
        if lam < -psd_tol:
            raise NumericalFailure(f"covariance lost positive semidefiniteness at step {i} (min eig {lam:.3g})")
        mean[i + 1], cov[i + 1] = m, P
    return KalmanResult(grid, mean, cov)


# --- grid Zakai solver ---------------------------------------------------------------


@dataclass(eq=False)
class GridSolution:
    """Unnormalized density values on a uniform mesh at every grid node."""

    grid: TimeGrid
    mesh: np.ndarray
    density: np.ndarray  # (n+1, K)

    @property
    def dx(self) -> float:
        return float(self.mesh[1] - self.mesh[0])

    def mass(self) -> np.ndarray:
        return self.density.sum(axis=1) * self.dx

    def moment(self, k: int = 1) -> np.ndarray:
        """Unnormalized moment ``int x^k pi_t(x) dx`` per node."""
        return (self.density * self.mesh**k).sum(axis=1) * self.dx

    def mean(self) -> np.ndarray:
        return self.moment(1) / self.mass()

    def variance(self) -> np.ndarray:
        return self.moment(2) / self.mass() - self.mean() ** 2


def _shift_mass(p: np.ndarray, cells: float) -> np.ndarray:
    """Translate cell masses by ``cells`` mesh widths, splitting fractional moves.

    Mass leaving the mesh is deposited in the boundary cell.
    """
    K = p.size
    k = int(np.floor(cells))
    f = cells - k
    out = np.zeros(K)
    idx = np.arange(K)
    for off, wt in ((k, 1.0 - f), (k + 1, f)):
        if wt == 0.0:
            continue
        np.add.at(out, np.clip(idx + off, 0, K - 1), wt * p)
    return out


def _flux_step(p: np.ndarray, vel: np.ndarray, D: float, h: float, dt: float) -> np.ndarray:
    """Conservative upwind advection-diffusion step with zero boundary flux.

    ``vel`` holds velocities at the ``K - 1`` interior cell faces.
    """
    F = np.maximum(vel, 0.0) * p[:-1] + np.minimum(vel, 0.0) * p[1:] - D * (p[1:] - p[:-1]) / h
    div = np.zeros_like(p)
    div[:-1] += F
    div[1:] -= F
    return p - dt / h * div


def _constant_rho(spec: ModelSpec, t: float, z: np.ndarray) -> float:
    rho = _batched(spec, t, z)[2][:, 0, 0]
    if np.ptp(rho) > 1e-12:
        raise GridConfigError("grid oracle supports only state-independent rho")
    return float(rho[0])


def grid_zakai_1d(
    spec: ModelSpec,
    obs: ObservationDecomposition,
    mesh: np.ndarray,
    initial_density: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GridSolution:
    """Finite-difference solution of the unnormalized filter density for ``d = 1``.

    Each step of ``obs.grid`` applies, in the order used by the particle
    filter: the likelihood factor ``exp(B dVtilde - B^2 dt / 2)`` at the
    step-start state; an explicit conservative upwind step for drift
    ``b - rho B - int eta dnu0 - int xi dnu1`` and diffusion ``sigma^2 / 2``
    (sub-stepped for stability) together with the ``N0`` jump term
    ``dt * sum_a m_a (pi(x - eta_a) - pi(x))``; the translation by
    ``rho dVtilde``; and a translation by ``xi`` at every observed ``N1`` atom.

    Parameters
    ----------
    mesh : array
        Uniform mesh of cell centres.  Mass leaving through the ends is kept
        in the boundary cells.
    initial_density : callable, optional
        Density of ``X_0``; defaults to the model's Gaussian prior.  It is
        renormalized to unit mass on the mesh.

    Raises
    ------
    GridConfigError
        For ``d != 1``, state-dependent jumps or ``rho``, density Levy
        measures, or a Courant violation ``|drift| dt > dx``.
    """
    if spec.dim_x != 1 or spec.dim_y != 1:
        raise GridConfigError("grid oracle requires d = d' = 1")
    if not spec.state_independent_jumps:
        raise GridConfigError("grid oracle requires state-independent jump sizes")
    for nu in (spec.levy_nu0, spec.levy_nu1):
        if not nu.is_empty and nu.kind != "atomic":
            raise GridConfigError("grid oracle requires atomic Levy measures")
    mesh = np.asarray(mesh, dtype=float)
    h = float(mesh[1] - mesh[0])
    if not np.allclose(np.diff(mesh), h, rtol=1e-9, atol=0.0):
        raise GridConfigError("mesh must be uniform")
    grid = obs.grid
    dt = grid.dt
    K = mesh.size
    faces = 0.5 * (mesh[:-1] + mesh[1:])[:, None]
    cells = mesh[:, None]

    if initial_density is None:
        if spec.prior is None:
            raise GridConfigError("model declares no prior; pass initial_density")
        m0 = float(np.atleast_1d(spec.prior.mean)[0])
        v0 = float(np.atleast_2d(spec.prior.cov)[0, 0])
        if v0 <= 0:
            raise GridConfigError("grid oracle needs a prior with positive variance")
        initial_density = lambda x: np.exp(-((x - m0) ** 2) / (2 * v0))  # noqa: E731
    p = np.asarray(initial_density(mesh), dtype=float) * h  # cell masses
    p = p / p.sum()

    dens = np.empty((grid.n_steps + 1, K))
    dens[0] = p / h
    s1 = obs.steps1()
    marks1 = obs.atoms1[1]

    def jump_shift(fn, t, y, mark) -> float:
        z = stack_z(np.zeros((1, 1)), y)
        return float(fn(t, z, mark.reshape(1, -1))[0, 0])

    for i in range(grid.n_steps):
        t, y = grid.t[i], obs.y[i]
        zc, zf = stack_z(cells, y), stack_z(faces, y)
        b_c, sig_c, rho_c, B_c = _batched(spec, t, zc)
        # likelihood factor at the step-start state
        B = B_c[:, 0]
        p = p * np.exp(B * obs.dVtilde[i, 0] - 0.5 * B * B * dt)

        b_f, sig_f, rho_f, B_f = _batched(spec, t, zf)
        rho = _constant_rho(spec, t, zc)
        sig = sig_c[:, 0, :]
        if np.ptp(np.sum(sig * sig, axis=1)) > 1e-12:
            raise GridConfigError("grid oracle supports only state-independent sigma")
        D = 0.5 * float(np.sum(sig[0] ** 2))
        comp = 0.0
        eta_moves = []
        if not spec.levy_nu0.is_empty:
            for mark, wt in spec.levy_nu0.iter_nodes():
                e = jump_shift(spec.jump_eta, t, y, mark)
                eta_moves.append((e, wt))
                comp += wt * e
        if not spec.levy_nu1.is_empty:
            for mark, wt in spec.levy_nu1.iter_nodes():
                comp += wt * jump_shift(spec.jump_xi, t, y, mark)
        vel = b_f[:, 0] - rho * B_f[:, 0] - comp
        if np.max(np.abs(vel)) * dt > h:
            raise GridConfigError(f"Courant violation: |drift| dt = {np.max(np.abs(vel)) * dt:.3g} > dx = {h:.3g}")
        cfl = dt * (np.max(np.abs(vel)) / h + 2 * D / h**2)
        n_sub = max(1, int(np.ceil(cfl / 0.9)))
        start = p
        q = p
        for _ in range(n_sub):
            q = _flux_step(q, vel, D, h, dt / n_sub)
        for e, wt in eta_moves:
            q = q + dt * wt * (_shift_mass(start, e / h) - start)
        p = q
        if rho != 0.0:
            p = _shift_mass(p, rho * obs.dVtilde[i, 0] / h)
        for mark in marks1[s1 == i]:
            p = _shift_mass(p, jump_shift(spec.jump_xi, t, y, mark) / h)
        dens[i + 1] = p / h
    return GridSolution(grid, mesh, dens)


# --- projection theorem fixtures -------------------------------------------------------

_INTEGRATORS = ("lebesgue", "w0", "w1", "n0", "n1")


@dataclass(frozen=True, eq=False)
class SimpleProcessFixture:
    """A bounded simple integrand ``f_t = sum_i xi_i 1_(t_i, t_{i+1}](t)``.

    ``integrand(inputs)`` returns ``(n, k)`` values of ``xi_i``;
    ``conditional(inputs)`` returns the closed-form conditional expectations
    given the ``W1``/``N1`` history.  ``inputs`` maps ``W0``, ``W1`` (values at
    the partition times, shape ``(n, k + 1)``), ``N0``, ``N1`` (counts at the
    partition times) and ``U`` (an independent uniform, shape ``(n,)``).
    ``feature`` maps inputs to the scalar used for binning; it must be
    measurable with respect to the ``W1``/``N1`` history.
    """

    name: str
    partition: tuple[float, ...]
    integrator: str
    integrand: Callable[[dict], np.ndarray]
    conditional: Callable[[dict], np.ndarray]
    feature: Callable[[dict], np.ndarray]
    bound: float
    rate0: float = 1.0
    rate1: float = 1.0
    expect_zero: bool = False

    def __post_init__(self):
        if self.integrator not in _INTEGRATORS:
            raise ValueError(f"integrator must be one of {_INTEGRATORS}")
        if len(self.partition) < 2 or np.any(np.diff(self.partition) < 0) or self.partition[0] != 0.0:
            raise ValueError("partition must start at 0 and be nondecreasing")


@dataclass
class ProjectionReport:
    fixture: str
    n_mc: int
    bins: list[dict]
    excluded: list[dict]
    passed: bool
    conditional_is_zero: bool | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _fixture_inputs(fx: SimpleProcessFixture, n: int, seed: int) -> dict:
    rng = StreamFactory(seed).generator("projection", purpose_id(fx.name))
    dts = np.diff(fx.partition)
    k = dts.size

    def cum(inc):
        return np.hstack([np.zeros((n, 1)), np.cumsum(inc, axis=1)])

    W0 = cum(rng.standard_normal((n, k)) * np.sqrt(dts))
    W1 = cum(rng.standard_normal((n, k)) * np.sqrt(dts))
    N0 = cum(rng.poisson(fx.rate0 * dts, (n, k)).astype(float))
    N1 = cum(rng.poisson(fx.rate1 * dts, (n, k)).astype(float))
    U = rng.random(n)
    return {"W0": W0, "W1": W1, "N0": N0, "N1": N1, "U": U, "dt": dts}


def _integral(kind: str, f: np.ndarray, inp: dict, fx: SimpleProcessFixture) -> np.ndarray:
    dts = inp["dt"]
    if kind == "lebesgue":
        inc = np.broadcast_to(dts, f.shape)
    elif kind == "w0":
        inc = np.diff(inp["W0"], axis=1)
    elif kind == "w1":
        inc = np.diff(inp["W1"], axis=1)
    elif kind == "n0":
        inc = np.diff(inp["N0"], axis=1) - fx.rate0 * dts
    else:
        inc = np.diff(inp["N1"], axis=1) - fx.rate1 * dts
    return np.sum(f * inc, axis=1)


def projection_theorem_test(
    fixture: SimpleProcessFixture, n_mc: int, seed: int, n_bins: int = 5, min_count: int = 30
) -> ProjectionReport:
    """Bin test of ``E(int f dI | G_T) = int f_hat dI`` (zero for ``W0``/``N0``).

    The discrepancy ``int f dI - RHS`` is averaged within quantile bins of
    the fixture's feature; each bin passes iff its mean is within 3 standard
    errors of 0.  Bins with fewer than ``min_count`` samples are excluded.
    """
    fx = fixture
    inp = _fixture_inputs(fx, n_mc, seed)
    f = fx.integrand(inp)
    if np.max(np.abs(f)) > fx.bound + 1e-12:
        raise ValueError(f"integrand of {fx.name} exceeds its declared bound")
    lhs = _integral(fx.integrator, f, inp, fx)
    if fx.integrator in ("w0", "n0"):
        rhs = np.zeros(n_mc)
    else:
        rhs = _integral(fx.integrator, fx.conditional(inp), inp, fx)
    diff = lhs - rhs
    feat = fx.feature(inp)
    uniq = np.unique(feat)
    if uniq.size <= n_bins:
        labels = np.searchsorted(uniq, feat)
        edges = [(float(u), float(u)) for u in uniq]
    else:
        qs = np.unique(np.quantile(feat, np.linspace(0, 1, n_bins + 1)))
        nb = qs.size - 1
        labels = np.clip(np.searchsorted(qs, feat, side="right") - 1, 0, nb - 1)
        edges = [(float(qs[b]), float(qs[b + 1])) for b in range(nb)]
    bins, excluded = [], []
    for b, (lo, hi) in enumerate(edges):
        sel = labels == b
        cnt = int(sel.sum())
        if cnt < min_count:
            excluded.append({"lo": lo, "hi": hi, "n": cnt})
            continue
        d = diff[sel]
        mean_d = float(d.mean())
        se = float(d.std(ddof=1) / np.sqrt(cnt))
        est = float(lhs[sel].mean())
        bins.append(
            {
                "lo": lo,
                "hi": hi,
                "n": cnt,
                "estimate": est,
                "rhs": float(rhs[sel].mean()),
                "discrepancy": mean_d,
                "se": se,
                "passed": bool(abs(mean_d) <= 3 * se + 1e-12),
            }
        )
    passed = bool(bins) and all(b["passed"] for b in bins)
    zero = None
    if fx.expect_zero:
        zero = all(abs(b["estimate"]) <= 3 * b["se"] + 1e-12 for b in bins)
        passed = passed and zero
    notes = [f"{len(excluded)} bins excluded for fewer than {min_count} samples"] if excluded else []
    return ProjectionReport(fx.name, n_mc, bins, excluded, passed, zero, notes)


def _clip(x, c=2.0):
    return np.clip(x, -c, c)


def shipped_fixtures() -> list[SimpleProcessFixture]:
    """Fixtures with closed-form conditional integrands.

    ``W1``/``N1`` play the role of the observation noise generating the
    conditioning history; ``W0``/``N0`` and ``U`` are independent of it.
    """
    w1T = lambda inp: inp["W1"][:, -1]  # noqa: E731
    n1T = lambda inp: inp["N1"][:, -1]  # noqa: E731

    def const(c):
        return lambda inp: np.full((inp["U"].size, 1), c)

    def sign_u(inp):
        return np.sign(inp["U"] - 0.5)[:, None]

    def zeros1(inp):
        return np.zeros((inp["U"].size, 1))

    def w1_then(inp):
        # xi = 0 on (0, t1], clip(W1_t1) on (t1, t2]
        n = inp["U"].size
        return np.column_stack([np.zeros(n), _clip(inp["W1"][:, 1])])

    def n1_then(inp):
        n = inp["U"].size
        return np.column_stack([np.zeros(n), np.minimum(inp["N1"][:, 1], 3.0)])

    def mixed(inp):
        n = inp["U"].size
        return np.column_stack([np.zeros(n), _clip(inp["W1"][:, 1]) + np.sign(inp["U"] - 0.5)])

    def mixed_hat(inp):
        n = inp["U"].size
        return np.column_stack([np.zeros(n), _clip(inp["W1"][:, 1])])

    return [
        SimpleProcessFixture("constant_w1", (0.0, 1.0), "w1", const(0.7), const(0.7), w1T, 0.7),
        SimpleProcessFixture("independent_sign_w1", (0.0, 1.0), "w1", sign_u, zeros1, w1T, 1.0),
        SimpleProcessFixture(
            "w1_history_w0", (0.0, 0.5, 1.0), "w0", w1_then, w1_then, lambda inp: inp["W1"][:, 1], 2.0,
            expect_zero=True,
        ),
        SimpleProcessFixture(
            "n1_history_n0", (0.0, 0.5, 1.0), "n0", n1_then, n1_then, lambda inp: inp["N1"][:, 1], 3.0,
            rate0=2.0, rate1=2.0, expect_zero=True,
        ),
        SimpleProcessFixture(
            "mixed_lebesgue", (0.0, 0.5, 1.0), "lebesgue", mixed, mixed_hat, lambda inp: inp["W1"][:, 1], 3.0
        ),
        SimpleProcessFixture("mixed_n1", (0.0, 0.5, 1.0), "n1", mixed, mixed_hat, n1T, 3.0, rate1=2.0),
    ]


def write_comparison_csv(file, t, oracle_mean, filter_mean, oracle_var, filter_var) -> Path:
    """CSV with columns ``t, oracle_mean, filter_mean, oracle_var, filter_var``."""
    file = Path(file)
    with file.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "oracle_mean", "filter_mean", "oracle_var", "filter_var"])
        for row in zip(t, oracle_mean, filter_mean, oracle_var, filter_var):
            w.writerow([repr(float(v)) for v in row])
    return file
