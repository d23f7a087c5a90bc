"""Weighted particle approximation of the unnormalized and normalized filters.

Particles move under the reference measure Q with their own ``(W, N0)``
noise and the observed ``(Vtilde, N1)``; their log-weights follow the
exponential-Euler step of ``log gamma^{-1}``.  The unnormalized measure is
``mu_t(phi) = (1/M) sum_i w_i phi(x_i)`` and ``P_t = mu_t / mu_t(1)``.

While running, the filter records for every step the left-endpoint measures
of the generator, observation and jump terms applied to the tracked test
functions, so that the residuals of the linear and nonlinear filtering
equations can be evaluated afterwards without storing the particle history.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .girsanov import log_gamma_inv_increment
from .model import ModelSpec, TestFunction, _batched, builtin_test_functions, stack_z
from .operators import M_from_coefficients, diffusion_matrix
from .paths import NoiseRecord, ObservationDecomposition, TimeGrid
from .rng import StreamFactory
from .simulator import q_increment

__all__ = [
    "FilterConfig",
    "FilterDegeneracyError",
    "FilterOutput",
    "InnovationPath",
    "InnovationReport",
    "ResidualReport",
    "WeightedEmpiricalMeasure",
    "effective_sample_size",
    "fkk_residual",
    "innovation_diagnostics",
    "multinomial_resample",
    "particle_noise_record",
    "run_filter",
    "systematic_resample",
    "write_filter_jsonl",
    "write_particle_dump",
    "zakai_residual",
]

#: constant in the residual pass bound ``C (dt + 1/sqrt(M)) * bound(phi)``, frozen from
#: ``tools/calibrate_residuals.py`` (``data/residual_calibration.json``)
RESIDUAL_CONSTANT = 10.5


class FilterDegeneracyError(RuntimeError):
    """All particle weights vanished."""


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int
    resampling: str = "none"
    resample_threshold: float = 0.5
    mode: str = "zakai"

    def __post_init__(self):
        if int(self.n_particles) < 2:
            raise ValueError("n_particles must be >= 2")
        if self.resampling not in ("none", "systematic", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.resampling!r}")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must lie in (0, 1]")
        if self.mode not in ("zakai", "fkk"):
            raise ValueError(f"mode must be 'zakai' or 'fkk', got {self.mode!r}")
        if self.mode == "zakai" and self.resampling != "none":
            raise ValueError("zakai mode never resamples; use mode='fkk'")


@dataclass(eq=False)
class WeightedEmpiricalMeasure:
    """Particles with log-weights; ``mu(phi) = mean(w * phi(x))``."""

    particles: np.ndarray
    log_weights: np.ndarray
    time: float

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def _values(self, phi) -> np.ndarray:
        if isinstance(phi, np.ndarray):
            return phi
        if isinstance(phi, TestFunction):
            return phi.value(self.particles)
        return np.asarray(phi(self.particles), dtype=float)

    def _scaled(self) -> tuple[np.ndarray, float]:
        m = float(np.max(self.log_weights))
        return np.exp(self.log_weights - m), m

    def mu(self, phi: TestFunction | Callable | np.ndarray) -> float:
        vals = self._values(phi)
        w, m = self._scaled()
        return float(np.exp(m) * (w @ vals) / w.size)

    def total_mass(self) -> float:
        return self.mu(np.ones(self.particles.shape[0]))

    def normalized(self, phi) -> float:
        vals = self._values(phi)
        w, _ = self._scaled()
        return float((w @ vals) / w.sum())

    def ess(self) -> float:
        return effective_sample_size(self.log_weights)


@dataclass(eq=False)
class InnovationPath:
    grid: TimeGrid
    dVbar: np.ndarray

    @property
    def vbar(self) -> np.ndarray:
        return np.vstack([np.zeros((1, self.dVbar.shape[1])), np.cumsum(self.dVbar, axis=0)])


def effective_sample_size(log_weights: np.ndarray) -> float:
    """``(sum w)^2 / sum w^2``."""
    w = np.exp(log_weights - np.max(log_weights))
    return float(w.sum() ** 2 / np.sum(w * w))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, u, side="right")


def multinomial_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(weights.size, size=weights.size, p=weights / weights.sum())


_RESAMPLERS = {"systematic": systematic_resample, "multinomial": multinomial_resample}


@dataclass(eq=False)
class FilterOutput:
    """Per-node summaries and per-step equation terms of one filter run.

    Arrays indexed by node have length ``n_steps + 1``; arrays indexed by
    step have length ``n_steps`` and refer to the measure at the left end of
    the step.  Column ``j`` of the function-valued arrays belongs to
    ``test_functions[j]``; column 0 is always the constant one.
    """

    spec: ModelSpec
    config: FilterConfig
    obs: ObservationDecomposition
    test_functions: list[TestFunction]
    mu_phi: np.ndarray  # (n+1, J)
    ess: np.ndarray
    resampled: np.ndarray
    innovation: InnovationPath
    mu_B: np.ndarray  # (n, d')
    terms: dict[str, np.ndarray] = field(default_factory=dict)
    measures: list[WeightedEmpiricalMeasure] = field(default_factory=list)
    particle_paths: np.ndarray | None = None
    log_weight_paths: np.ndarray | None = None

    @property
    def grid(self) -> TimeGrid:
        return self.obs.grid

    @property
    def mu_one(self) -> np.ndarray:
        return self.mu_phi[:, 0]

    @property
    def P_phi(self) -> np.ndarray:
        return self.mu_phi / self.mu_phi[:, :1]

    def index_of(self, phi: TestFunction | int | str) -> int:
        if isinstance(phi, (int, np.integer)):
            return int(phi)
        for j, f in enumerate(self.test_functions):
            if f is phi or (isinstance(phi, str) and f.name == phi):
                return j
        name = phi if isinstance(phi, str) else phi.name
        for j, f in enumerate(self.test_functions):
            if f.name == name:
                return j
        raise ValueError(f"test function {name!r} was not tracked by this run")

    @property
    def final(self) -> WeightedEmpiricalMeasure:
        return self.measures[-1]


def _particle_step_noise(streams: StreamFactory, path_index: int, i: int, spec: ModelSpec, grid: TimeGrid, M: int):
    rng = streams.generator("particles", path_index, i)
    dW = rng.standard_normal((M, spec.dim_w)) * np.sqrt(grid.dt)
    nu0 = spec.levy_nu0
    if nu0.is_empty:
        return dW, np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros((0, nu0.mark_dim))
    counts = rng.poisson(nu0.total_mass * grid.dt, M)
    idx = np.repeat(np.arange(M), counts)
    times = grid.t[i] + grid.dt * (1.0 - rng.random(idx.size))
    marks = nu0.sample_marks(rng, idx.size)
    return dW, idx, times, marks


def particle_noise_record(
    spec: ModelSpec, grid: TimeGrid, seed: int, n_particles: int, particle: int, path_index: int = 0
) -> NoiseRecord:
    """Replay the noise the filter feeds to one particle.

    The filter draws per step for the whole cloud from the stream
    ``("particles", path_index, step)``; this extracts one particle's share.
    """
    streams = StreamFactory(seed)
    dW = np.empty((grid.n_steps, spec.dim_w))
    times, marks = [], []
    for i in range(grid.n_steps):
        w, idx, t, m = _particle_step_noise(streams, path_index, i, spec, grid, n_particles)
        dW[i] = w[particle]
        sel = idx == particle
        times.append(t[sel])
        marks.append(m[sel])
    atoms0 = (np.concatenate(times), np.concatenate(marks).reshape(-1, spec.levy_nu0.mark_dim))
    atoms1 = (np.zeros(0), np.zeros((0, spec.dim_y)))
    return NoiseRecord(grid, dW, np.zeros((grid.n_steps, spec.dim_y)), atoms0, atoms1, seed, path_index)


class _TermAccumulator:
    """Left-endpoint measures of all equation terms for the tracked functions."""

    def __init__(self, spec: ModelSpec, funcs: Sequence[TestFunction], n: int):
        self.spec = spec
        self.funcs = funcs
        J, dy = len(funcs), spec.dim_y
        self.L = np.zeros((n, J))
        self.M = np.zeros((n, J, dy))
        self.J_eta = np.zeros((n, J))
        self.J_xi = np.zeros((n, J))
        self.I_xi_comp = np.zeros((n, J))
        self.I_xi_obs = np.zeros((n, J))

    def record(self, i, t, x, y, coeffs, w, scale, obs_marks):
        spec = self.spec
        b, sigma, rho, B = coeffs
        z = stack_z(x, y)
        M = x.shape[0]
        vals = np.empty((M, len(self.funcs)))
        grads = []
        a = diffusion_matrix(sigma, rho)
        Lv = np.empty_like(vals)
        Mv = np.empty((M, len(self.funcs), spec.dim_y))
        for j, f in enumerate(self.funcs):
            v, g, h = f.value(x), f.gradient(x), f.hessian(x)
            vals[:, j] = v
            grads.append(g)
            Lv[:, j] = np.einsum("nij,nij->n", a, h) + np.einsum("ni,ni->n", b, g)
            Mv[:, j] = M_from_coefficients(rho, B, v, g)
        self.L[i] = scale * (w @ Lv)
        self.M[i] = scale * np.einsum("n,njk->jk", w, Mv)

        def jump_terms(nu, fn, with_I):
            J_tot = np.zeros(len(self.funcs))
            I_tot = np.zeros(len(self.funcs))
            for mark, wt in nu.iter_nodes():
                jump = np.broadcast_to(fn(t, z, np.broadcast_to(mark, (M, mark.size))), x.shape)
                shifted = x + jump
                for j, f in enumerate(self.funcs):
                    Iv = f.value(shifted) - vals[:, j]
                    Jv = Iv - np.einsum("ni,ni->n", jump, grads[j])
                    J_tot[j] += wt * (w @ Jv)
                    if with_I:
                        I_tot[j] += wt * (w @ Iv)
            return scale * J_tot, scale * I_tot

        if not spec.levy_nu0.is_empty:
            self.J_eta[i] = jump_terms(spec.levy_nu0, spec.jump_eta, False)[0]
        if not spec.levy_nu1.is_empty:
            self.J_xi[i], self.I_xi_comp[i] = jump_terms(spec.levy_nu1, spec.jump_xi, True)
        for mark in obs_marks:
            jump = np.broadcast_to(spec.jump_xi(t, z, np.broadcast_to(mark, (M, mark.size))), x.shape)
            shifted = x + jump
            for j, f in enumerate(self.funcs):
                self.I_xi_obs[i, j] += scale * (w @ (f.value(shifted) - vals[:, j]))

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "L": self.L,
            "M": self.M,
            "J_eta": self.J_eta,
            "J_xi": self.J_xi,
            "I_xi_comp": self.I_xi_comp,
            "I_xi_obs": self.I_xi_obs,
        }


def run_filter(
    spec: ModelSpec,
    obs: ObservationDecomposition,
    cfg: FilterConfig,
    seed: int,
    y_path: np.ndarray | None = None,
    prior_sampler: Callable[[np.random.Generator, int, np.ndarray], np.ndarray] | None = None,
    test_functions: Sequence[TestFunction] | None = None,
    track_terms: bool = True,
    record_particles: bool = False,
    snapshot_every: int | None = None,
    path_index: int = 0,
) -> FilterOutput:
    """Run the reference-measure particle filter along an observed path.

    Parameters
    ----------
    obs : ObservationDecomposition
        Observed ``Y`` path with its ``Vtilde`` increments and ``N1`` atoms.
    prior_sampler : callable, optional
        ``(rng, M, y0) -> (M, d)`` draws of ``X_0`` given ``Y_0``; defaults to
        the model's declared prior.
    test_functions : sequence of TestFunction, optional
        Functions whose measures and equation terms are recorded; defaults
        to :func:`builtin_test_functions`.  The constant one is always
        tracked in column 0.
    snapshot_every : int, optional
        Keep the full particle measure every that many nodes (the initial and
        final measures are always kept).

    Raises
    ------
    FilterDegeneracyError
        If all log-weights become ``-inf`` or NaN.
    """
    grid = obs.grid
    y_path = obs.y if y_path is None else np.asarray(y_path, dtype=float).reshape(obs.y.shape)
    M = int(cfg.n_particles)
    n = grid.n_steps
    dt = grid.dt
    streams = StreamFactory(seed)

    funcs = list(test_functions) if test_functions is not None else builtin_test_functions(spec.dim_x)
    funcs = [f for f in funcs if f.name != "one"]
    funcs = builtin_test_functions(spec.dim_x)[:1] + funcs
    J = len(funcs)

    rng0 = streams.generator("prior", path_index)
    if prior_sampler is None:
        if spec.prior is None:
            raise ValueError("model declares no prior; pass prior_sampler")
        x = spec.prior.sample(rng0, M, y_path[0])
    else:
        x = np.asarray(prior_sampler(rng0, M, y_path[0]), dtype=float).reshape(M, spec.dim_x)
    logw = np.zeros(M)

    mu_phi = np.empty((n + 1, J))
    ess = np.empty(n + 1)
    resampled = np.zeros(n + 1, dtype=bool)
    mu_B = np.empty((n, spec.dim_y))
    dVbar = np.empty((n, spec.dim_y))
    acc = _TermAccumulator(spec, funcs, n) if track_terms else None
    measures = [WeightedEmpiricalMeasure(x.copy(), logw.copy(), 0.0)]
    paths = np.empty((n + 1, M, spec.dim_x)) if record_particles else None
    wpaths = np.empty((n + 1, M)) if record_particles else None
    resampler = _RESAMPLERS.get(cfg.resampling)
    s1 = obs.steps1()
    obs_marks_all = obs.atoms1[1]

    def node_summary(k, x, logw):
        m = float(np.max(logw))
        if not np.isfinite(m):
            raise FilterDegeneracyError(f"all particle weights vanished at node {k} (t={grid.t[k]:.6g})")
        w = np.exp(logw - m)
        scale = np.exp(m) / M
        vals = np.column_stack([f.value(x) for f in funcs])
        mu_phi[k] = scale * (w @ vals)
        ess[k] = w.sum() ** 2 / np.sum(w * w)
        if record_particles:
            paths[k], wpaths[k] = x, logw
        return w, scale

    w, scale = node_summary(0, x, logw)
    for i in range(n):
        t = grid.t[i]
        y = y_path[i]
        coeffs = _batched(spec, t, stack_z(x, y))
        B = coeffs[3]
        obs_marks = obs_marks_all[s1 == i]
        mu_B[i] = scale * (w @ B)
        dVbar[i] = obs.dVtilde[i] - mu_B[i] / mu_phi[i, 0] * dt
        if acc is not None:
            acc.record(i, t, x, y, coeffs, w, scale, obs_marks)

        logw = logw + log_gamma_inv_increment(B, obs.dVtilde[i], dt)
        dW, idx0, _, marks0 = _particle_step_noise(streams, path_index, i, spec, grid, M)
        x = x + q_increment(spec, t, dt, x, y, coeffs, dW, obs.dVtilde[i], obs_marks, (idx0, marks0))
        if np.any(np.isnan(logw)):
            raise FilterDegeneracyError(f"NaN log-weight at step {i}")

        w, scale = node_summary(i + 1, x, logw)
        if resampler is not None and ess[i + 1] < cfg.resample_threshold * M:
            idx = resampler(w, streams.generator("resample", path_index, i + 1))
            x = x[idx]
            # equal weights carrying the current total mass
            logw = np.full(M, np.log(scale * w.sum()))
            resampled[i + 1] = True
            w, scale = np.ones(M), float(np.exp(logw[0])) / M
        if snapshot_every and (i + 1) % snapshot_every == 0 and i + 1 < n:
            measures.append(WeightedEmpiricalMeasure(x.copy(), logw.copy(), grid.t[i + 1]))
    measures.append(WeightedEmpiricalMeasure(x.copy(), logw.copy(), grid.t[n]))

    return FilterOutput(
        spec=spec,
        config=cfg,
        obs=obs,
        test_functions=funcs,
        mu_phi=mu_phi,
        ess=ess,
        resampled=resampled,
        innovation=InnovationPath(grid, dVbar),
        mu_B=mu_B,
        terms=acc.as_dict() if acc is not None else {},
        measures=measures,
        particle_paths=paths,
        log_weight_paths=wpaths,
    )


# --- residuals --------------------------------------------------------------------


@dataclass
class ResidualReport:
    """Residual path of a filtering equation for one test function."""

    function: str
    residual: np.ndarray
    max_abs: float
    bound: float
    passed: bool
    components: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "max_abs": self.max_abs,
            "bound": self.bound,
            "passed": self.passed,
            "final_components": {k: float(v[-1]) for k, v in self.components.items()},
        }


def residual_bound(output: FilterOutput, phi: TestFunction, constant: float = RESIDUAL_CONSTANT) -> float:
    return constant * (output.grid.dt + 1.0 / np.sqrt(output.config.n_particles)) * phi.bound


def _cum(x: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(x)])


def _require_terms(output: FilterOutput):
    if not output.terms:
        raise ValueError("filter ran without track_terms; residuals are unavailable")


def zakai_residual(spec: ModelSpec, output: FilterOutput, phi, constant: float = RESIDUAL_CONSTANT) -> ResidualReport:
    """Residual of the linear (unnormalized) filtering equation.

    ``R_t = mu_t(phi) - mu_0(phi) - sum [mu(L phi) dt + mu(M^k phi) dVtilde^k
    + int mu(J^eta phi) dnu0 dt + int mu(J^xi phi) dnu1 dt]
    - sum_atoms mu_-(I^xi phi) + sum dt int mu_-(I^xi phi) dnu1``.
    """
    _require_terms(output)
    if output.config.mode != "zakai":
        raise ValueError("zakai_residual needs a run in zakai mode (no resampling)")
    j = output.index_of(phi)
    f = output.test_functions[j]
    T = output.terms
    dt = output.grid.dt
    dVt = output.obs.dVtilde
    comps = {
        "L": _cum(T["L"][:, j] * dt),
        "M": _cum(np.einsum("nk,nk->n", T["M"][:, j], dVt)),
        "J_eta": _cum(T["J_eta"][:, j] * dt),
        "J_xi": _cum(T["J_xi"][:, j] * dt),
        "N1_compensated": _cum(T["I_xi_obs"][:, j] - T["I_xi_comp"][:, j] * dt),
    }
    mu = output.mu_phi[:, j]
    R = mu - mu[0] - sum(comps.values())
    bound = residual_bound(output, f, constant)
    m = float(np.max(np.abs(R)))
    return ResidualReport(f.name, R, m, bound, bool(m <= bound), comps)


def fkk_residual(spec: ModelSpec, output: FilterOutput, phi, constant: float = RESIDUAL_CONSTANT) -> ResidualReport:
    """Residual of the nonlinear filtering equation driven by the innovation."""
    _require_terms(output)
    j = output.index_of(phi)
    f = output.test_functions[j]
    T = output.terms
    dt = output.grid.dt
    mu1 = output.mu_phi[:-1, 0]
    P_phi = output.P_phi[:-1, j]
    P_B = output.mu_B / mu1[:, None]
    gain = T["M"][:, j] / mu1[:, None] - P_phi[:, None] * P_B
    comps = {
        "L": _cum(T["L"][:, j] / mu1 * dt),
        "M": _cum(np.einsum("nk,nk->n", gain, output.innovation.dVbar)),
        "J_eta": _cum(T["J_eta"][:, j] / mu1 * dt),
        "J_xi": _cum(T["J_xi"][:, j] / mu1 * dt),
        "N1_compensated": _cum((T["I_xi_obs"][:, j] - T["I_xi_comp"][:, j] * dt) / mu1),
    }
    P = output.P_phi[:, j]
    R = P - P[0] - sum(comps.values())
    bound = residual_bound(output, f, constant)
    m = float(np.max(np.abs(R)))
    return ResidualReport(f.name, R, m, bound, bool(m <= bound), comps)


# --- innovation -------------------------------------------------------------------


@dataclass
class InnovationReport:
    qv_over_T: list[float]
    lag1_autocorr: list[float]
    n_increments: int
    autocorr_limit: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def innovation_diagnostics(innovation: InnovationPath | Sequence[InnovationPath]) -> InnovationReport:
    """Check that the innovation looks like a standard Wiener process.

    Several paths (e.g. replicas of one experiment) are pooled: realized
    quadratic variation is summed over paths and horizons, and lag-1 pairs
    are taken within each path.  Passes iff ``|QV/T - 1| <= 0.05`` and
    ``|autocorr| <= 3/sqrt(n)`` in every component.
    """
    paths = [innovation] if isinstance(innovation, InnovationPath) else list(innovation)
    inc = [p.dVbar for p in paths]
    T_total = sum(p.grid.T for p in paths)
    n_total = sum(a.shape[0] for a in inc)
    qv = sum(np.sum(a * a, axis=0) for a in inc) / T_total
    num = sum(np.sum(a[1:] * a[:-1], axis=0) for a in inc)
    den = sum(np.sum(a * a, axis=0) for a in inc)
    with np.errstate(invalid="ignore", divide="ignore"):
        ac = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    limit = 3.0 / np.sqrt(n_total)
    ok = bool(np.all(np.abs(qv - 1.0) <= 0.05) and np.all(np.abs(np.nan_to_num(ac, nan=np.inf)) <= limit))
    return InnovationReport([float(v) for v in qv], [float(v) for v in ac], int(n_total), float(limit), ok)


# --- output files -------------------------------------------------------------------


def write_filter_jsonl(output: FilterOutput, file) -> Path:
    """One JSON object per node: ``t, mu_1, P (per test function), ESS, resampled``."""
    file = Path(file)
    names = [f.name for f in output.test_functions]
    P = output.P_phi
    with file.open("w") as fh:
        for k, t in enumerate(output.grid.t):
            rec = {
                "t": float(t),
                "mu_1": float(output.mu_one[k]),
                "P": {nm: float(P[k, j]) for j, nm in enumerate(names)},
                "ESS": float(output.ess[k]),
                "resampled": bool(output.resampled[k]),
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return file


def write_particle_dump(output: FilterOutput, file) -> Path:
    """CSV ``t, particle, x1..xd, log_weight`` for every kept measure."""
    file = Path(file)
    d = output.spec.dim_x
    with file.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "particle"] + [f"x{i + 1}" for i in range(d)] + ["log_weight"])
        for meas in output.measures:
            for p, (xr, lw) in enumerate(zip(meas.particles, meas.log_weights)):
                w.writerow([repr(float(meas.time)), p] + [repr(float(v)) for v in xr] + [repr(float(lw))])
    return file
