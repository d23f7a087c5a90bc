"""Likelihood processes of the change of measure and their Monte Carlo check."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .model import ModelSpec, _batched, stack_z
from .paths import ObservationDecomposition, SamplePath, TimeGrid, sample_noise_batch
from .simulator import initial_states, simulate_batch

__all__ = [
    "GirsanovReport",
    "HeavyTailWarning",
    "LikelihoodPath",
    "compute_gamma",
    "evolve_gamma_inv",
    "log_gamma_inv_increment",
    "verify_girsanov",
]

_EXP_LIMIT = 700.0


class HeavyTailWarning(UserWarning):
    pass


def log_gamma_inv_increment(B: np.ndarray, dVtilde: np.ndarray, dt: float) -> np.ndarray:
    """Exponential-Euler step ``B.dVtilde - |B|^2 dt / 2`` for rows of ``B``."""
    return B @ dVtilde - 0.5 * np.sum(B * B, axis=-1) * dt


@dataclass(eq=False)
class LikelihoodPath:
    """``log gamma`` per node is primary; ``gamma`` and ``gamma_inv`` derive from it."""

    log_gamma: np.ndarray
    overflow: bool = False

    @property
    def gamma(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_gamma)

    @property
    def gamma_inv(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(-self.log_gamma)

    @classmethod
    def from_log(cls, log_gamma: np.ndarray) -> "LikelihoodPath":
        log_gamma = np.asarray(log_gamma, dtype=float)
        if not np.all(np.isfinite(log_gamma)):
            raise FloatingPointError("log-likelihood is not finite")
        return cls(log_gamma, bool(np.any(np.abs(log_gamma) > _EXP_LIMIT)))


def compute_gamma(spec: ModelSpec, path: SamplePath) -> LikelihoodPath:
    """Accumulate ``-B.dV - |B|^2 dt / 2`` along a simulated path (``B`` at step start)."""
    grid = path.grid
    dV = path.noise.dV
    log = np.zeros(grid.n_steps + 1)
    for i in range(grid.n_steps):
        B = _batched(spec, grid.t[i], path.z[i : i + 1])[3][0]
        log[i + 1] = log[i] - (B @ dV[i] + 0.5 * (B @ B) * grid.dt)
    return LikelihoodPath.from_log(log)


def evolve_gamma_inv(spec: ModelSpec, x_path, obs: ObservationDecomposition) -> LikelihoodPath:
    """Solve ``d gamma^{-1} = gamma^{-1} B.dVtilde`` along a signal path.

    Uses the exact exponential step, so ``gamma^{-1} > 0`` by construction.
    The returned object stores ``log gamma = -log gamma^{-1}``.
    """
    x_path = np.asarray(x_path, dtype=float).reshape(obs.grid.n_steps + 1, spec.dim_x)
    grid = obs.grid
    log_inv = np.zeros(grid.n_steps + 1)
    for i in range(grid.n_steps):
        B = _batched(spec, grid.t[i], stack_z(x_path[i : i + 1], obs.y[i]))[3]
        log_inv[i + 1] = log_inv[i] + log_gamma_inv_increment(B, obs.dVtilde[i], grid.dt)[0]
    return LikelihoodPath.from_log(-log_inv)


@dataclass
class GirsanovReport:
    mean: float
    stderr: float
    n_paths: int
    kurtosis: float
    heavy_tail: bool
    rejected_paths: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def verify_girsanov(
    spec: ModelSpec,
    n_paths: int,
    seed: int,
    grid: TimeGrid | None = None,
    chunk: int = 10_000,
) -> GirsanovReport:
    """Monte Carlo test of ``E gamma_T = 1`` under P.

    Passes iff ``|mean - 1| <= 3 SE``.  A :class:`HeavyTailWarning` is
    issued when the sample kurtosis of ``gamma_T`` exceeds 100.
    """
    grid = grid or TimeGrid(spec.horizon_T, 100)
    z0 = initial_states(spec, n_paths, seed)
    logs, rejected = [], 0
    for start in range(0, n_paths, chunk):
        m = min(chunk, n_paths - start)
        noise = sample_noise_batch(spec, grid, seed, m, start=start)
        res = simulate_batch(spec, grid, noise, z0[start : start + m], record=False)
        rejected += int(res.rejected.sum())
        logs.append(res.log_gamma[~res.rejected])
    log_T = np.concatenate(logs)
    with np.errstate(over="ignore"):
        g = np.exp(log_T)
    mean = float(g.mean())
    se = float(g.std(ddof=1) / np.sqrt(g.size)) if g.size > 1 else 0.0
    kurt = float(stats.kurtosis(g, fisher=False)) if se > 0 else 0.0
    heavy = bool(kurt > 100)
    if heavy:
        warnings.warn(f"gamma_T kurtosis {kurt:.1f} > 100; the estimate is unreliable", HeavyTailWarning, stacklevel=2)
    passed = bool(np.isfinite(mean) and abs(mean - 1.0) <= 3 * se)
    return GirsanovReport(mean, se, int(g.size), kurt, heavy, rejected, passed)
