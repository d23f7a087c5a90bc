"""Time grids, driving noise, sample paths and observation decomposition.

Poisson atoms falling in ``(t_i, t_{i+1}]`` belong to step ``i``.  Marks of
``N1`` live in ``R^{d'}``; marks of ``N0`` live in ``R^m`` with ``m`` the mark
dimension of ``nu0``.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import ModelSpec
from .rng import StreamFactory

__all__ = [
    "DecompositionWarning",
    "NoiseBatch",
    "NoiseRecord",
    "ObservationDecomposition",
    "SamplePath",
    "TimeGrid",
    "decompose_observation",
    "default_jump_threshold",
    "misclassification_rate",
    "read_atom_log",
    "read_path_csv",
    "sample_noise",
    "sample_noise_batch",
    "write_atom_log",
    "write_path_csv",
]


class DecompositionWarning(UserWarning):
    """A step could not be attributed to a single jump."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def step_of(self, times) -> np.ndarray:
        """Index ``i`` of the step ``(t_i, t_{i+1}]`` containing each time."""
        times = np.asarray(times, dtype=float)
        idx = np.ceil(times / self.dt - 1e-9).astype(np.int64) - 1
        return np.clip(idx, 0, self.n_steps - 1)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * factor)


def _empty_atoms(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(0), np.zeros((0, m))


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    """Driving noise of one path.

    ``dW`` and ``dV`` hold per-step Gaussian increments; ``atoms0`` and
    ``atoms1`` are ``(times, marks)`` pairs sorted by time.
    """

    grid: TimeGrid
    dW: np.ndarray
    dV: np.ndarray
    atoms0: tuple[np.ndarray, np.ndarray]
    atoms1: tuple[np.ndarray, np.ndarray]
    seed: int | None = None
    path_index: int = 0

    def steps0(self) -> np.ndarray:
        return self.grid.step_of(self.atoms0[0])

    def steps1(self) -> np.ndarray:
        return self.grid.step_of(self.atoms1[0])

    def coarsen(self, factor: int) -> "NoiseRecord":
        """Same realization on a grid with ``n_steps / factor`` steps."""
        n = self.grid.n_steps
        if n % factor:
            raise ValueError("factor must divide n_steps")
        grid = TimeGrid(self.grid.T, n // factor)
        dW = self.dW.reshape(n // factor, factor, -1).sum(axis=1)
        dV = self.dV.reshape(n // factor, factor, -1).sum(axis=1)
        return NoiseRecord(grid, dW, dV, self.atoms0, self.atoms1, self.seed, self.path_index)

    def zeroed(self) -> "NoiseRecord":
        return NoiseRecord(
            self.grid,
            np.zeros_like(self.dW),
            np.zeros_like(self.dV),
            _empty_atoms(self.atoms0[1].shape[1]),
            _empty_atoms(self.atoms1[1].shape[1]),
            self.seed,
            self.path_index,
        )


def _poisson_atoms(rng, nu, T: float) -> tuple[np.ndarray, np.ndarray]:
    if nu.is_empty:
        return _empty_atoms(nu.mark_dim)
    count = int(rng.poisson(nu.total_mass * T))
    # T * (1 - U) lies in (0, T]
    times = np.sort(T * (1.0 - rng.random(count)))
    marks = nu.sample_marks(rng, count)
    return times, marks


def sample_noise(spec: ModelSpec, grid: TimeGrid, seed: int, path_index: int = 0) -> NoiseRecord:
    """Draw the noise of one path from the stream keyed ``(seed, path_index)``."""
    rng = StreamFactory(seed).generator("path", path_index)
    sq = np.sqrt(grid.dt)
    dW = rng.standard_normal((grid.n_steps, spec.dim_w)) * sq
    dV = rng.standard_normal((grid.n_steps, spec.dim_y)) * sq
    atoms0 = _poisson_atoms(rng, spec.levy_nu0, grid.T)
    atoms1 = _poisson_atoms(rng, spec.levy_nu1, grid.T)
    return NoiseRecord(grid, dW, dV, atoms0, atoms1, seed, path_index)


@dataclass(frozen=True, eq=False)
class NoiseBatch:
    """Noise of many paths stacked along a leading axis.

    Atoms are stored flat with the owning path index, sorted by step.
    """

    grid: TimeGrid
    dW: np.ndarray  # (P, n, d1)
    dV: np.ndarray  # (P, n, d')
    atoms0: tuple[np.ndarray, np.ndarray, np.ndarray]  # (path, time, mark)
    atoms1: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @classmethod
    def from_records(cls, records: list[NoiseRecord]) -> "NoiseBatch":
        grid = records[0].grid

        def flat(which):
            paths, times, marks = [], [], []
            for p, r in enumerate(records):
                t, m = getattr(r, which)
                paths.append(np.full(t.size, p, dtype=np.int64))
                times.append(t)
                marks.append(m)
            paths, times, marks = np.concatenate(paths), np.concatenate(times), np.concatenate(marks)
            order = np.argsort(grid.step_of(times), kind="stable")
            return paths[order], times[order], marks[order]

        return cls(
            grid,
            np.stack([r.dW for r in records]),
            np.stack([r.dV for r in records]),
            flat("atoms0"),
            flat("atoms1"),
        )

    def record(self, p: int) -> NoiseRecord:
        def pick(atoms):
            sel = atoms[0] == p
            t, m = atoms[1][sel], atoms[2][sel]
            order = np.argsort(t, kind="stable")
            return t[order], m[order]

        return NoiseRecord(self.grid, self.dW[p], self.dV[p], pick(self.atoms0), pick(self.atoms1))

    def coarsen(self, factor: int) -> "NoiseBatch":
        P, n = self.dW.shape[:2]
        if n % factor:
            raise ValueError("factor must divide n_steps")
        return NoiseBatch(
            TimeGrid(self.grid.T, n // factor),
            self.dW.reshape(P, n // factor, factor, -1).sum(axis=2),
            self.dV.reshape(P, n // factor, factor, -1).sum(axis=2),
            self.atoms0,
            self.atoms1,
        )


def sample_noise_batch(spec: ModelSpec, grid: TimeGrid, seed: int, n_paths: int, start: int = 0) -> NoiseBatch:
    """Stack :func:`sample_noise` for path indices ``start .. start+n_paths-1``."""
    return NoiseBatch.from_records([sample_noise(spec, grid, seed, start + p) for p in range(n_paths)])


@dataclass(eq=False)
class SamplePath:
    """Discretized trajectory of ``Z = (X, Y)`` with its driving noise.

    ``vtilde_increments`` is ``B dt + dV`` per step as produced by the
    simulator, kept for round-trip checks of the observation decomposition.
    """

    grid: TimeGrid
    x: np.ndarray
    y: np.ndarray
    noise: NoiseRecord
    vtilde_increments: np.ndarray | None = None
    status: str = "ok"
    diagnostics: dict = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y], axis=1)


@dataclass(eq=False)
class ObservationDecomposition:
    """Continuous part ``dVtilde`` and jump atoms recovered from an observed path."""

    grid: TimeGrid
    y: np.ndarray
    dVtilde: np.ndarray
    atoms1: tuple[np.ndarray, np.ndarray]
    compensator: np.ndarray
    mode: str = "oracle"
    jump_steps: np.ndarray | None = None
    ambiguous_steps: list = field(default_factory=list)

    def steps1(self) -> np.ndarray:
        return self.grid.step_of(self.atoms1[0])

    def jump_sums(self) -> np.ndarray:
        """Sum of recovered marks per step, shape ``(n, d')``."""
        out = np.zeros_like(self.dVtilde)
        if self.atoms1[0].size:
            np.add.at(out, self.steps1(), self.atoms1[1])
        return out

    def reconstruct(self) -> np.ndarray:
        """``Y_0 + sum dVtilde + sum marks - t * int z nu1(dz)`` at every node."""
        incr = self.dVtilde + self.jump_sums() - self.grid.dt * self.compensator
        return np.vstack([self.y[:1], self.y[:1] + np.cumsum(incr, axis=0)])

    @property
    def vtilde(self) -> np.ndarray:
        return np.vstack([np.zeros((1, self.dVtilde.shape[1])), np.cumsum(self.dVtilde, axis=0)])


def default_jump_threshold(grid: TimeGrid, obs_volatility: float = 1.0) -> float:
    """Six standard deviations of a Brownian step of the observation noise."""
    return 6.0 * obs_volatility * np.sqrt(grid.dt)


def decompose_observation(
    spec: ModelSpec,
    grid: TimeGrid,
    y_path,
    mode: str = "detect",
    atoms: tuple[np.ndarray, np.ndarray] | None = None,
    threshold: float | None = None,
) -> ObservationDecomposition:
    """Split an observed path into ``Vtilde`` increments and ``N1`` atoms.

    Parameters
    ----------
    mode : {"oracle", "detect"}
        ``"oracle"`` uses the given ``atoms`` (e.g. the simulator's record);
        ``"detect"`` flags steps whose compensated increment exceeds
        ``threshold`` in some component.  For atomic ``nu1`` a detected jump
        is snapped to the nearest atom; otherwise the whole step increment is
        attributed to the jump.
    threshold : float, optional
        Defaults to :func:`default_jump_threshold`.

    Warns
    -----
    DecompositionWarning
        When a flagged step is not explained by a single atom.
    """
    y = np.asarray(y_path, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != (grid.n_steps + 1, spec.dim_y):
        raise ValueError(f"y_path must have shape ({grid.n_steps + 1}, {spec.dim_y})")
    nu1 = spec.levy_nu1
    comp = nu1.mean_mark()
    dY = np.diff(y, axis=0)
    dt = grid.dt

    if mode == "oracle":
        if atoms is None:
            raise ValueError("oracle mode needs the atom record")
        times, marks = np.asarray(atoms[0], dtype=float), np.asarray(atoms[1], dtype=float).reshape(-1, spec.dim_y)
        jumps = np.zeros_like(dY)
        if times.size:
            np.add.at(jumps, grid.step_of(times), marks)
        dVt = dY - jumps + dt * comp
        steps = np.unique(grid.step_of(times)) if times.size else np.zeros(0, dtype=np.int64)
        return ObservationDecomposition(grid, y, dVt, (times, marks), comp, "oracle", steps)

    if mode != "detect":
        raise ValueError(f"mode must be 'oracle' or 'detect', got {mode!r}")
    theta = default_jump_threshold(grid) if threshold is None else float(threshold)
    incr = dY + dt * comp
    flagged = np.flatnonzero(np.max(np.abs(incr), axis=1) > theta)
    dVt = incr.copy()
    times, marks, ambiguous = [], [], []
    atom_marks = nu1.marks if (nu1.kind == "atomic" and not nu1.is_empty) else None
    for i in flagged:
        mark = incr[i]
        if atom_marks is not None:
            k = int(np.argmin(np.sum((atom_marks - incr[i]) ** 2, axis=1)))
            if np.max(np.abs(incr[i] - atom_marks[k])) <= theta:
                mark = atom_marks[k]
            else:
                ambiguous.append(int(i))
        times.append(grid.t[i + 1])
        marks.append(mark)
        dVt[i] = incr[i] - mark
    if ambiguous:
        warnings.warn(
            f"{len(ambiguous)} step(s) not explained by a single jump; consider refining the grid",
            DecompositionWarning,
            stacklevel=2,
        )
    times = np.asarray(times, dtype=float)
    marks = np.asarray(marks, dtype=float).reshape(-1, spec.dim_y)
    return ObservationDecomposition(grid, y, dVt, (times, marks), comp, "detect", flagged, ambiguous)


def misclassification_rate(decomp: ObservationDecomposition, true_times) -> float:
    """Fraction of steps whose jump/no-jump label disagrees with the truth."""
    grid = decomp.grid
    truth = np.zeros(grid.n_steps, dtype=bool)
    true_times = np.asarray(true_times, dtype=float)
    if true_times.size:
        truth[grid.step_of(true_times)] = True
    found = np.zeros(grid.n_steps, dtype=bool)
    if decomp.jump_steps is not None and len(decomp.jump_steps):
        found[np.asarray(decomp.jump_steps)] = True
    return float(np.mean(truth != found))


# --- serialization -------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def write_path_csv(path: SamplePath, file) -> Path:
    """Columnar CSV ``t, x1..xd, y1..yd'`` with round-trip float formatting."""
    file = Path(file)
    d, dy = path.x.shape[1], path.y.shape[1]
    with file.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + [f"y{i + 1}" for i in range(dy)])
        for t, xr, yr in zip(path.grid.t, path.x, path.y):
            w.writerow([_fmt(t)] + [_fmt(v) for v in xr] + [_fmt(v) for v in yr])
    return file


def read_path_csv(file) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with Path(file).open() as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(file, delimiter=",", skiprows=1, ndmin=2)
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    return data[:, 0], data[:, xcols], data[:, ycols]


def _atom_lines(noise: NoiseRecord) -> Iterable[dict]:
    for which, (times, marks) in (("N0", noise.atoms0), ("N1", noise.atoms1)):
        for t, m in zip(times, marks):
            yield {"t": float(t), "mark": [float(v) for v in np.atleast_1d(m)], "which": which}


def write_atom_log(noise: NoiseRecord, file) -> Path:
    """JSON lines ``{"t", "mark", "which"}`` for every Poisson atom."""
    file = Path(file)
    with file.open("w") as fh:
        for line in _atom_lines(noise):
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    return file


def read_atom_log(file) -> list[dict]:
    with Path(file).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
