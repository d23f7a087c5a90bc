"""Euler schemes for the jump-diffusion system under P and under Q.

Jump coefficients are evaluated at the state at the start of the (sub-)step
containing the atom, which realizes the left-limit convention ``Z_{t-}``.
Compensator integrals are taken against the same quadrature nodes used by
the jump operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, _batched, stack_z
from .paths import NoiseBatch, NoiseRecord, ObservationDecomposition, SamplePath, TimeGrid, sample_noise_batch
from .rng import StreamFactory

__all__ = [
    "BatchResult",
    "MomentEstimate",
    "SchemeConfig",
    "compensator",
    "estimate_moment_bound",
    "initial_states",
    "simulate_batch",
    "simulate_signal_under_Q",
    "simulate_system",
]


@dataclass(frozen=True)
class SchemeConfig:
    n_steps: int
    jump_adapted: bool = False
    clip_radius: float | None = None

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise ValueError("n_steps must be >= 1")


# rows per vectorized compensator call; bounds memory for large particle batches
_COMPENSATOR_ROWS = 1 << 16


def compensator(spec: ModelSpec, t: float, z: np.ndarray) -> np.ndarray:
    """``int eta dnu0 + int xi dnu1`` at each row of ``z``, shape ``(n, d)``."""
    n = z.shape[0]
    out = np.zeros((n, spec.dim_x))
    for nu, fn in ((spec.levy_nu0, spec.jump_eta), (spec.levy_nu1, spec.jump_xi)):
        if nu.is_empty:
            continue
        marks, weights = nu.nodes()
        chunk = max(1, _COMPENSATOR_ROWS // max(n, 1))
        for lo in range(0, marks.shape[0], chunk):
            m, w = marks[lo:lo + chunk], weights[lo:lo + chunk]
            k = m.shape[0]
            vals = fn(t, np.tile(z, (k, 1)), np.repeat(m, n, axis=0))
            out += np.tensordot(w, np.reshape(vals, (k, n, spec.dim_x)), axes=(0, 0))
    return out


def _step_slices(steps: np.ndarray, n_steps: int) -> np.ndarray:
    """Boundaries so that atoms of step ``i`` are ``bounds[i]:bounds[i+1]``."""
    return np.searchsorted(steps, np.arange(n_steps + 1), side="left")


@dataclass(eq=False)
class BatchResult:
    x: np.ndarray | None  # (P, n+1, d) when recorded
    y: np.ndarray | None
    vtilde_increments: np.ndarray | None  # (P, n, d')
    x_final: np.ndarray
    y_final: np.ndarray
    log_gamma: np.ndarray  # (P,) at T
    sup_norm: np.ndarray  # (P,) sup_t |Z_t|
    rejected: np.ndarray
    exited: np.ndarray


def simulate_batch(
    spec: ModelSpec,
    grid: TimeGrid,
    noise: NoiseBatch,
    z0: np.ndarray,
    record: bool = True,
    clip_radius: float | None = None,
) -> BatchResult:
    """Integrate many independent paths under P with the explicit Euler scheme.

    Besides the states, the likelihood exponent
    ``-sum B.dV - 1/2 sum |B|^2 dt`` (``B`` at step start) and the running
    supremum of ``|Z|`` are accumulated.
    """
    P = noise.n_paths
    d, dy = spec.dim_x, spec.dim_y
    dt = grid.dt
    z0 = np.broadcast_to(np.asarray(z0, dtype=float), (P, spec.dim_z))
    x, y = z0[:, :d].copy(), z0[:, d:].copy()
    c1 = spec.levy_nu1.mean_mark()
    n = grid.n_steps
    xs = np.empty((P, n + 1, d)) if record else None
    ys = np.empty((P, n + 1, dy)) if record else None
    vts = np.empty((P, n, dy)) if record else None
    if record:
        xs[:, 0], ys[:, 0] = x, y
    log_gamma = np.zeros(P)
    sup = np.linalg.norm(z0, axis=1)
    rejected = np.zeros(P, dtype=bool)
    exited = np.zeros(P, dtype=bool)

    p0, t0, m0 = noise.atoms0
    p1, t1, m1 = noise.atoms1
    b0 = _step_slices(grid.step_of(t0), n) if t0.size else None
    b1 = _step_slices(grid.step_of(t1), n) if t1.size else None

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n):
            t = grid.t[i]
            z = np.concatenate([x, y], axis=1)
            b, sigma, rho, B = _batched(spec, t, z)
            dW, dV = noise.dW[:, i], noise.dV[:, i]
            dx = b * dt + np.einsum("pij,pj->pi", sigma, dW) + np.einsum("pij,pj->pi", rho, dV)
            dx -= dt * compensator(spec, t, z)
            dvt = B * dt + dV
            dyi = dvt - dt * c1
            if b0 is not None and b0[i + 1] > b0[i]:
                sl = slice(b0[i], b0[i + 1])
                pp = p0[sl]
                np.add.at(dx, pp, spec.jump_eta(t, z[pp], m0[sl]))
            if b1 is not None and b1[i + 1] > b1[i]:
                sl = slice(b1[i], b1[i + 1])
                pp = p1[sl]
                np.add.at(dx, pp, spec.jump_xi(t, z[pp], m1[sl]))
                np.add.at(dyi, pp, m1[sl])
            log_gamma -= np.einsum("pk,pk->p", B, dV) + 0.5 * np.einsum("pk,pk->p", B, B) * dt
            x = x + dx
            y = y + dyi
            norm = np.sqrt(np.sum(x * x, axis=1) + np.sum(y * y, axis=1))
            bad = ~np.isfinite(norm)
            rejected |= bad
            sup = np.where(bad, sup, np.maximum(sup, norm))
            if clip_radius is not None:
                exited |= norm > clip_radius
            if record:
                xs[:, i + 1], ys[:, i + 1], vts[:, i] = x, y, dvt
    return BatchResult(xs, ys, vts, x, y, log_gamma, sup, rejected, exited)


def _jump_adapted_path(spec: ModelSpec, grid: TimeGrid, noise: NoiseRecord, z0: np.ndarray) -> SamplePath:
    """Euler with the atom times inserted as extra (internal) nodes.

    Grid increments are split over sub-intervals with a Brownian bridge drawn
    from the stream ``("bridge", path_index, step)`` so the grid-level noise is
    unchanged.  Output stays on the grid nodes.
    """
    d, dy = spec.dim_x, spec.dim_y
    streams = StreamFactory(noise.seed or 0)
    c1 = spec.levy_nu1.mean_mark()
    x, y = z0[None, :d].copy(), z0[None, d:].copy()
    xs, ys, vts = [x[0].copy()], [y[0].copy()], []
    s0, s1 = noise.steps0(), noise.steps1()
    for i in range(grid.n_steps):
        ta = grid.t[i]
        events = [(t, 0, m) for t, m, s in zip(*noise.atoms0, s0) if s == i]
        events += [(t, 1, m) for t, m, s in zip(*noise.atoms1, s1) if s == i]
        events.sort(key=lambda e: (e[0], e[1]))
        cuts = [ta] + [e[0] for e in events] + [grid.t[i + 1]]
        rng = streams.generator("bridge", noise.path_index, i)
        remW, remV = noise.dW[i].copy(), noise.dV[i].copy()
        vt_sum = np.zeros(dy)
        for j in range(len(cuts) - 1):
            h = cuts[j + 1] - cuts[j]
            left = grid.t[i + 1] - cuts[j]
            if j == len(cuts) - 2 or left <= 0:
                incW, incV = remW, remV
            else:
                frac = h / left
                sd = np.sqrt(h * (left - h) / left)
                incW = frac * remW + sd * rng.standard_normal(remW.shape)
                incV = frac * remV + sd * rng.standard_normal(remV.shape)
            remW, remV = remW - incW, remV - incV
            t = cuts[j]
            z = np.concatenate([x, y], axis=1)
            b, sigma, rho, B = _batched(spec, t, z)
            x = x + b * h + sigma[0] @ incW + rho[0] @ incV - h * compensator(spec, t, z)
            vt = B[0] * h + incV
            vt_sum += vt
            y = y + vt - h * c1
            if j < len(events):
                te, which, mark = events[j]
                z = np.concatenate([x, y], axis=1)
                if which == 0:
                    x = x + spec.jump_eta(te, z, mark[None, :])
                else:
                    x = x + spec.jump_xi(te, z, mark[None, :])
                    y = y + mark
        xs.append(x[0].copy())
        ys.append(y[0].copy())
        vts.append(vt_sum)
    return SamplePath(grid, np.array(xs), np.array(ys), noise, np.array(vts))


def simulate_system(
    spec: ModelSpec,
    grid: TimeGrid,
    noise: NoiseRecord,
    z0,
    scheme: SchemeConfig | None = None,
) -> SamplePath:
    """Simulate one path of the system under P.

    Non-finite states reject the path (``status="rejected"``, first bad step
    in ``diagnostics``); leaving the ball of radius ``clip_radius`` is
    recorded as ``status="exited"``.
    """
    z0 = np.asarray(z0, dtype=float).reshape(spec.dim_z)
    if not np.all(np.isfinite(z0)):
        raise ValueError("z0 must be finite")
    if noise.grid != grid:
        raise ValueError("noise record lives on a different grid")
    scheme = scheme or SchemeConfig(grid.n_steps)
    if scheme.jump_adapted:
        path = _jump_adapted_path(spec, grid, noise, z0)
    else:
        res = simulate_batch(spec, grid, NoiseBatch.from_records([noise]), z0[None, :], True, scheme.clip_radius)
        path = SamplePath(grid, res.x[0], res.y[0], noise, res.vtilde_increments[0])
    finite = np.all(np.isfinite(path.x), axis=1) & np.all(np.isfinite(path.y), axis=1)
    if not finite.all():
        path.status = "rejected"
        path.diagnostics["first_non_finite_node"] = int(np.argmin(finite))
    elif scheme.clip_radius is not None:
        norms = np.linalg.norm(path.z, axis=1)
        if np.any(norms > scheme.clip_radius):
            path.status = "exited"
            path.diagnostics["exit_node"] = int(np.argmax(norms > scheme.clip_radius))
    return path


# --- signal under the reference measure ------------------------------------------


def q_increment(
    spec: ModelSpec,
    t: float,
    dt: float,
    x: np.ndarray,
    y: np.ndarray,
    coeffs,
    dW: np.ndarray,
    dVtilde: np.ndarray,
    obs_marks: np.ndarray,
    own0: tuple[np.ndarray, np.ndarray] | None,
) -> np.ndarray:
    """Euler increment of particles ``x`` (shape ``(M, d)``) under Q.

    ``coeffs`` are the coefficients at ``(t, x, y)``; the observed ``dVtilde``
    and ``N1`` marks are shared by all particles, ``dW`` and the ``N0``
    atoms ``own0 = (particle_index, marks)`` are per particle.
    """
    b, sigma, rho, B = coeffs
    z = stack_z(x, y)
    drift = b - np.einsum("nik,nk->ni", rho, B)
    dx = drift * dt + np.einsum("nij,nj->ni", sigma, dW) + np.einsum("nik,k->ni", rho, dVtilde)
    dx -= dt * compensator(spec, t, z)
    for mark in obs_marks:
        dx += spec.jump_xi(t, z, np.broadcast_to(mark, (x.shape[0], mark.size)))
    if own0 is not None and own0[0].size:
        idx, marks = own0
        np.add.at(dx, idx, spec.jump_eta(t, z[idx], marks))
    return dx


def simulate_signal_under_Q(
    spec: ModelSpec,
    grid: TimeGrid,
    obs: ObservationDecomposition,
    particle_noise: NoiseRecord,
    x0,
) -> np.ndarray:
    """Signal path driven by its own ``(W, N0)`` and the observed ``(Vtilde, N1)``.

    Returns an array of shape ``(n_steps + 1, d)``.
    """
    x = np.asarray(x0, dtype=float).reshape(1, spec.dim_x)
    out = np.empty((grid.n_steps + 1, spec.dim_x))
    out[0] = x[0]
    s1 = obs.steps1()
    s0 = particle_noise.steps0()
    for i in range(grid.n_steps):
        t = grid.t[i]
        y = obs.y[i]
        coeffs = _batched(spec, t, stack_z(x, y))
        obs_marks = obs.atoms1[1][s1 == i]
        m0 = particle_noise.atoms0[1][s0 == i]
        own0 = (np.zeros(len(m0), dtype=np.int64), m0)
        x = x + q_increment(spec, t, grid.dt, x, y, coeffs, particle_noise.dW[i][None, :], obs.dVtilde[i], obs_marks, own0)
        out[i + 1] = x[0]
    return out


# --- moments --------------------------------------------------------------------


def initial_states(spec: ModelSpec, n: int, seed: int) -> np.ndarray:
    """``Z_0`` for ``n`` paths: ``X_0`` from the declared prior, ``Y_0 = y0``."""
    rng = StreamFactory(seed).generator("initial-state")
    if spec.prior is None:
        x0 = np.zeros((n, spec.dim_x))
    else:
        x0 = spec.prior.sample(rng, n, spec.initial_y())
    return np.concatenate([x0, np.broadcast_to(spec.initial_y(), (n, spec.dim_y))], axis=1)


@dataclass
class MomentEstimate:
    estimate: float
    stderr: float
    refined_estimate: float | None = None
    refined_stderr: float | None = None
    ratio: float | None = None
    stable: bool | None = None

    def __iter__(self):
        yield self.estimate
        yield self.stderr


def estimate_moment_bound(
    spec: ModelSpec,
    p: float,
    n_paths: int,
    grid: TimeGrid,
    seed: int = 0,
    refine: bool = True,
    tolerance: float = 0.1,
) -> MomentEstimate:
    """Monte Carlo estimate of ``E sup_t |Z_t|^p`` for ``p`` in ``[1, 2]``.

    With ``refine`` the same noise realizations are integrated on the grid
    with half the step and the ratio of the two estimates is reported;
    ``stable`` is False when it leaves ``1 +- tolerance``.
    """
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    fine = grid.refine(2) if refine else grid
    noise = sample_noise_batch(spec, fine, seed, n_paths)
    z0 = initial_states(spec, n_paths, seed)

    def moment(g, nz):
        res = simulate_batch(spec, g, nz, z0, record=False)
        vals = res.sup_norm[~res.rejected] ** p
        if vals.size == 0:
            return np.inf, np.inf
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        return float(vals.mean()), se

    if not refine:
        est, se = moment(grid, noise)
        return MomentEstimate(est, se)
    coarse, se_c = moment(grid, noise.coarsen(2))
    refined, se_f = moment(fine, noise)
    if coarse == 0.0:
        ratio = 1.0 if refined == 0.0 else np.inf
    else:
        ratio = refined / coarse
    return MomentEstimate(coarse, se_c, refined, se_f, ratio, bool(abs(ratio - 1.0) <= tolerance))
