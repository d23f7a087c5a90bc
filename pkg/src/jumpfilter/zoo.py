"""Registry of named parametric model families.

Experiments refer to models by ``name`` plus a parameter map, so a run is
fully described by a text config.  Every builder declares growth constants
that are valid for its parameters and a Gaussian prior for ``X_0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .model import GaussianPrior, GrowthConstants, LevyMeasureSpec, ModelSpec

__all__ = ["ZooEntry", "build_model", "list_models", "MODEL_ZOO"]


@dataclass(frozen=True)
class ZooEntry:
    name: str
    summary: str
    defaults: dict
    builder: Callable[[dict], ModelSpec]


def _zero_jump(d):
    def jump(t, z, mark):
        return np.zeros((z.shape[0], d))

    return jump


def _spec(**kw) -> ModelSpec:
    return ModelSpec(**kw)


# --- builders ---------------------------------------------------------------


def _zero(p: dict) -> ModelSpec:
    d = int(p["dim"])
    return _spec(
        dim_x=d,
        dim_y=d,
        dim_w=d,
        drift_b=lambda t, z: np.zeros((z.shape[0], d)),
        diffusion_sigma=lambda t, z: np.zeros((d, d)),
        diffusion_rho=lambda t, z: np.zeros((d, d)),
        obs_drift_B=lambda t, z: np.zeros((z.shape[0], d)),
        jump_eta=_zero_jump(d),
        jump_xi=_zero_jump(d),
        levy_nu0=LevyMeasureSpec.empty(d),
        levy_nu1=LevyMeasureSpec.empty(d),
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(0.0, 0.0, 0.0, 0.0),
        prior=GaussianPrior(np.zeros(d), np.zeros((d, d))),
        state_independent_jumps=True,
    )


def _constant_drift(p: dict) -> ModelSpec:
    c = float(p["c"])
    return _spec(
        dim_x=1,
        dim_y=1,
        dim_w=1,
        drift_b=lambda t, z: np.full((z.shape[0], 1), c),
        diffusion_sigma=lambda t, z: np.zeros((1, 1)),
        diffusion_rho=lambda t, z: np.zeros((1, 1)),
        obs_drift_B=lambda t, z: np.zeros((z.shape[0], 1)),
        jump_eta=_zero_jump(1),
        jump_xi=_zero_jump(1),
        levy_nu0=LevyMeasureSpec.empty(1),
        levy_nu1=LevyMeasureSpec.empty(1),
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(c * c, 0.0, 0.0, 0.0),
        prior=GaussianPrior(np.zeros(1), np.zeros((1, 1))),
        state_independent_jumps=True,
    )


def _linear_gaussian(p: dict) -> ModelSpec:
    A = np.atleast_2d(np.asarray(p["A"], dtype=float))
    d = A.shape[0]
    H = np.asarray(p["H"], dtype=float)
    H = H.reshape(-1, d) if H.ndim else np.full((1, d), float(H))
    dy = H.shape[0]
    sigma = np.asarray(p["sigma"], dtype=float)
    sigma = sigma * np.eye(d) if sigma.ndim == 0 else sigma.reshape(d, -1)
    dw = sigma.shape[1]
    rho = np.asarray(p["rho"], dtype=float)
    rho = np.full((d, dy), float(rho)) if rho.ndim == 0 else rho.reshape(d, dy)
    rhoH = rho @ H
    K = max(0.0, float(np.max(np.linalg.eigvalsh(-(rhoH + rhoH.T) / 2))))
    growth = GrowthConstants(
        float(np.sum(sigma**2) + np.sum(rho**2)),
        float(np.linalg.norm(A, 2) ** 2),
        float(np.linalg.norm(H, 2) ** 2),
        K,
    )
    m0 = np.broadcast_to(np.asarray(p["m0"], dtype=float), (d,)).copy()
    P0 = np.asarray(p["P0"], dtype=float)
    P0 = P0 * np.eye(d) if P0.ndim == 0 else P0.reshape(d, d)
    return _spec(
        dim_x=d,
        dim_y=dy,
        dim_w=dw,
        drift_b=lambda t, z: z[:, :d] @ A.T,
        diffusion_sigma=lambda t, z: sigma,
        diffusion_rho=lambda t, z: rho,
        obs_drift_B=lambda t, z: z[:, :d] @ H.T,
        jump_eta=_zero_jump(d),
        jump_xi=_zero_jump(d),
        levy_nu0=LevyMeasureSpec.empty(1),
        levy_nu1=LevyMeasureSpec.empty(dy),
        horizon_T=float(p["T"]),
        growth_constants=growth,
        prior=GaussianPrior(m0, P0),
        state_independent_jumps=True,
    )


def _tanh_observation(p: dict) -> ModelSpec:
    kappa, s, r, h = (float(p[k]) for k in ("kappa", "sigma", "rho", "h"))
    return _spec(
        dim_x=1,
        dim_y=1,
        dim_w=1,
        drift_b=lambda t, z: -kappa * z[:, :1],
        diffusion_sigma=lambda t, z: np.array([[s]]),
        diffusion_rho=lambda t, z: np.array([[r]]),
        obs_drift_B=lambda t, z: h * np.tanh(z[:, :1]),
        jump_eta=_zero_jump(1),
        jump_xi=_zero_jump(1),
        levy_nu0=LevyMeasureSpec.empty(1),
        levy_nu1=LevyMeasureSpec.empty(1),
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(s * s + r * r + h * h, kappa * kappa, 0.0, abs(r * h)),
        prior=GaussianPrior(np.array([float(p["m0"])]), np.array([[float(p["P0"])]])),
        state_independent_jumps=True,
    )


def _ou_jump(p: dict) -> ModelSpec:
    kappa, theta, s, r, h, c = (float(p[k]) for k in ("kappa", "theta", "sigma", "rho", "h", "xi_scale"))
    nu0 = LevyMeasureSpec.atomic(p["nu0_marks"], p["nu0_masses"]) if p["nu0_masses"] else LevyMeasureSpec.empty(1)
    nu1 = LevyMeasureSpec.atomic(p["nu1_marks"], p["nu1_masses"]) if p["nu1_masses"] else LevyMeasureSpec.empty(1)

    def eta(t, z, mark):
        return np.broadcast_to(mark[:, :1], (z.shape[0], 1)).copy()

    def xi(t, z, mark):
        return np.broadcast_to(c * mark[:, :1], (z.shape[0], 1)).copy()

    jumps_l2 = nu0.second_moment() + c * c * nu1.second_moment()
    K0 = max(2 * kappa**2 * theta**2, s * s + r * r, jumps_l2, nu1.second_moment())
    return _spec(
        dim_x=1,
        dim_y=1,
        dim_w=1,
        drift_b=lambda t, z: kappa * (theta - z[:, :1]),
        diffusion_sigma=lambda t, z: np.array([[s]]),
        diffusion_rho=lambda t, z: np.array([[r]]),
        obs_drift_B=lambda t, z: h * z[:, :1],
        jump_eta=eta,
        jump_xi=xi,
        levy_nu0=nu0,
        levy_nu1=nu1,
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(K0, 2 * kappa**2, h * h, abs(r * h)),
        prior=GaussianPrior(np.array([float(p["m0"])]), np.array([[float(p["P0"])]])),
        state_independent_jumps=True,
    )


def _scaled_jump(p: dict) -> ModelSpec:
    kappa, s, r, h, c = (float(p[k]) for k in ("kappa", "sigma", "rho", "h", "xi_scale"))
    nu1 = LevyMeasureSpec.gaussian(float(p["jump_rate"]), p["mark_mean"], p["mark_std"])

    def xi(t, z, mark):
        return c * mark[:, :1] * z[:, :1]

    m2 = nu1.second_moment()
    return _spec(
        dim_x=1,
        dim_y=1,
        dim_w=1,
        drift_b=lambda t, z: -kappa * z[:, :1],
        diffusion_sigma=lambda t, z: np.array([[s]]),
        diffusion_rho=lambda t, z: np.array([[r]]),
        obs_drift_B=lambda t, z: h * np.tanh(z[:, :1]),
        jump_eta=_zero_jump(1),
        jump_xi=xi,
        levy_nu0=LevyMeasureSpec.empty(1),
        levy_nu1=nu1,
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(max(s * s + r * r + h * h, m2), kappa**2, c * c * m2, abs(r * h)),
        prior=GaussianPrior(np.array([float(p["m0"])]), np.array([[float(p["P0"])]])),
    )


def _rotation(p: dict) -> ModelSpec:
    om, lam, s, h = (float(p[k]) for k in ("omega", "damping", "sigma", "h"))
    M = np.array([[-lam, -om], [om, -lam]])
    sig = s * np.eye(2)
    return _spec(
        dim_x=2,
        dim_y=1,
        dim_w=2,
        drift_b=lambda t, z: z[:, :2] @ M.T,
        diffusion_sigma=lambda t, z: sig,
        diffusion_rho=lambda t, z: np.zeros((2, 1)),
        obs_drift_B=lambda t, z: h * np.tanh(z[:, :1]),
        jump_eta=_zero_jump(2),
        jump_xi=_zero_jump(2),
        levy_nu0=LevyMeasureSpec.empty(1),
        levy_nu1=LevyMeasureSpec.empty(1),
        horizon_T=float(p["T"]),
        growth_constants=GrowthConstants(2 * s * s + h * h, float(np.linalg.norm(M, 2) ** 2), 0.0, 0.0),
        prior=GaussianPrior(np.array([1.0, 0.0]), 0.25 * np.eye(2)),
        state_independent_jumps=True,
    )


MODEL_ZOO: dict[str, ZooEntry] = {
    e.name: e
    for e in [
        ZooEntry("zero", "all coefficients zero, no jumps", {"dim": 1, "T": 1.0}, _zero),
        ZooEntry("constant_drift", "b = c, everything else zero", {"c": 1.0, "T": 1.0}, _constant_drift),
        ZooEntry(
            "linear_gaussian",
            "b = A x, B = H x, constant sigma and rho, no jumps",
            {"A": -1.0, "H": 1.0, "sigma": 1.0, "rho": 0.0, "m0": 1.0, "P0": 0.5, "T": 1.0},
            _linear_gaussian,
        ),
        ZooEntry(
            "tanh_observation",
            "b = -kappa x, bounded B = h tanh(x), correlated noise",
            {"kappa": 1.0, "sigma": 1.0, "rho": 0.5, "h": 1.0, "m0": 0.5, "P0": 0.5, "T": 1.0},
            _tanh_observation,
        ),
        ZooEntry(
            "ou_jump",
            "OU signal with constant and mark-proportional jumps, B = h x",
            {
                "kappa": 1.0,
                "theta": 1.0,
                "sigma": 0.5,
                "rho": 0.0,
                "h": 1.0,
                "xi_scale": 1.0,
                "nu0_marks": [0.3],
                "nu0_masses": [1.0],
                "nu1_marks": [0.5, -0.5],
                "nu1_masses": [1.0, 0.5],
                "m0": 1.0,
                "P0": 0.1,
                "T": 1.0,
            },
            _ou_jump,
        ),
        ZooEntry(
            "scaled_jump",
            "b = -kappa x, xi = c z x with Gaussian marks, B = h tanh(x)",
            {
                "kappa": 1.0,
                "sigma": 0.5,
                "rho": 0.0,
                "h": 1.0,
                "xi_scale": 0.5,
                "jump_rate": 2.0,
                "mark_mean": 1.0,
                "mark_std": 0.3,
                "m0": 1.0,
                "P0": 0.1,
                "T": 1.0,
            },
            _scaled_jump,
        ),
        ZooEntry(
            "rotation",
            "2-d damped rotation observed through h tanh(x1)",
            {"omega": 1.0, "damping": 0.5, "sigma": 0.5, "h": 1.0, "T": 1.0},
            _rotation,
        ),
    ]
}


def list_models() -> list[tuple[str, str]]:
    return [(e.name, e.summary) for e in MODEL_ZOO.values()]


def build_model(name: str, params: dict[str, Any] | None = None) -> ModelSpec:
    """Instantiate a zoo entry, rejecting unknown parameter names."""
    if name not in MODEL_ZOO:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_ZOO)}")
    entry = MODEL_ZOO[name]
    params = dict(params or {})
    unknown = sorted(set(params) - set(entry.defaults))
    if unknown:
        raise ValueError(f"unknown parameters for model {name!r}: {unknown}")
    merged = {**entry.defaults, **params}
    spec = entry.builder(merged)
    object.__setattr__(spec, "name", name)
    object.__setattr__(spec, "params", merged)
    return spec
