"""Drift fields for VP reverse diffusion and OT flow matching, plus the Euler-Maruyama step."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .targets import GaussianMixture, VPSchedule, noised_mixture


class IntegrationError(FloatingPointError):
    """Raised when a drift or guidance evaluation produces non-finite values."""

    def __init__(self, message: str, particle: int, time: float, step: Optional[int] = None,
                 batch: Optional[int] = None):
        super().__init__(message)
        self.particle = particle
        self.time = time
        self.step = step
        self.batch = batch

    def __str__(self):
        where = f"particle {self.particle} at t={self.time:.6g}"
        if self.step is not None:
            where += f", step {self.step}"
        if self.batch is not None:
            where += f", batch {self.batch}"
        return f"{self.args[0]} ({where})"


@dataclass(frozen=True)
class DriftField:
    """Drift mu_t(x) and scalar volatility sigma_t, both vectorised over leading axes of x.

    ``score`` returns grad log p_t(x) for the marginal path this drift transports.
    """

    drift: Callable[[np.ndarray, float], np.ndarray]
    volatility: Callable[[float], float]
    score: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    name: str = "custom"


@dataclass(frozen=True)
class ParticleBatch:
    positions: np.ndarray
    time: float = 0.0
    seed: Optional[int] = None
    step: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError(f"positions must be an (n, d) array with n >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _check_time(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")


def vp_reverse_drift(gm: GaussianMixture, schedule: VPSchedule) -> DriftField:
    """Reverse-time VP SDE run forward in sampler time, with the exact mixture score."""

    def score(x, t):
        _check_time(t)
        return noised_mixture(gm, schedule, t).score(x)

    def drift(x, t):
        beta = float(schedule.beta(t))
        x = np.asarray(x, dtype=float)
        return 0.5 * beta * x + beta * score(x, t)

    def volatility(t):
        _check_time(t)
        return float(np.sqrt(schedule.beta(t)))

    return DriftField(drift, volatility, score, name="vp_ddpm")


def ot_conditional_mean(gm: GaussianMixture, x, t: float):
    """E[x1 | x_t] for x_t = t x1 + (1 - t) x0, x0 ~ N(0, I), x1 ~ gm."""
    x = np.asarray(x, dtype=float)
    var_t = t * t * gm.variance + (1.0 - t) ** 2
    path = GaussianMixture(t * gm.centers, gm.weights, var_t)
    rho = path.responsibilities(x)
    gain = t * gm.variance / var_t
    # per-component posterior mean c + gain (x - t c), mixed by responsibilities
    comp = gm.centers + gain * (x[..., None, :] - t * gm.centers)
    return np.sum(rho[..., :, None] * comp, axis=-2)


def otfm_drift(gm: GaussianMixture) -> DriftField:
    """Deterministic OT flow-matching velocity E[x1 - x0 | x_t] for a Gaussian-mixture target."""

    def drift(x, t):
        if not 0.0 <= t < 1.0:
            raise ValueError(f"OT velocity is singular at t=1; got t={t}")
        x = np.asarray(x, dtype=float)
        return (ot_conditional_mean(gm, x, t) - x) / (1.0 - t)

    def score(x, t):
        return score_from_velocity(drift(x, t), x, t)

    return DriftField(drift, lambda t: 0.0, score, name="ot_fm")


def ot_path_marginal(gm: GaussianMixture, t: float) -> GaussianMixture:
    """Marginal of x_t = t x1 + (1 - t) x0 along the OT path."""
    return GaussianMixture(t * gm.centers, gm.weights, t * t * gm.variance + (1.0 - t) ** 2)


def score_from_velocity(velocity, x, t: float):
    """Tweedie conversion of an OT flow-matching velocity into the marginal score."""
    if not t < 1.0:
        raise ValueError(f"score is undefined at t >= 1 (got t={t})")
    return (t * np.asarray(velocity, dtype=float) - np.asarray(x, dtype=float)) / (1.0 - t)


def em_update(x, drift, guidance, sigma: float, dt: float, xi):
    """x + (mu + psi) dt + sigma sqrt(dt) xi, the single shared update expression."""
    total = drift if guidance is None else drift + guidance
    return x + total * dt + (sigma * np.sqrt(dt)) * xi


def check_finite(values, what: str, time: float, step=None, batch=None):
    bad = ~np.all(np.isfinite(values), axis=-1)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        b = int(idx[0]) if len(idx) > 1 else batch
        raise IntegrationError(f"non-finite {what}", particle=int(idx[-1]), time=time,
                               step=step, batch=b)


def euler_maruyama_step(batch: ParticleBatch, field: DriftField, guidance=None,
                        dt: float = 0.01, rng: Optional[np.random.Generator] = None) -> ParticleBatch:
    """One Euler-Maruyama step of every particle; noise is drawn in particle-index order."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = batch.positions
    t = batch.time
    mu = np.asarray(field.drift(x, t), dtype=float)
    check_finite(mu, "drift", t, batch.step)
    if guidance is not None:
        guidance = np.asarray(guidance, dtype=float)
        if guidance.shape != x.shape:
            raise ValueError(f"guidance shape {guidance.shape} does not match batch {x.shape}")
        check_finite(guidance, "guidance", t, batch.step)
    if rng is None:
        rng = np.random.default_rng()
    xi = rng.standard_normal(x.shape)
    new = em_update(x, mu, guidance, field.volatility(t), dt, xi)
    check_finite(new, "state", t, batch.step)
    return replace(batch, positions=new, time=t + dt, step=batch.step + 1)
