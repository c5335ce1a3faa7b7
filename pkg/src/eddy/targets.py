"""Isotropic Gaussian-mixture targets and their variance-preserving noised marginals.

Time runs in the sampler's direction: t = 0 is the N(0, I) prior and t = 1 is
the clean target.  The VP schedule is parametrised in reversed time s = 1 - t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussianMixture:
    centers: np.ndarray
    weights: np.ndarray
    variance: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if centers.shape[0] < 1:
            raise ValueError("mixture needs at least one component")
        if weights.shape[0] != centers.shape[0]:
            raise ValueError("weights and centers disagree on component count")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the probability simplex")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        centers.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def n_components(self) -> int:
        return self.centers.shape[0]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {x.shape}")
        return x

    def _component_logits(self, x):
        # log w_l + log N(x; c_l, var I), shape (..., m)
        diff = x[..., None, :] - self.centers
        sq = np.sum(diff * diff, axis=-1)
        norm = 0.5 * self.dim * np.log(2.0 * np.pi * self.variance)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logw - norm - 0.5 * sq / self.variance

    def responsibilities(self, x):
        logits = self._component_logits(self._check(x))
        logits = logits - logits.max(axis=-1, keepdims=True)
        r = np.exp(logits)
        return r / r.sum(axis=-1, keepdims=True)

    def log_density(self, x):
        logits = self._component_logits(self._check(x))
        top = logits.max(axis=-1)
        return top + np.log(np.sum(np.exp(logits - top[..., None]), axis=-1))

    def density(self, x):
        return np.exp(self.log_density(x))

    def score(self, x):
        x = self._check(x)
        rho = self.responsibilities(x)
        # explicit reduction instead of matmul keeps results independent of batch size
        mean = np.sum(rho[..., :, None] * self.centers, axis=-2)
        return (mean - x) / self.variance

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.centers[labels] + np.sqrt(self.variance) * noise


def ring_mixture(m: int = 5, radius: float = 5.0, variance: float = 1.0) -> GaussianMixture:
    """Equal-weight mixture in 2D, component l centred at radius*(sin(2 pi l/m), cos(2 pi l/m))."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    angles = 2.0 * np.pi * np.arange(m) / m
    centers = radius * np.stack([np.sin(angles), np.cos(angles)], axis=1)
    return GaussianMixture(centers, np.full(m, 1.0 / m), variance)


def mixture_log_density(gm: GaussianMixture, x):
    return gm.log_density(x)


def mixture_score(gm: GaussianMixture, x):
    return gm.score(x)


def sample_mixture(gm: GaussianMixture, n: int, rng: np.random.Generator) -> np.ndarray:
    return gm.sample(n, rng)


@dataclass(frozen=True)
class VPSchedule:
    """Linear beta in reversed time, beta(s) = beta_min + s (beta_max - beta_min)."""

    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")

    def beta(self, t):
        """Rate at sampler time t, i.e. beta evaluated at reversed time 1 - t."""
        s = 1.0 - np.asarray(t, dtype=float)
        return self.beta_min + s * (self.beta_max - self.beta_min)

    def integrated_beta(self, t):
        s = 1.0 - np.asarray(t, dtype=float)
        return self.beta_min * s + 0.5 * (self.beta_max - self.beta_min) * s * s

    def alpha(self, t):
        return np.exp(-0.5 * self.integrated_beta(t))

    def noise_variance(self, t):
        return 1.0 - self.alpha(t) ** 2


def _check_time(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t


def noised_mixture(gm: GaussianMixture, schedule: VPSchedule, t: float) -> GaussianMixture:
    """Exact VP marginal p_t of the target at sampler time t."""
    t = _check_time(t)
    if t == 1.0:
        return gm
    a = float(schedule.alpha(t))
    return GaussianMixture(a * gm.centers, gm.weights, a * a * gm.variance + (1.0 - a * a))


def renoise(gm_t: GaussianMixture, schedule: VPSchedule, t: float, t_new: float) -> GaussianMixture:
    """Push a marginal at time t further back toward the prior, to t_new <= t."""
    t, t_new = _check_time(t), _check_time(t_new)
    if t_new > t:
        raise ValueError("renoising only moves toward the prior (t_new <= t)")
    ratio = float(schedule.alpha(t_new) / schedule.alpha(t))
    return GaussianMixture(ratio * gm_t.centers, gm_t.weights,
                           ratio * ratio * gm_t.variance + (1.0 - ratio * ratio))
