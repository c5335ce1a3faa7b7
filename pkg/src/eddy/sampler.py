"""Guided batch sampling with stop-ratio gating.

Every batch owns a 64-bit seed.  Its initial positions and per-step Gaussian
noise come from ``SeedSequence(seed, spawn_key=(0,))`` in step-major,
particle-index order; Hutchinson probes for the approximate estimator come from
``SeedSequence(seed, spawn_key=(1, step, i, j))``.  Batches are simulated in
fixed-size chunks, so the worker count never changes any number.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (DriftField, IntegrationError, ParticleBatch, check_finite, em_update,
                       otfm_drift, vp_reverse_drift)
from .guidance import GuidanceConfig, eddy_approx_guidance, eddy_rbf_guidance, pg_guidance
from .kernels import RbfKernel
from .targets import GaussianMixture, VPSchedule

METHODS = ("iid", "eddy", "pg")
DYNAMICS = ("vp_ddpm", "ot_fm")
CHUNK_BATCHES = 256


@dataclass(frozen=True)
class RunConfig:
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    method: str = "iid"
    steps: int = 100
    n: int = 5
    dynamics_mode: str = "vp_ddpm"
    seed: int = 0
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.dynamics_mode not in DYNAMICS:
            raise ValueError(f"dynamics_mode must be one of {DYNAMICS}, got {self.dynamics_mode!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.method != "iid" and self.n < 2:
            raise ValueError("interacting methods need n >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        VPSchedule(self.beta_min, self.beta_max)

    @property
    def schedule(self) -> VPSchedule:
        return VPSchedule(self.beta_min, self.beta_max)

    @property
    def guided(self) -> bool:
        return self.method != "iid" and self.guidance.w_g > 0


def make_field(config: RunConfig, target: GaussianMixture) -> DriftField:
    if config.dynamics_mode == "vp_ddpm":
        return vp_reverse_drift(target, config.schedule)
    return otfm_drift(target)


def compute_guidance(config: RunConfig, field: DriftField, x, t: float, mu, probe_seeds=None):
    """Unweighted guidance psi for a stack of batches x of shape (B, n, d)."""
    g = config.guidance
    if config.method == "pg":
        return pg_guidance(x, g.gamma)
    scores = field.score(x, t)
    if g.neighbor_mode == "drift":
        vecs = mu
    else:
        vecs = field.volatility(t) * scores
    if g.estimator == "exact_rbf":
        return eddy_rbf_guidance(x, scores, vecs, g.gamma)
    kernel = RbfKernel(g.gamma)
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        out[b] = eddy_approx_guidance(x[b], scores[b], vecs[b], kernel, g.epsilon, g.m,
                                      rng=probe_seeds[b])
    return out


def gate_open(config: RunConfig, k: int) -> bool:
    return config.guided and k / config.steps < config.guidance.stop_ratio


def step_update(config: RunConfig, field: DriftField, x, k: int, xi, seeds=None):
    """Advance stacked batches x (B, n, d) from t = k/T by one step with noise xi."""
    t = k / config.steps
    dt = 1.0 / config.steps
    mu = np.asarray(field.drift(x, t), dtype=float)
    check_finite(mu, "drift", t, step=k)
    psi = None
    if gate_open(config, k):
        probe_seeds = None
        if config.guidance.estimator == "approximate":
            probe_seeds = [np.random.SeedSequence(int(s), spawn_key=(1, k)) for s in seeds]
        psi = config.guidance.w_g * compute_guidance(config, field, x, t, mu, probe_seeds)
        check_finite(psi, "guidance", t, step=k)
    new = em_update(x, mu, psi, field.volatility(t), dt, xi)
    check_finite(new, "state", t, step=k)
    return new


def draw_noise(seed: int, n: int, d: int, steps: int):
    """Initial positions (n, d) and step noise (steps, n, d) for one batch seed."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    x0 = rng.standard_normal((n, d))
    return x0, rng.standard_normal((steps, n, d))


def simulate(config: RunConfig, target: GaussianMixture, x0, noise, seeds=None):
    """Run all steps from explicit initial states (B, n, d) and noise (B, T, n, d)."""
    field = make_field(config, target)
    x = np.array(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite values raise IntegrationError instead
        for k in range(config.steps):
            x = step_update(config, field, x, k, noise[:, k], seeds)
    return x


def _simulate_seeds(config: RunConfig, target: GaussianMixture, seeds):
    draws = [draw_noise(s, config.n, target.dim, config.steps) for s in seeds]
    x0 = np.stack([a for a, _ in draws])
    noise = np.stack([b for _, b in draws])
    return simulate(config, target, x0, noise, seeds)


def sample_batch(config: RunConfig, target: GaussianMixture, seed: Optional[int] = None) -> ParticleBatch:
    """One batch of n guided samples at t = 1 (seed defaults to config.seed)."""
    seed = config.seed if seed is None else int(seed)
    x = _simulate_seeds(config, target, [seed])[0]
    return ParticleBatch(x, time=1.0, seed=seed, step=config.steps)


def batch_seeds(base_seed: int, n_batches: int) -> np.ndarray:
    seeds = np.array([np.random.SeedSequence(int(base_seed), spawn_key=(b,)).generate_state(1, np.uint64)[0]
                      for b in range(n_batches)], dtype=np.uint64)
    if len(np.unique(seeds)) != len(seeds):
        raise RuntimeError("batch seed collision")
    return seeds


@dataclass(frozen=True)
class SampleSet:
    positions: np.ndarray
    seeds: np.ndarray
    config: RunConfig

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, b) -> ParticleBatch:
        return ParticleBatch(self.positions[b], time=1.0, seed=int(self.seeds[b]), step=self.config.steps)


def sample_many(config: RunConfig, target: GaussianMixture, n_batches: int,
                base_seed: Optional[int] = None, threads: int = 1) -> SampleSet:
    """Independent batches with seeds derived from base_seed (default config.seed)."""
    if int(n_batches) != n_batches or n_batches < 1:
        raise ValueError("n_batches must be a positive integer")
    base_seed = config.seed if base_seed is None else int(base_seed)
    seeds = batch_seeds(base_seed, n_batches)
    chunks = [seeds[i:i + CHUNK_BATCHES] for i in range(0, n_batches, CHUNK_BATCHES)]
    offsets = range(0, n_batches, CHUNK_BATCHES)

    def run(args):
        offset, chunk = args
        try:
            return _simulate_seeds(config, target, chunk)
        except IntegrationError as err:
            err.batch = offset + (err.batch or 0)
            raise

    if threads <= 1 or len(chunks) == 1:
        parts = [run(a) for a in zip(offsets, chunks)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, zip(offsets, chunks)))
    return SampleSet(np.concatenate(parts, axis=0), seeds, config)
