"""Marginal-preserving EDDY guidance, the particle-guidance (PG) baseline, and a numeric Stein operator.

For a pair (i, j) with repulsive direction r = -grad_x k(x_i, x_j) and neighbor
vector v = v_j, the per-pair field is the Stein operator (row-wise divergence
plus matrix-times-score) of the anti-symmetric matrix A = r v^T - v r^T:

    div A + A s_i = A s_i - K v,      K = hess k - lap k * I,

which keeps the marginal of particle i fixed.  Note div A = -K v, since v_j
does not depend on x_i and the row-wise divergence of r v^T is (grad r) v.
Every function here works on arrays of shape ``(..., n, d)`` so that whole
stacks of batches can be evaluated at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (DEFAULT_FD_EPSILON, DEFAULT_HUTCHINSON_PROBES, RbfDerivativeBundle,
                      fd_hvp, hutchinson_laplacian)

NEGLIGIBLE_KERNEL = 1e-30
NEIGHBOR_MODES = ("drift", "sigma_score")
ESTIMATORS = ("exact_rbf", "approximate")


@dataclass(frozen=True)
class GuidanceConfig:
    w_g: float = 0.0
    gamma: float = 1.0
    stop_ratio: float = 1.0
    neighbor_mode: str = "drift"
    estimator: str = "exact_rbf"
    epsilon: float = DEFAULT_FD_EPSILON
    m: int = DEFAULT_HUTCHINSON_PROBES

    def __post_init__(self):
        if not self.w_g >= 0:
            raise ValueError(f"w_g must be nonnegative, got {self.w_g}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.stop_ratio <= 1.0:
            raise ValueError(f"stop_ratio must lie in [0, 1], got {self.stop_ratio}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ValueError(f"neighbor_mode must be one of {NEIGHBOR_MODES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")


def _dot(a, b):
    return np.sum(a * b, axis=-1, keepdims=True)


def antisym_apply(r, v, s):
    """(r v^T - v r^T) s without forming the matrix."""
    r, v, s = (np.asarray(a, dtype=float) for a in (r, v, s))
    if not r.shape[-1] == v.shape[-1] == s.shape[-1]:
        raise ValueError("r, v and s must share their last dimension")
    return _dot(v, s) * r - _dot(r, s) * v


def divfree_apply(bundle: RbfDerivativeBundle, v):
    """Divergence-free RBF matrix kernel (hess k - lap k I) applied to v."""
    v = np.asarray(v, dtype=float)
    delta = bundle.delta
    if v.shape != delta.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {delta.shape}")
    c = 2.0 / bundle.gamma
    d = delta.shape[-1]
    coef = d - 1.0 - c * float(delta @ delta)
    return c * bundle.value * (coef * v + c * float(delta @ v) * delta)


def _pair_geometry(positions, gamma):
    x = np.asarray(positions, dtype=float)
    n = x.shape[-2]
    if n < 2:
        raise ValueError(f"guidance needs at least two particles, got n={n}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    delta = x[..., :, None, :] - x[..., None, :, :]
    sq = np.sum(delta * delta, axis=-1)
    k = np.exp(-sq / gamma)
    active = (k >= NEGLIGIBLE_KERNEL) & ~np.eye(n, dtype=bool)
    return delta, sq, np.where(active, k, 0.0), n


def eddy_rbf_guidance(positions, scores, neighbor_vectors, gamma: float):
    """Exact EDDY-RBF field for every particle.

    psi_i = 2 / (gamma (n-1)) * sum_{j != i} k_ij (Cd_ij delta_ij + Cv_ij v_j) with
    Cd = <v_j, s_i> - (2/gamma)<delta, v_j> and Cv = (2/gamma)|delta|^2 - <delta, s_i> - (d - 1).
    """
    s = np.asarray(scores, dtype=float)
    v = np.asarray(neighbor_vectors, dtype=float)
    delta, sq, k, n = _pair_geometry(positions, gamma)
    if s.shape != delta.shape[:-2] + delta.shape[-1:] or v.shape != s.shape:
        raise ValueError("positions, scores and neighbor_vectors must all have shape (..., n, d)")
    d = delta.shape[-1]
    c = 2.0 / gamma
    vj = v[..., None, :, :]
    si = s[..., :, None, :]
    c_delta = np.sum(vj * si, axis=-1) - c * np.sum(delta * vj, axis=-1)
    c_v = c * sq - np.sum(delta * si, axis=-1) - (d - 1.0)
    terms = k[..., None] * (c_delta[..., None] * delta + c_v[..., None] * vj)
    return (c / (n - 1)) * np.sum(terms, axis=-2)


def _pair_rng(rng, i, j):
    if isinstance(rng, np.random.SeedSequence):
        child = np.random.SeedSequence(rng.entropy, spawn_key=tuple(rng.spawn_key) + (i, j))
        return np.random.default_rng(child)
    return rng


def eddy_approx_guidance(positions, scores, neighbor_vectors, kernel,
                         epsilon: float = DEFAULT_FD_EPSILON, m: int = DEFAULT_HUTCHINSON_PROBES,
                         rng=None):
    """EDDY field from a black-box kernel (value and first-argument gradient only).

    The Hessian-vector product uses a central difference of gradients and the
    Laplacian a Hutchinson estimate with ``m`` Rademacher probes.  ``rng`` may be
    a Generator (probes drawn pair by pair in (i, j) order) or a SeedSequence,
    from which an independent child stream is derived for every pair.
    """
    x = np.asarray(positions, dtype=float)
    s = np.asarray(scores, dtype=float)
    v = np.asarray(neighbor_vectors, dtype=float)
    if x.ndim != 2:
        raise ValueError("eddy_approx_guidance takes a single (n, d) batch")
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"guidance needs at least two particles, got n={n}")
    if s.shape != x.shape or v.shape != x.shape:
        raise ValueError("positions, scores and neighbor_vectors must share shape (n, d)")
    if rng is None:
        rng = np.random.default_rng()
    out = np.zeros_like(x)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if float(kernel.value(x[i], x[j])) < NEGLIGIBLE_KERNEL:
                continue
            r = -np.asarray(kernel.grad(x[i], x[j]), dtype=float)
            hv = fd_hvp(kernel.grad, x[i], x[j], v[j], epsilon)
            lap = hutchinson_laplacian(kernel.value, x[i], x[j], epsilon, m, _pair_rng(rng, i, j))
            out[i] += antisym_apply(r, v[j], s[i]) - (hv - lap * v[j])
    return out / (n - 1)


def pg_guidance(positions, gamma: float):
    """Mean repulsive direction (2/gamma) k_ij delta_ij over neighbors j != i."""
    delta, _, k, n = _pair_geometry(positions, gamma)
    return (2.0 / gamma / (n - 1)) * np.sum(k[..., None] * delta, axis=-2)


def stein_apply_numeric(matrix_field, log_density_grad, x, fd_step: float = 1e-4):
    """div F (row-wise, central differences) + F(x) grad log p(x).

    ``matrix_field`` maps points of shape (..., d) to matrices (..., d, d).
    """
    if not fd_step > 0:
        raise ValueError(f"fd_step must be positive, got {fd_step}")
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    div = np.zeros_like(x)
    for col in range(d):
        e = np.zeros(d)
        e[col] = fd_step
        div += (np.asarray(matrix_field(x + e))[..., :, col]
                - np.asarray(matrix_field(x - e))[..., :, col]) / (2.0 * fd_step)
    F = np.asarray(matrix_field(x), dtype=float)
    s = np.asarray(log_density_grad(x), dtype=float)
    return div + np.sum(F * s[..., None, :], axis=-1)


def pair_matrix_field(y, v, gamma: float):
    """x -> r(x) v^T - v r(x)^T for a frozen neighbor y and fixed vector v (RBF kernel)."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)

    def field(x):
        delta = np.asarray(x, dtype=float) - y
        k = np.exp(-np.sum(delta * delta, axis=-1, keepdims=True) / gamma)
        r = (2.0 / gamma) * k * delta
        return r[..., :, None] * v[..., None, :] - v[..., :, None] * r[..., None, :]

    return field
