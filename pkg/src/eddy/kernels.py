"""RBF kernel with closed-form derivatives, and black-box derivative estimators.

The black-box estimators only need a kernel that can return its value and its
gradient with respect to the first argument.  Both callables must broadcast
over leading axes of ``x`` (shape ``(..., d)``) against a single ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

DEFAULT_FD_EPSILON = 1e-3
DEFAULT_HUTCHINSON_PROBES = 25


class BlackBoxKernel(Protocol):
    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...

    def grad(self, x: np.ndarray, y: np.ndarray) -> np.ndarray: ...


def _check_pair(x, y, gamma):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1:] != y.shape[-1:]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if x.shape[-1] < 1:
        raise ValueError("points must have dimension >= 1")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return x, y


def rbf_eval(x, y, gamma: float):
    """exp(-||x - y||^2 / gamma); broadcasts over leading axes."""
    x, y = _check_pair(x, y, gamma)
    diff = x - y
    return np.exp(-np.sum(diff * diff, axis=-1) / gamma)


@dataclass(frozen=True)
class RbfDerivativeBundle:
    """Value and derivatives of the RBF kernel at one (x, y) pair.

    The Hessian w.r.t. x is ``-(2/gamma) k (I - (2/gamma) delta delta^T)``; it is
    kept in this rank-one-plus-identity form and applied via :meth:`hessian_apply`.
    """

    delta: np.ndarray
    gamma: float
    value: float

    @property
    def dim(self) -> int:
        return self.delta.shape[-1]

    @property
    def gradient_x(self) -> np.ndarray:
        return -(2.0 / self.gamma) * self.value * self.delta

    @property
    def repulsive_dir(self) -> np.ndarray:
        return (2.0 / self.gamma) * self.value * self.delta

    @property
    def laplacian_x(self) -> float:
        c = 2.0 / self.gamma
        return -c * self.value * (self.dim - c * float(self.delta @ self.delta))

    def hessian_apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != self.delta.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {self.delta.shape}")
        c = 2.0 / self.gamma
        return -c * self.value * (v - c * float(self.delta @ v) * self.delta)


def rbf_bundle(x, y, gamma: float) -> RbfDerivativeBundle:
    x, y = _check_pair(x, y, gamma)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("rbf_bundle takes single points")
    delta = x - y
    return RbfDerivativeBundle(delta=delta, gamma=float(gamma),
                               value=float(np.exp(-(delta @ delta) / gamma)))


class RbfKernel:
    """The RBF kernel exposed through the black-box contract."""

    def __init__(self, gamma: float):
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        self.gamma = float(gamma)

    def value(self, x, y):
        return rbf_eval(x, y, self.gamma)

    def grad(self, x, y):
        x, y = _check_pair(x, y, self.gamma)
        delta = x - y
        k = np.exp(-np.sum(delta * delta, axis=-1, keepdims=True) / self.gamma)
        return -(2.0 / self.gamma) * k * delta

    def __repr__(self):
        return f"RbfKernel(gamma={self.gamma!r})"


def fd_hvp(kernel_grad: Callable, x, y, v, epsilon: float = DEFAULT_FD_EPSILON):
    """Central-difference Hessian-vector product of k(., y) at x along v.

    ``kernel_grad(x, y)`` returns the gradient w.r.t. the first argument.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    plus = np.asarray(kernel_grad(x + epsilon * v, y), dtype=float)
    minus = np.asarray(kernel_grad(x - epsilon * v, y), dtype=float)
    return (plus - minus) / (2.0 * epsilon)


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0


def hutchinson_laplacian(kernel_value: Callable, x, y, epsilon: float = DEFAULT_FD_EPSILON,
                         m: int = DEFAULT_HUTCHINSON_PROBES,
                         rng: np.random.Generator | None = None) -> float:
    """Forward-only Laplacian estimate of k(., y) at x.

    Averages second differences ``[k(x+eps r) - 2k(x) + k(x-eps r)] / eps^2``
    over ``m`` Rademacher probes ``r``.  ``kernel_value`` must broadcast over a
    leading probe axis.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    if rng is None:
        rng = np.random.default_rng()
    x = np.asarray(x, dtype=float)
    probes = rademacher(rng, (int(m), x.shape[-1]))
    center = float(kernel_value(x, y))
    plus = np.asarray(kernel_value(x + epsilon * probes, y), dtype=float)
    minus = np.asarray(kernel_value(x - epsilon * probes, y), dtype=float)
    second = (plus - 2.0 * center + minus) / (epsilon * epsilon)
    return float(np.mean(second))
