import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eddy.kernels import (RbfKernel, fd_hvp, hutchinson_laplacian, rademacher, rbf_bundle, rbf_eval)


def brute_hessian(x, y, gamma, h=1e-4):
    d = x.size
    H = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            ei = np.eye(d)[i] * h
            ej = np.eye(d)[j] * h
            H[i, j] = (rbf_eval(x + ei + ej, y, gamma) - rbf_eval(x + ei - ej, y, gamma)
                       - rbf_eval(x - ei + ej, y, gamma) + rbf_eval(x - ei - ej, y, gamma)) / (4 * h * h)
    return H


def test_rbf_trivial_values():
    assert rbf_eval(np.zeros(3), np.zeros(3), 1.0) == 1.0
    np.testing.assert_allclose(rbf_eval(np.array([1.0, 0.0]), np.zeros(2), 2.0), math.exp(-0.5))


def test_rbf_rejects_bad_inputs():
    with pytest.raises(ValueError):
        rbf_eval(np.zeros(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        rbf_eval(np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        rbf_bundle(np.zeros(2), np.zeros(2), -1.0)


def test_rbf_broadcasts_over_leading_axes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 7, 3))
    y = rng.normal(size=3)
    out = rbf_eval(x, y, 1.5)
    assert out.shape == (4, 7)
    np.testing.assert_allclose(out[2, 5], rbf_eval(x[2, 5], y, 1.5))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-10, 10)), arrays(np.float64, 4, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_rbf_symmetric_exactly(x, y, gamma):
    assert rbf_eval(x, y, gamma) == rbf_eval(y, x, gamma)


@pytest.mark.parametrize("d", [1, 2, 8, 64])
def test_gradient_matches_central_differences(d):
    rng = np.random.default_rng(d)
    gamma = float(d)
    x, y = rng.normal(size=(2, d)) * 0.5
    h = 1e-5
    fd = np.array([(rbf_eval(x + h * e, y, gamma) - rbf_eval(x - h * e, y, gamma)) / (2 * h) for e in np.eye(d)])
    np.testing.assert_allclose(rbf_bundle(x, y, gamma).gradient_x, fd, rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(RbfKernel(gamma).grad(x, y), fd, rtol=1e-6, atol=1e-12)


def test_repulsive_direction_points_away():
    b = rbf_bundle(np.array([1.0, 0.0]), np.zeros(2), 1.0)
    assert b.repulsive_dir[0] > 0
    np.testing.assert_array_equal(b.repulsive_dir, -b.gradient_x)


@pytest.mark.parametrize("d", [1, 2, 8, 64])
def test_hessian_apply_matches_fd_hvp(d):
    rng = np.random.default_rng(10 + d)
    gamma = float(d)
    x, y, v = rng.normal(size=(3, d)) * 0.5
    exact = rbf_bundle(x, y, gamma).hessian_apply(v)
    np.testing.assert_allclose(fd_hvp(RbfKernel(gamma).grad, x, y, v, 1e-4), exact, rtol=1e-5, atol=1e-12)


def test_hessian_apply_matches_dense_brute_force():
    rng = np.random.default_rng(3)
    x, y, v = rng.normal(size=(3, 3)) * 0.6
    np.testing.assert_allclose(rbf_bundle(x, y, 1.2).hessian_apply(v), brute_hessian(x, y, 1.2) @ v,
                               rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("d", [1, 2, 8, 64])
def test_laplacian_is_trace_of_hessian(d):
    rng = np.random.default_rng(20 + d)
    x, y = rng.normal(size=(2, d)) * 0.3
    b = rbf_bundle(x, y, float(d))
    trace = sum(e @ b.hessian_apply(e) for e in np.eye(d))
    np.testing.assert_allclose(b.laplacian_x, trace, rtol=1e-10)


def test_hessian_apply_rejects_wrong_shape():
    with pytest.raises(ValueError):
        rbf_bundle(np.zeros(3), np.ones(3), 1.0).hessian_apply(np.ones(2))


def test_fd_hvp_of_zero_vector_is_zero():
    out = fd_hvp(RbfKernel(1.0).grad, np.ones(3), np.zeros(3), np.zeros(3))
    np.testing.assert_array_equal(out, np.zeros(3))


def test_fd_hvp_second_order():
    rng = np.random.default_rng(7)
    x, y, v = rng.normal(size=(3, 4)) * 0.4
    exact = rbf_bundle(x, y, 1.0).hessian_apply(v)
    errs = [np.linalg.norm(fd_hvp(RbfKernel(1.0).grad, x, y, v, eps) - exact) for eps in (0.1, 0.05)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_fd_hvp_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        fd_hvp(RbfKernel(1.0).grad, np.zeros(2), np.ones(2), np.ones(2), 0.0)


def test_rademacher_signs_balanced():
    r = rademacher(np.random.default_rng(0), (20000,))
    assert set(np.unique(r)) == {-1.0, 1.0}
    assert abs(r.mean()) < 0.03


@pytest.mark.parametrize("d", [2, 8, 32])
def test_hutchinson_unbiased(d):
    rng = np.random.default_rng(30 + d)
    x, y = rng.normal(size=(2, d)) * 0.4
    kernel = RbfKernel(float(d))
    exact = rbf_bundle(x, y, float(d)).laplacian_x
    runs = np.array([hutchinson_laplacian(kernel.value, x, y, 1e-3, 25, rng) for _ in range(50)])
    se = runs.std(ddof=1) / math.sqrt(runs.size)
    assert abs(runs.mean() - exact) <= 4 * se


def test_hutchinson_exact_in_one_dimension():
    # a single coordinate has no off-diagonal terms, so any probe count is exact up to O(eps^2)
    x, y = np.array([0.3]), np.array([-0.2])
    est = hutchinson_laplacian(RbfKernel(1.0).value, x, y, 1e-3, 3, np.random.default_rng(0))
    np.testing.assert_allclose(est, rbf_bundle(x, y, 1.0).laplacian_x, rtol=1e-5)


def test_hutchinson_rejects_bad_arguments():
    k = RbfKernel(1.0)
    with pytest.raises(ValueError):
        hutchinson_laplacian(k.value, np.zeros(2), np.ones(2), m=0)
    with pytest.raises(ValueError):
        hutchinson_laplacian(k.value, np.zeros(2), np.ones(2), epsilon=-1.0)
