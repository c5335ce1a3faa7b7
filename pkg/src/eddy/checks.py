"""Invariant checks run by ``eddy verify``, each under a stable ID.

Every check returns a :class:`CheckResult`; ``run_all`` evaluates the whole
suite in a fixed order.  Module attributes (for example
``guidance.divfree_apply``) are looked up at call time so that a patched
implementation is exercised rather than a captured reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, guidance, kernels, sampler, stats, targets


@dataclass
class CheckResult:
    id: str
    passed: bool
    value: float
    threshold: float
    description: str
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"id": self.id, "passed": bool(self.passed), "value": self.value,
                "threshold": self.threshold, "description": self.description, "details": self.details}


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _rng(offset):
    return np.random.default_rng(np.random.SeedSequence(20240, spawn_key=(offset,)))


# kernels

def check_kernel_symmetry():
    rng = _rng(1)
    worst = 0.0
    for d in (1, 2, 8, 64):
        x, y = rng.normal(size=(2, 16, d))
        worst = max(worst, float(np.max(np.abs(kernels.rbf_eval(x, y, 1.3) - kernels.rbf_eval(y, x, 1.3)))))
    return CheckResult("kernels.symmetry", worst == 0.0, worst, 0.0, "rbf_eval(x, y) == rbf_eval(y, x) exactly")


def check_kernel_gradient():
    rng = _rng(2)
    worst = 0.0
    h = 1e-5
    for d in (1, 2, 8, 64):
        gamma = float(d)
        x = rng.normal(size=d) * 0.5
        y = rng.normal(size=d) * 0.5
        fd = np.array([(kernels.rbf_eval(x + h * e, y, gamma) - kernels.rbf_eval(x - h * e, y, gamma)) / (2 * h)
                       for e in np.eye(d)])
        worst = max(worst, _rel(kernels.rbf_bundle(x, y, gamma).gradient_x, fd))
    return CheckResult("kernels.gradient_fd", worst <= 1e-6, worst, 1e-6,
                       "closed-form gradient vs central differences (h = 1e-5)")


def check_kernel_hessian():
    rng = _rng(3)
    worst = 0.0
    for d in (1, 2, 8, 64):
        gamma = float(d)
        x, y, v = rng.normal(size=(3, d)) * 0.5
        bundle = kernels.rbf_bundle(x, y, gamma)
        fd = kernels.fd_hvp(kernels.RbfKernel(gamma).grad, x, y, v, 1e-4)
        worst = max(worst, _rel(bundle.hessian_apply(v), fd))
    return CheckResult("kernels.hessian_fd", worst <= 1e-5, worst, 1e-5,
                       "Hessian-apply vs fd_hvp (epsilon = 1e-4)")


def check_kernel_laplacian():
    rng = _rng(4)
    worst = 0.0
    for d in (1, 2, 8, 64):
        x, y = rng.normal(size=(2, d)) * 0.3
        bundle = kernels.rbf_bundle(x, y, float(d))
        trace = sum(float(e @ bundle.hessian_apply(e)) for e in np.eye(d))
        worst = max(worst, _rel(bundle.laplacian_x, trace))
    return CheckResult("kernels.laplacian_trace", worst <= 1e-10, worst, 1e-10,
                       "closed-form Laplacian vs trace of Hessian-apply")


def check_hutchinson_unbiased():
    rng = _rng(5)
    worst = 0.0
    for d in (2, 8, 32):
        x, y = rng.normal(size=(2, d)) * 0.4
        gamma = float(d)
        exact = kernels.rbf_bundle(x, y, gamma).laplacian_x
        runs = np.array([kernels.hutchinson_laplacian(kernels.RbfKernel(gamma).value, x, y, 1e-3, 25, rng)
                         for _ in range(50)])
        se = runs.std(ddof=1) / math.sqrt(runs.size)
        worst = max(worst, abs(runs.mean() - exact) / se)
    return CheckResult("kernels.hutchinson_unbiased", worst <= 4.0, worst, 4.0,
                       "mean of 50 Hutchinson runs (m = 25) within 4 SE of the closed form")


# targets

def check_responsibilities():
    gm = targets.ring_mixture()
    x = _rng(6).normal(scale=6.0, size=(500, 2))
    err = float(np.max(np.abs(gm.responsibilities(x).sum(axis=-1) - 1.0)))
    return CheckResult("targets.responsibilities_sum", err <= 1e-12, err, 1e-12, "responsibilities sum to 1")


def check_semigroup():
    gm = targets.ring_mixture()
    sched = targets.VPSchedule()
    worst = 0.0
    for t, t_new in ((0.9, 0.5), (0.7, 0.1), (0.5, 0.2)):
        direct = targets.noised_mixture(gm, sched, t_new)
        via = targets.renoise(targets.noised_mixture(gm, sched, t), sched, t, t_new)
        worst = max(worst, float(np.max(np.abs(direct.centers - via.centers))),
                    abs(direct.variance - via.variance))
    return CheckResult("targets.noising_semigroup", worst <= 1e-10, worst, 1e-10,
                       "noise to t then renoise to t' equals direct noising to t'")


def check_noised_score():
    gm = targets.ring_mixture()
    sched = targets.VPSchedule()
    x = _rng(7).normal(scale=4.0, size=(50, 2))
    h = 1e-5
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        p = targets.noised_mixture(gm, sched, t)
        fd = np.stack([(p.log_density(x + h * e) - p.log_density(x - h * e)) / (2 * h) for e in np.eye(2)], -1)
        worst = max(worst, _rel(p.score(x), fd))
    return CheckResult("targets.score_fd", worst <= 1e-6, worst, 1e-6,
                       "noised mixture score vs differences of its log density")


# dynamics

def check_tweedie():
    gm = targets.GaussianMixture(np.array([[1.5, -0.5]]), np.array([1.0]), 0.7)
    x = _rng(8).normal(size=(40, 2))
    field_ = dynamics.otfm_drift(gm)
    worst = 0.0
    for t in (0.1, 0.5, 0.9):
        score = dynamics.score_from_velocity(field_.drift(x, t), x, t)
        worst = max(worst, _rel(score, dynamics.ot_path_marginal(gm, t).score(x)))
    return CheckResult("dynamics.tweedie_roundtrip", worst <= 1e-5, worst, 1e-5,
                       "score from OT velocity equals the analytic path score")


def ou_moment_error(steps: int, n_paths: int = 20000, seed: int = 0):
    """Weak error of Euler-Maruyama on dx = -x dt + sqrt(2) dW from x0 = 2 over unit time."""
    field_ = dynamics.DriftField(lambda x, t: -np.asarray(x), lambda t: math.sqrt(2.0))
    rng = np.random.default_rng(seed)
    x = np.full((n_paths, 1), 2.0)
    dt = 1.0 / steps
    for _ in range(steps):
        x = dynamics.em_update(x, field_.drift(x, 0.0), None, field_.volatility(0.0), dt,
                               rng.standard_normal(x.shape))
    mean = 2.0 * math.exp(-1.0)
    var = 1.0 - math.exp(-2.0)
    return abs(float(x.mean()) - mean), abs(float(x.var()) - var)


def check_weak_accuracy():
    steps = (10, 20, 40, 80)
    errs = [max(ou_moment_error(t, n_paths=200_000, seed=t)) for t in steps]
    bound = [1.0 / t + 0.01 for t in steps]
    ok = all(e <= b for e, b in zip(errs, bound))
    return CheckResult("dynamics.weak_accuracy", ok, max(e / b for e, b in zip(errs, bound)), 1.0,
                       "OU mean and variance error below dt plus Monte Carlo slack",
                       {"steps": list(steps), "errors": errs, "bounds": bound})


def check_determinism():
    gm = targets.ring_mixture()
    cfg = sampler.RunConfig(guidance.GuidanceConfig(w_g=1.0), method="eddy", steps=20)
    a = sampler.sample_batch(cfg, gm, seed=11).positions
    b = sampler.sample_batch(cfg, gm, seed=11).positions
    same = a.tobytes() == b.tobytes()
    return CheckResult("dynamics.determinism", same, 0.0 if same else 1.0, 0.0,
                       "identical seeds give bitwise-identical trajectories")


# guidance

def check_antisymmetry():
    rng = _rng(9)
    worst = 0.0
    for d in (2, 8, 64):
        r, v, s = rng.normal(size=(3, d))
        out = guidance.antisym_apply(r, v, s)
        worst = max(worst, abs(float(s @ out)) / (np.linalg.norm(s) * np.linalg.norm(out) + 1e-300))
        dense = np.outer(r, v) - np.outer(v, r)
        worst = max(worst, float(np.max(np.abs(dense + dense.T))))
    return CheckResult("guidance.antisymmetry", worst <= 1e-12, worst, 1e-12,
                       "<s, A s> = 0 and A = -A^T")


def _grid(lo=-7.0, hi=7.0, k=57):
    g = np.linspace(lo, hi, k)
    return np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)


def _divergence(fn, pts, h):
    out = np.zeros(pts.shape[:-1])
    for c, e in enumerate(np.eye(pts.shape[-1]) * h):
        out += (fn(pts + e)[..., c] - fn(pts - e)[..., c]) / (2.0 * h)
    return out


def _pointwise(fn):
    def mapped(pts):
        flat = pts.reshape(-1, pts.shape[-1])
        return np.stack([fn(p) for p in flat]).reshape(pts.shape)
    return mapped


def check_divfree():
    y = np.array([0.3, -0.4])
    v = np.array([1.1, 0.6])
    gamma = 1.0
    pts = _grid(-3.0, 3.0, 25)
    fn = _pointwise(lambda x: guidance.divfree_apply(kernels.rbf_bundle(x, y, gamma), v))
    div = _divergence(fn, pts, 1e-4)
    ratio = float(np.max(np.abs(div)) / np.max(np.abs(fn(pts))))
    return CheckResult("guidance.divergence_free", ratio <= 1e-6, ratio, 1e-6,
                       "divergence of x -> K(x, y) v relative to field scale")


FROZEN_NEIGHBOR = np.array([0.5, 4.0])
FROZEN_VECTOR = np.array([1.3, -0.7])


def claim1_ratio(t: float, closed_form: bool = False, gamma: float = 1.0, h: float = 1e-3) -> float:
    """max |div(p * Stein(A))| / max |div(p * mu)| on a grid for the noised 5-ring at time t."""
    gm = targets.ring_mixture()
    sched = targets.VPSchedule()
    p = targets.noised_mixture(gm, sched, t)
    y, v = FROZEN_NEIGHBOR, FROZEN_VECTOR
    if closed_form:
        def stein(x):
            b = kernels.rbf_bundle(x, y, gamma)
            return guidance.antisym_apply(b.repulsive_dir, v, p.score(x)) - guidance.divfree_apply(b, v)
        stein_field = _pointwise(stein)
        pts = _grid(-7.0, 7.0, 29)
    else:
        A = guidance.pair_matrix_field(y, v, gamma)
        stein_field = lambda x: guidance.stein_apply_numeric(A, p.score, x)
        pts = _grid()
    beta = float(sched.beta(t))
    flux = lambda x: p.density(x)[..., None] * stein_field(x)
    base = lambda x: p.density(x)[..., None] * (0.5 * beta * x + beta * p.score(x))
    return float(np.max(np.abs(_divergence(flux, pts, h))) / np.max(np.abs(_divergence(base, pts, h))))


def check_claim1_closed_form():
    return check_claim1(closed_form=True)


def check_claim1(closed_form: bool = False):
    ratios = {t: claim1_ratio(t, closed_form) for t in (0.25, 0.5, 0.75)}
    worst = max(ratios.values())
    name = "guidance.fpe_symmetry_closed_form" if closed_form else "guidance.fpe_symmetry"
    how = "closed-form antisym - divfree" if closed_form else "numeric Stein operator"
    return CheckResult(name, worst <= 1e-4, worst, 1e-4,
                       f"div(p * Stein(A)) vs div(p * mu) on a grid, {how}",
                       {f"t={t}": r for t, r in ratios.items()})


def decomposed_guidance(positions, scores, neighbor_vectors, gamma):
    """Per-pair loop over antisym_apply and divfree_apply, for cross-checking the closed form."""
    x = np.asarray(positions, dtype=float)
    n = x.shape[0]
    out = np.zeros_like(x)
    for i in range(n):
        for j in range(n):
            if i != j:
                b = kernels.rbf_bundle(x[i], x[j], gamma)
                out[i] += (guidance.antisym_apply(b.repulsive_dir, neighbor_vectors[j], scores[i])
                           - guidance.divfree_apply(b, neighbor_vectors[j]))
    return out / (n - 1)


def check_closed_form():
    rng = _rng(10)
    worst = 0.0
    for n, d in ((2, 2), (5, 2), (4, 8), (3, 64)):
        gamma = max(1.0, d / 4)
        x = rng.normal(size=(n, d)) * math.sqrt(gamma / d)
        s, v = rng.normal(size=(2, n, d))
        worst = max(worst, _rel(guidance.eddy_rbf_guidance(x, s, v, gamma), decomposed_guidance(x, s, v, gamma)))
    return CheckResult("guidance.closed_form_equivalence", worst <= 1e-12, worst, 1e-12,
                       "vectorised closed form vs per-pair antisym - divfree")


def scaling_ratios(dims=(16, 64, 256, 1024), gamma: float = 1.0, delta_norm: float = 0.5, seed: int = 0):
    """||A s|| / ||K v|| with v = s, ||s|| = sqrt(d) and a fixed ||delta||."""
    rng = np.random.default_rng(seed)
    out = []
    for d in dims:
        s = rng.normal(size=d)
        s *= math.sqrt(d) / np.linalg.norm(s)
        delta = rng.normal(size=d)
        delta *= delta_norm / np.linalg.norm(delta)
        b = kernels.rbf_bundle(delta, np.zeros(d), gamma)
        out.append(float(np.linalg.norm(guidance.antisym_apply(b.repulsive_dir, s, s))
                         / np.linalg.norm(guidance.divfree_apply(b, s))))
    return np.array(out)


def loglog_slope(dims, ratios) -> float:
    return float(np.polyfit(np.log(dims), np.log(ratios), 1)[0])


def check_high_dim():
    dims = (16, 64, 256, 1024)
    r = scaling_ratios(dims)
    steps = r[1:] / r[:-1]
    ok = bool(np.all((steps >= 0.35) & (steps <= 0.7)))
    return CheckResult("guidance.high_dim_dominance", ok, float(np.max(np.abs(steps - 0.5))), 0.15,
                       "||A s|| / ||K v|| falls by 0.35 to 0.7 per 4x dimension",
                       {"ratios": r.tolist(), "successive": steps.tolist(), "slope": loglog_slope(dims, r)})


def estimator_errors(d: int, n: int = 3, epsilon: float = 1e-3, m: int = 2000, seed: int = 0):
    rng = np.random.default_rng(seed)
    gamma = 1.0
    x = rng.normal(size=(n, d)) * math.sqrt(gamma / (4 * d))
    s, v = rng.normal(size=(2, n, d))
    exact = guidance.eddy_rbf_guidance(x, s, v, gamma)
    approx = guidance.eddy_approx_guidance(x, s, v, kernels.RbfKernel(gamma), epsilon, m,
                                           np.random.SeedSequence(seed))
    return np.linalg.norm(approx - exact, axis=1) / np.linalg.norm(exact, axis=1)


def check_estimator():
    errs = np.concatenate([estimator_errors(d, seed=k) for d in (8, 64) for k in range(3)])
    worst = float(errs.max())
    return CheckResult("guidance.estimator_fidelity", worst <= 0.01, worst, 0.01,
                       "black-box estimator vs exact RBF field (epsilon = 1e-3, m = 2000)")


def richardson_ratio(d: int = 8, epsilon: float = 0.2, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    x, y, v = rng.normal(size=(3, d)) * 0.3
    grad = kernels.RbfKernel(1.0).grad
    h = [kernels.fd_hvp(grad, x, y, v, epsilon / 2 ** k) for k in range(3)]
    return float(np.linalg.norm(h[0] - h[1]) / np.linalg.norm(h[1] - h[2]))


def check_richardson():
    ratios = [richardson_ratio(d, seed=d) for d in (2, 8, 64)]
    dev = max(abs(r - 4.0) for r in ratios)
    return CheckResult("kernels.fd_hvp_second_order", dev <= 0.5, dev, 0.5,
                       "Richardson ratio of fd_hvp under step halving is 4", {"ratios": ratios})


# sampler

def check_permutation_equivariance():
    gm = targets.ring_mixture()
    cfg = sampler.RunConfig(guidance.GuidanceConfig(w_g=2.0), method="eddy", steps=30)
    x0, noise = sampler.draw_noise(5, cfg.n, 2, cfg.steps)
    perm = np.array([3, 0, 4, 1, 2])
    a = sampler.simulate(cfg, gm, x0[None], noise[None])[0]
    b = sampler.simulate(cfg, gm, x0[perm][None], noise[:, perm][None])[0]
    err = float(np.max(np.abs(a[perm] - b)))
    return CheckResult("sampler.permutation_equivariance", err <= 1e-10, err, 1e-10,
                       "permuting particles and their noise permutes the output")


def check_gate():
    gm = targets.ring_mixture()
    cfg = sampler.RunConfig(guidance.GuidanceConfig(w_g=2.0, stop_ratio=0.5), method="eddy", steps=10)
    fld = sampler.make_field(cfg, gm)
    x = _rng(11).normal(size=(1, 5, 2))
    xi = _rng(12).normal(size=(1, 5, 2))
    moved = x.copy()
    moved[0, 1] += 0.7
    closed = [sampler.step_update(cfg, fld, x, k, xi)[0, 0].tobytes()
              == sampler.step_update(cfg, fld, moved, k, xi)[0, 0].tobytes() for k in range(5, 10)]
    opened = [sampler.step_update(cfg, fld, x, k, xi)[0, 0].tobytes()
              != sampler.step_update(cfg, fld, moved, k, xi)[0, 0].tobytes() for k in range(0, 5)]
    ok = all(closed) and all(opened)
    return CheckResult("sampler.gate", ok, float(sum(closed) + sum(opened)), 10.0,
                       "past the stop ratio a particle ignores its neighbors")


def marginal_pvalues(w_g: float, n_batches: int = 2000, seed: int = 0, steps: int = 100,
                     gamma: float = 1.0, method: str = "eddy"):
    """p-values of all (metric, test) pairs, guided particle 0 vs an independent i.i.d. arm."""
    gm = targets.ring_mixture()
    iid = sampler.sample_many(sampler.RunConfig(steps=steps), gm, n_batches, base_seed=2 * seed)
    cfg = sampler.RunConfig(guidance.GuidanceConfig(w_g=w_g, gamma=gamma), method=method, steps=steps)
    arm = sampler.sample_many(cfg, gm, n_batches, base_seed=2 * seed + 1)
    ref = stats.nearest_mode_stats(iid.positions[:, 0], gm.centers)
    new = stats.nearest_mode_stats(arm.positions[:, 0], gm.centers)
    out = {}
    for metric, a, b in (("distance", new[0], ref[0]), ("angle", new[1], ref[1])):
        for name, res in stats.run_tests(a, b).items():
            out[(metric, name)] = res.p_value
    return out


def check_marginal():
    worst = 1.0
    details = {}
    for w in (0.5, 1.75, 3.0):
        p = marginal_pvalues(w, seed=7)
        details[f"w_g={w}"] = {f"{m}/{t}": v for (m, t), v in p.items()}
        worst = min(worst, min(p.values()))
    return CheckResult("sampler.marginal_preservation", worst > 0.05 / 18, worst, 0.05 / 18,
                       "one particle per batch vs i.i.d. arm, Bonferroni over 18 tests", details)


# stats

def check_stats_symmetry():
    rng = _rng(13)
    a = rng.normal(size=300)
    b = rng.normal(0.2, 1.1, size=260)
    worst = max(abs(fn(a, b).p_value - fn(b, a).p_value) for fn in stats.TEST_FUNCTIONS.values())
    return CheckResult("stats.swap_symmetry", worst <= 1e-10, worst, 1e-10, "p-values invariant to swapping samples")


def check_stats_monotone():
    rng = _rng(14)
    a = rng.normal(size=400)
    b = rng.normal(size=400)
    p = [stats.ks_two_sample(a, b + off).p_value for off in np.linspace(0.0, 0.5, 11)]
    violations = int(np.sum(np.diff(p) > 0))
    return CheckResult("stats.ks_monotone", violations == 0, float(violations), 0.0,
                       "KS p-value nonincreasing in the shift of b")


def null_rejection_rates(n_pairs: int = 1000, size: int = 200, alpha: float = 0.05, seed: int = 0):
    rng = np.random.default_rng(seed)
    hits = {name: 0 for name in stats.TESTS}
    for _ in range(n_pairs):
        a = rng.normal(size=size)
        b = rng.normal(size=size)
        for name, res in stats.run_tests(a, b).items():
            hits[name] += res.p_value < alpha
    return {name: h / n_pairs for name, h in hits.items()}


def check_calibration():
    rates = null_rejection_rates()
    ok = all(0.03 <= r <= 0.08 for r in rates.values())
    return CheckResult("stats.null_calibration", ok, max(rates.values()), 0.08,
                       "null rejection rate at level 0.05 within [0.03, 0.08]", rates)


def check_permutation_agreement():
    rng = _rng(15)
    a = rng.normal(size=200)
    b = rng.normal(0.25, 1.0, size=200)
    perm = stats.permutation_test(a, b, lambda u, w: stats.welch_t(u, w).statistic, rng=rng)
    asym = stats.welch_t(a, b).p_value
    diff = abs(perm - asym)
    return CheckResult("stats.permutation_agreement", diff <= 0.01, diff, 0.01,
                       "Welch asymptotic p vs 10^4-shuffle permutation p", {"asymptotic": asym, "permutation": perm})


CHECKS = (
    check_kernel_symmetry, check_kernel_gradient, check_kernel_hessian, check_kernel_laplacian,
    check_hutchinson_unbiased, check_richardson,
    check_responsibilities, check_semigroup, check_noised_score,
    check_tweedie, check_weak_accuracy, check_determinism,
    check_antisymmetry, check_divfree, check_claim1, check_claim1_closed_form,
    check_closed_form, check_high_dim, check_estimator,
    check_permutation_equivariance, check_gate, check_marginal,
    check_stats_symmetry, check_stats_monotone, check_calibration, check_permutation_agreement,
)


def run_all(checks=None):
    results = []
    for check in CHECKS if checks is None else checks:
        try:
            results.append(check())
        except Exception as err:  # a crashing check counts as a failure
            results.append(CheckResult(check.__name__, False, math.nan, math.nan,
                                       f"raised {type(err).__name__}: {err}"))
    return results
