"""Acceptance criteria, each checked at its stated tolerance.

Every test records a one-line verdict through ``acceptance_log``; the lines
are repeated together in the pytest terminal summary.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from eddy import checks
from eddy.cli import main
from eddy.experiments import SweepConfig, arm_seed, run_arm
from eddy.stats import TESTS, expected_iid_coverage, run_tests

GRID = (0.5, 1.75, 3.0)
REPS = 20
METRICS = ("distance", "angle")


@pytest.fixture(scope="module")
def default_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep_t1")
    start = time.perf_counter()
    assert main(["gmm-sweep", "--out", str(out), "--threads", "1"]) == 0
    return out, json.loads((out / "report.json").read_text()), time.perf_counter() - start


@pytest.fixture(scope="module")
def iid_reps():
    """The i.i.d. reference arm for each of the seeded repetitions."""
    return [run_arm(SweepConfig(seed=r), "iid", 0.0, arm_seed(r, "iid", 0)) for r in range(REPS)]


def six_pvalues(arm, ref):
    return {(m, t): r.p_value for m in METRICS for t, r in run_tests(getattr(arm, m), getattr(ref, m)).items()}


def test_criterion_1_iid_baseline(default_sweep, acceptance_log):
    _, report, _ = default_sweep
    iid = report["coverage_curve"]["eddy"][0]
    target = expected_iid_coverage(5, 5)
    seconds = report["timing"]["arm_seconds"][0]
    gap = abs(iid["mean_coverage"] - target) / iid["std_error"]
    ok = iid["n_batches"] >= 2000 and gap <= 2.0 and seconds <= 120
    acceptance_log(1, "i.i.d. coverage within 2 SE of 3.3616", ok,
                   f"mean {iid['mean_coverage']:.4f} SE {iid['std_error']:.4f} ({gap:.2f} SE), "
                   f"{iid['n_batches']} batches in {seconds:.1f}s")
    assert ok


def test_criterion_2_diversity_monotone(default_sweep, acceptance_log):
    _, report, _ = default_sweep
    curve = {p["w_g"]: p for p in report["coverage_curve"]["eddy"]}
    pts = [curve[w] for w in (0.0,) + GRID]

    def diff_se(a, b):
        return math.hypot(a["std_error"], b["std_error"])

    base, mid = curve[0.0], curve[1.75]
    gain = (mid["mean_coverage"] - base["mean_coverage"]) / diff_se(mid, base)
    monotone = all(b["mean_coverage"] >= a["mean_coverage"] - diff_se(a, b) for a, b in zip(pts, pts[1:]))
    ok = gain >= 3.0 and monotone
    acceptance_log(2, "EDDY coverage gain at w_g=1.75 >= 3 SE, curve nondecreasing within 1 SE", ok,
                   "coverage " + ", ".join(f"{p['w_g']:g}:{p['mean_coverage']:.4f}" for p in pts)
                   + f"; gain at 1.75 = {gain:.2f} SE; monotone={monotone}")
    assert ok


def test_criterion_3_marginal_preservation(iid_reps, acceptance_log):
    start = time.perf_counter()
    passes = {(w, m, t): 0 for w in GRID for m in METRICS for t in TESTS}
    for r in range(REPS):
        cfg = SweepConfig(seed=r)
        for k, w in enumerate(cfg.wg_grid):
            if w == 0:
                continue
            arm = run_arm(cfg, "eddy", w, arm_seed(r, "eddy", k))
            for (m, t), p in six_pvalues(arm, iid_reps[r]).items():
                passes[(w, m, t)] += p > 0.05
    seconds = time.perf_counter() - start
    worst = min(passes.values())
    ok = worst >= 0.8 * REPS and seconds <= 600
    acceptance_log(3, "EDDY marginals: every (w_g, metric, test) has p > 0.05 in >= 80% of 20 reps", ok,
                   f"worst combination {worst}/{REPS}; " + ", ".join(
                       f"w{w:g}:{min(v for k, v in passes.items() if k[0] == w)}" for w in GRID)
                   + f"; {seconds:.0f}s")
    assert ok


def test_criterion_4_pg_contrast(default_sweep, iid_reps, acceptance_log):
    _, report, _ = default_sweep
    w_pg = report["pg_matched_weight"]["pg_w_g"]
    index = list(report["config"]["pg_weights"]).index(w_pg)
    fails = 0
    for r in range(REPS):
        arm = run_arm(SweepConfig(seed=r), "pg", w_pg, arm_seed(r, "pg", index))
        fails += min(six_pvalues(arm, iid_reps[r]).values()) < 0.05
    ok = fails >= 0.8 * REPS
    eddy_cov = {p["w_g"]: p["mean_coverage"] for p in report["coverage_curve"]["eddy"]}[1.75]
    pg_cov = {p["w_g"]: p["mean_coverage"] for p in report["coverage_curve"]["pg"]}[w_pg]
    acceptance_log(4, "PG at coverage-matched weight fails a marginal test in >= 80% of reps", ok,
                   f"matched PG w_g={w_pg:g} (PG {pg_cov:.4f} vs EDDY@1.75 {eddy_cov:.4f}); "
                   f"failing reps {fails}/{REPS}")
    assert ok


def test_criterion_5_estimator_fidelity(acceptance_log):
    errs = {d: np.concatenate([checks.estimator_errors(d, seed=s) for s in range(5)]) for d in (8, 64)}
    ratios = [checks.richardson_ratio(d, seed=d) for d in (2, 8, 64)]
    worst = max(e.max() for e in errs.values())
    ok = worst <= 0.01 and all(abs(r - 4.0) <= 0.5 for r in ratios)
    acceptance_log(5, "black-box estimator within 1% per particle, fd_hvp Richardson ratio 4 +- 0.5", ok,
                   f"max rel err d=8 {errs[8].max():.2e}, d=64 {errs[64].max():.2e}; "
                   f"ratios {', '.join(f'{r:.3f}' for r in ratios)}")
    assert ok


def test_criterion_6_fpe_quadrature(acceptance_log):
    ratios = {(t, cf): checks.claim1_ratio(t, closed_form=cf) for t in (0.25, 0.5, 0.75) for cf in (False, True)}
    worst = max(ratios.values())
    ok = worst <= 1e-4
    acceptance_log(6, "div(p * Stein(A)) <= 1e-4 of div(p * mu) at t = 0.25, 0.5, 0.75", ok,
                   ", ".join(f"t={t}{' closed' if cf else ''}:{v:.1e}" for (t, cf), v in ratios.items()))
    assert ok


def test_criterion_7_dimension_scaling(tmp_path, acceptance_log):
    assert main(["scaling", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "scaling.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if float(r["gamma"]) == 1.0]
    slope = float(rows[0]["fitted_loglog_slope"])
    ok = -0.65 <= slope <= -0.35
    acceptance_log(7, "log-log slope of ||A s|| / ||K v|| in [-0.65, -0.35]", ok,
                   f"slope {slope:.4f} over d = {', '.join(r['dimension'] for r in rows)}")
    assert ok


def test_criterion_8_null_calibration(acceptance_log):
    rates = checks.null_rejection_rates(n_pairs=1000, size=2000, seed=8)
    ok = all(0.03 <= r <= 0.08 for r in rates.values())
    acceptance_log(8, "null rejection rate of each test in [3%, 8%] over 1000 pairs", ok,
                   ", ".join(f"{k} {v:.3f}" for k, v in rates.items()))
    assert ok


def test_criterion_9_determinism(default_sweep, tmp_path, acceptance_log):
    first, _, _ = default_sweep
    second = tmp_path / "sweep_t4"
    assert main(["gmm-sweep", "--out", str(second), "--threads", "4"]) == 0
    same = {}
    for name in ("coverage_vs_wg.csv", "cdf_distance.csv", "cdf_angle.csv", "samples.csv"):
        same[name] = (first / name).read_bytes() == (second / name).read_bytes()
    strip = [json.loads((d / "report.json").read_text()) for d in (first, second)]
    for r in strip:
        r.pop("timing")
    same["report.json"] = strip[0] == strip[1]
    for cmd, fname in (("scaling", "scaling.csv"), ("verify", "verify.json")):
        outs = [tmp_path / f"{cmd}{k}" for k in range(2)]
        for o in outs:
            main([cmd, "--out", str(o)])
        same[fname] = (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    ok = all(same.values())
    acceptance_log(9, "identical config and seed give byte-identical outputs for --threads 1 and 4", ok,
                   ", ".join(f"{k}={'same' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
