"""Ring-mixture sweep over guidance weights, with report and CSV writers.

Each arm (i.i.d., EDDY at one weight, PG at one weight) samples its own
batches from a base seed derived from the sweep seed and the arm's position
in its list, so arms are statistically independent and any arm can be re-run
alone from the echoed config.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import REPORT_SCHEMA_VERSION, __version__
from .guidance import GuidanceConfig
from .sampler import RunConfig, sample_many
from .stats import TESTS, batch_coverage, expected_iid_coverage, nearest_mode_stats, run_tests
from .targets import ring_mixture

METRICS = ("distance", "angle")
METHOD_CODES = {"iid": 0, "eddy": 1, "pg": 2}


class ConfigError(ValueError):
    """Unreadable, malformed or invalid sweep configuration."""


@dataclass(frozen=True)
class SweepConfig:
    n: int = 5
    steps: int = 100
    dynamics_mode: str = "vp_ddpm"
    beta_min: float = 0.1
    beta_max: float = 20.0
    modes: int = 5
    radius: float = 5.0
    variance: float = 1.0
    gamma: float = 1.0
    stop_ratio: float = 1.0
    neighbor_mode: str = "drift"
    estimator: str = "exact_rbf"
    epsilon: float = 1e-3
    probes: int = 25
    wg_grid: tuple = (0.0, 0.5, 1.75, 3.0)
    pg_weights: tuple = (0.5, 1.0, 1.75, 3.0, 10.0)
    match_wg: float = 1.75
    n_batches: int = 2000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "wg_grid", tuple(float(w) for w in self.wg_grid))
        object.__setattr__(self, "pg_weights", tuple(float(w) for w in self.pg_weights))
        if not self.wg_grid or any(w < 0 for w in self.wg_grid + self.pg_weights):
            raise ConfigError("weights must be nonnegative and wg_grid nonempty")
        if int(self.n_batches) != self.n_batches or self.n_batches < 2:
            raise ConfigError("n_batches must be an integer >= 2")
        if int(self.modes) != self.modes or self.modes < 1:
            raise ConfigError("modes must be a positive integer")
        try:
            self.run_config("eddy", 1.0)
            ring_mixture(self.modes, self.radius, self.variance)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err

    def to_dict(self) -> dict:
        out = asdict(self)
        out["wg_grid"] = list(self.wg_grid)
        out["pg_weights"] = list(self.pg_weights)
        return out

    def target(self):
        return ring_mixture(self.modes, self.radius, self.variance)

    def run_config(self, method: str, w_g: float) -> RunConfig:
        g = GuidanceConfig(w_g=w_g, gamma=self.gamma, stop_ratio=self.stop_ratio,
                           neighbor_mode=self.neighbor_mode, estimator=self.estimator,
                           epsilon=self.epsilon, m=self.probes)
        return RunConfig(g, method=method, steps=self.steps, n=self.n, dynamics_mode=self.dynamics_mode,
                         seed=self.seed, beta_min=self.beta_min, beta_max=self.beta_max)

    def arms(self):
        """(method, w_g, arm seed) for every arm; w_g = 0 is the shared i.i.d. arm."""
        out = [("iid", 0.0, arm_seed(self.seed, "iid", 0))]
        out += [("eddy", w, arm_seed(self.seed, "eddy", k)) for k, w in enumerate(self.wg_grid) if w > 0]
        out += [("pg", w, arm_seed(self.seed, "pg", k)) for k, w in enumerate(self.pg_weights) if w > 0]
        return out


def arm_seed(seed: int, method: str, index: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(METHOD_CODES[method], index))
    return int(ss.generate_state(1, np.uint64)[0])


def load_config(path) -> SweepConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror or err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return SweepConfig.from_dict(data)


@dataclass
class ArmResult:
    method: str
    w_g: float
    seed: int
    positions: np.ndarray
    coverage: np.ndarray
    distance: np.ndarray
    angle: np.ndarray
    seconds: float

    @property
    def mean_coverage(self) -> float:
        return float(self.coverage.mean())

    @property
    def std_error(self) -> float:
        return float(self.coverage.std(ddof=1) / math.sqrt(self.coverage.size))


def run_arm(cfg: SweepConfig, method: str, w_g: float, seed: int, threads: int = 1) -> ArmResult:
    target = cfg.target()
    start = time.perf_counter()
    samples = sample_many(cfg.run_config(method, w_g), target, cfg.n_batches, base_seed=seed, threads=threads)
    seconds = time.perf_counter() - start
    dist, angle = nearest_mode_stats(samples.positions[:, 0], target.centers)
    return ArmResult(method, w_g, seed, samples.positions, batch_coverage(samples.positions, target.centers),
                     dist, angle, seconds)


def run_sweep(cfg: SweepConfig, threads: int = 1, log=None) -> list:
    results = []
    for method, w_g, seed in cfg.arms():
        res = run_arm(cfg, method, w_g, seed, threads)
        if log is not None:
            log(f"{method:4s} w_g={w_g:<6g} coverage {res.mean_coverage:.4f} +- {res.std_error:.4f} "
                f"({res.seconds:.1f}s)")
        results.append(res)
    return results


def marginal_test_table(arms) -> list:
    """Every guided arm's particle-0 metrics against the i.i.d. arm."""
    ref = arms[0]
    rows = []
    for arm in arms[1:]:
        for metric in METRICS:
            for name, res in run_tests(getattr(arm, metric), getattr(ref, metric)).items():
                rows.append({"method": arm.method, "w_g": arm.w_g, "metric": metric, **res.as_dict()})
    return rows


def matched_pg_weight(arms, eddy_w_g: float):
    """PG weight whose mean coverage is closest to that of EDDY at eddy_w_g (None if either is missing)."""
    eddy = [a for a in arms if a.method == "eddy" and a.w_g == eddy_w_g]
    pg = [a for a in arms if a.method == "pg"]
    if not eddy or not pg:
        return None
    target = eddy[0].mean_coverage
    return min(pg, key=lambda a: (abs(a.mean_coverage - target), a.w_g)).w_g


def coverage_curve(arms) -> dict:
    iid = arms[0]
    curve = {}
    for method in ("eddy", "pg"):
        pts = [iid] + [a for a in arms if a.method == method]
        curve[method] = [{"w_g": a.w_g, "mean_coverage": a.mean_coverage, "std_error": a.std_error,
                          "n_batches": int(a.coverage.size)} for a in pts]
    return curve


def build_report(cfg: SweepConfig, arms, threads: int, total_seconds: float) -> dict:
    target = cfg.target()
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "artifact_version": __version__,
        "config": cfg.to_dict(),
        "defaults": {"particle_pooled": 0, "tests": list(TESTS), "metrics": list(METRICS),
                     "reference_arm": "iid"},
        "arms": [{"method": a.method, "w_g": a.w_g, "seed": a.seed} for a in arms],
        "iid_expected_coverage": expected_iid_coverage(target.n_components, cfg.n),
        "coverage_curve": coverage_curve(arms),
        "tests": marginal_test_table(arms),
        "pg_matched_weight": {"eddy_w_g": cfg.match_wg, "pg_w_g": matched_pg_weight(arms, cfg.match_wg)},
        "timing": {"total_seconds": total_seconds, "threads": threads,
                   "arm_seconds": [a.seconds for a in arms]},
    }


def fmt(x) -> str:
    return format(float(x), ".17g")


def to_json(obj, indent: int = 2, level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits (NaN and inf as null)."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def write_json(path, obj):
    Path(path).write_text(to_json(obj) + "\n", encoding="utf-8")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_sweep_outputs(out_dir, cfg: SweepConfig, arms, threads: int, total_seconds: float) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(cfg, arms, threads, total_seconds)
    write_json(out / "report.json", report)
    write_csv(out / "coverage_vs_wg.csv",
              ["method", "w_g", "mean_coverage_modes", "std_error_modes", "n_batches"],
              [(m, p["w_g"], p["mean_coverage"], p["std_error"], p["n_batches"])
               for m, pts in report["coverage_curve"].items() for p in pts])
    for metric, unit in (("distance", "distance"), ("angle", "angle_rad")):
        write_csv(out / f"cdf_{metric}.csv", ["method", "w_g", "rank", unit, "ecdf"],
                  [(a.method, a.w_g, r + 1, float(v), (r + 1) / a.coverage.size)
                   for a in arms for r, v in enumerate(np.sort(getattr(a, metric)))])
    write_csv(out / "samples.csv", ["method", "w_g", "batch", "particle", "x", "y"],
              [(a.method, a.w_g, b, i, float(a.positions[b, i, 0]), float(a.positions[b, i, 1]))
               for a in arms for b in range(a.positions.shape[0]) for i in range(a.positions.shape[1])])
    return report


def default_threads() -> int:
    return os.cpu_count() or 1
