"""Command-line front end: ``gmm-sweep``, ``verify`` and ``scaling``.

Exit codes: 0 success, 1 failed verification, 2 configuration or argument
error, 3 numerical failure during integration.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import REPORT_SCHEMA_VERSION, __version__, checks
from .dynamics import IntegrationError
from .experiments import (ConfigError, SweepConfig, default_threads, load_config, run_sweep, write_csv,
                          write_json, write_sweep_outputs)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SCALING_DIMS = (16, 64, 256, 1024)
SCALING_GAMMAS = (1.0, 2.0)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eddy", description="Marginal-preserving particle guidance experiments.")
    parser.add_argument("--version", action="version",
                        version=f"eddy {__version__} (report schema {REPORT_SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep = sub.add_parser("gmm-sweep", help="coverage and marginal tests on the ring mixture")
    sweep.add_argument("--config", help="JSON config; omitted keys take their defaults")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--threads", type=_positive, default=default_threads())
    sweep.add_argument("--seed", type=_u64, help="override the config seed")

    verify = sub.add_parser("verify", help="run every invariant check")
    verify.add_argument("--out", required=True)

    scaling = sub.add_parser("scaling", help="dimension scaling of the two guidance terms")
    scaling.add_argument("--out", required=True)
    return parser


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def cmd_gmm_sweep(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else SweepConfig()
        if args.seed is not None:
            cfg = SweepConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    except ConfigError as err:
        _log(f"config error: {err}")
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        arms = run_sweep(cfg, threads=args.threads, log=_log)
    except IntegrationError as err:
        _log(f"numerical failure: {err}")
        return EXIT_NUMERIC
    report = write_sweep_outputs(args.out, cfg, arms, args.threads, time.perf_counter() - start)
    iid = report["coverage_curve"]["eddy"][0]
    _log(f"i.i.d. coverage {iid['mean_coverage']:.4f} (expected {report['iid_expected_coverage']:.4f}); "
         f"outputs in {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = checks.run_all()
    failed = [r for r in results if not r.passed]
    write_json(out / "verify.json", {"schema_version": REPORT_SCHEMA_VERSION, "artifact_version": __version__,
                                     "passed": not failed, "checks": [r.as_dict() for r in results]})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.id}: {r.value:.3g} (threshold {r.threshold:.3g})")
    if failed:
        _log("failed checks: " + ", ".join(r.id for r in failed))
        return EXIT_FAILED
    return EXIT_OK


def cmd_scaling(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for gamma in SCALING_GAMMAS:
        ratios = checks.scaling_ratios(SCALING_DIMS, gamma=gamma)
        slope = checks.loglog_slope(SCALING_DIMS, ratios)
        rows += [(gamma, d, float(r), slope) for d, r in zip(SCALING_DIMS, ratios)]
        print(f"gamma={gamma:g}: fitted log-log slope {slope:.4f}")
    write_csv(out / "scaling.csv", ["gamma", "dimension", "norm_ratio_As_over_Kv", "fitted_loglog_slope"], rows)
    return EXIT_OK


COMMANDS = {"gmm-sweep": cmd_gmm_sweep, "verify": cmd_verify, "scaling": cmd_scaling}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
