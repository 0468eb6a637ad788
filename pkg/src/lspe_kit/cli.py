"""Command-line entry point: ``lspe-kit <mode> --config PATH``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .analysis import format_moment_report
from .errors import InputError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lspe-kit", description="Linear spectral estimators for phase retrieval.")
    p.add_argument("mode", choices=harness.MODES)
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--output", help="output path (overrides the config)")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads")
    p.add_argument("--average-matrices", type=int, dest="average_matrices",
                   help="average each point over K matrix instances")
    return p


def _emit(text: str, output: str | None, cfg) -> None:
    if output:
        cfg.resolve(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run(args) -> int:
    cfg = harness.load_config(args.config, args.mode)
    output = args.output
    if output is not None:
        # command-line paths are relative to the working directory, not the config
        output = str(Path(output).resolve())
    cfg = harness.with_overrides(cfg, output=output, seed=args.seed, threads=args.threads,
                                 average_matrices=args.average_matrices)
    if args.mode == "sweep":
        _emit(harness.format_csv(harness.run_sweep(cfg)), cfg.output, cfg)
    elif args.mode == "validate":
        results = harness.run_validate_detailed(cfg)
        _emit(harness.format_csv([r.row for r in results]), cfg.output, cfg)
        sys.stderr.write(harness.validation_summary(results, cfg.eig_tol))
    elif args.mode == "estimate":
        res = harness.run_estimate(cfg)
        if not cfg.output:
            sys.stdout.write(" ".join(repr(complex(v)) if v.imag else repr(float(v.real))
                                      for v in res.x_hat.astype(complex)) + "\n")
        if not res.converged:
            sys.stderr.write("warning: power iteration did not converge\n")
    else:
        report = harness.run_moments(cfg)
        if not cfg.output:
            sys.stdout.write(format_moment_report(report))
        if not report.passed:
            sys.stderr.write(f"{len(report.failures)} moment checks failed\n")
            return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (InputError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
