#!/usr/bin/env python3
"""
Market Causality Portal - command line entry point.

Runs the analysis pipeline from a YAML run configuration, validates
configurations, and runs the synthetic benchmark suites.
"""

import argparse
import logging
import sys

from config import Config
from services import pipeline, synthbench
from services.errors import CausalPortalError, ConfigError, PipelineStageError


def configure_logging(verbose=False):
    """Attach a stream handler in the service log format."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(Config.LOG_FORMAT))
    root = logging.getLogger()
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL))


def cmd_run(args):
    config = pipeline.load_config(args.config)
    report = pipeline.run(config)
    print(f"✅ Run finished: {len(report.artifacts)} artifacts in {report.output_dir}")
    for artifact in report.artifacts:
        print(f"   • {artifact}")
    return 0


def cmd_validate(args):
    diagnostics = pipeline.validate(args.config)
    if not diagnostics:
        print(f"✅ {args.config} is valid")
        return 0
    print(f"❌ {args.config}: {len(diagnostics)} problem(s)")
    for diagnostic in diagnostics:
        print(f"   • {diagnostic}")
    return 1


def cmd_bench(args):
    result = pipeline.run_bench(args.suite, args.seeds, T=args.T, algorithms=args.algorithms,
                                output_dir=args.output_dir, workers=args.workers, seed=args.seed)
    print(f"📊 Benchmark '{args.suite}' ({args.seeds} seeds, T={args.T})")
    for row in result.summary:
        metrics = ', '.join(f"{key}={value:.3f}" for key, value in sorted(row.items())
                            if isinstance(value, float))
        print(f"   • {row['truth']} / {row['algorithm']}: {metrics}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        description='Time-series causal discovery on market data (VAR-LiNGAM, LPCMCI)',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py validate --config sample/sample_config.yaml
  python cli.py run --config sample/sample_config.yaml
  python cli.py bench --suite nongaussian --seeds 5 --T 1000
        """
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='Log at DEBUG level')
    sub = parser.add_subparsers(dest='command', required=True)

    run_parser = sub.add_parser('run', help='Run the full pipeline for a configuration')
    run_parser.add_argument('--config', required=True, help='Path to the YAML run configuration')
    run_parser.set_defaults(handler=cmd_run)

    validate_parser = sub.add_parser('validate', help='Check a configuration without running it')
    validate_parser.add_argument('--config', required=True, help='Path to the YAML run configuration')
    validate_parser.set_defaults(handler=cmd_validate)

    bench_parser = sub.add_parser('bench', help='Run a synthetic benchmark suite')
    bench_parser.add_argument('--suite', required=True, choices=sorted(synthbench.SUITES))
    bench_parser.add_argument('--seeds', required=True, type=int, help='Simulated datasets per truth')
    bench_parser.add_argument('--T', type=int, default=2000, help='Observations per dataset')
    bench_parser.add_argument('--algorithms', nargs='+', choices=synthbench.ALGORITHMS,
                              default=list(synthbench.ALGORITHMS))
    bench_parser.add_argument('--output-dir', default=Config.OUTPUT_DIR)
    bench_parser.add_argument('--workers', type=int, default=Config.WORKERS)
    bench_parser.add_argument('--seed', type=int, default=0, help='Seed for the suite truths')
    bench_parser.set_defaults(handler=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        for diagnostic in e.diagnostics:
            print(f"   • {diagnostic}", file=sys.stderr)
        return 1
    except PipelineStageError as e:
        print(f"❌ Error: stage '{e.stage}' failed: {e.cause}", file=sys.stderr)
        return 1
    except CausalPortalError as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
