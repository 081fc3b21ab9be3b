"""Main CLI entry point for aitfsim."""

import argparse
import os
import signal
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple

from .config import Config, ConfigError
from .core import ProtocolError, format_duration, parse_duration
from .harness import ScenarioConfig, ScenarioError, load_scenario, run_scenario
from .logger import Logger
from .metrics import REPORT_FORMATS, oracle_provisioning
from .scenarios import BUILTIN_SCENARIOS, describe

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VIOLATION = 2


class SimulationManager:
    """Loads settings, runs scenarios and writes their reports."""

    def __init__(self, config_path: Optional[str] = None, log_level: Optional[str] = None):
        """Initialize the manager.

        Args:
            config_path: Optional path to the settings file
            log_level: Optional log level overriding the settings
        """
        self.config = Config(config_path)
        if log_level:
            self.config.set('logging.level', log_level)
        self.logger = Logger()
        self.logger.configure(self.config)

    def load(self, scenario: str) -> ScenarioConfig:
        return load_scenario(scenario, settings=self.config)

    def run(self, scenario: ScenarioConfig, seed: Optional[int] = None, duration: Optional[int] = None,
            fmt: str = "text", trace: bool = False, trace_packets: bool = False,
            audit: Optional[bool] = None) -> Tuple[str, List[str], bool]:
        """Run one seed; returns the rendered report, the trace and whether it is clean."""
        report = run_scenario(scenario, seed=seed, trace=trace, trace_packets=trace_packets, audit=audit,
                              duration=duration, settings=self.config)
        return report.render(fmt), report.trace, report.ok

    def sweep(self, source: str, seeds: List[int], jobs: int, **kwargs) -> List[Tuple[int, str, List[str], bool]]:
        """Run many seeds in worker processes; results come back in seed order."""
        if jobs <= 1 or len(seeds) == 1:
            scenario = self.load(source)
            return [(seed, *self.run(scenario, seed=seed, **kwargs)) for seed in seeds]
        self.load(source)  # fail fast on an invalid scenario
        tasks = [(self.config.config_path, self.config.log_level, source, seed, kwargs) for seed in seeds]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_seed, tasks))


def _run_seed(task) -> Tuple[int, str, List[str], bool]:
    config_path, log_level, source, seed, kwargs = task
    manager = SimulationManager(config_path, log_level)
    return (seed, *manager.run(manager.load(source), seed=seed, **kwargs))


def parse_seed_range(text: str) -> List[int]:
    """``"3"`` or ``"1..5"`` (inclusive)."""
    try:
        if ".." in text:
            first, last = (int(part) for part in text.split("..", 1))
        else:
            first = last = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed range {text!r} (expected a..b)") from None
    if last < first:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(first, last + 1))


def per_seed_path(path: str, seed: int) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.seed{seed}{ext}"


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def cmd_run(manager: SimulationManager, args) -> int:
    fmt = args.format or manager.config.report_format
    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"report.format must be one of {', '.join(REPORT_FORMATS)}, got {fmt!r}")
    duration = parse_duration(args.duration) if args.duration is not None else None
    options = dict(duration=duration, fmt=fmt, trace=args.trace is not None or args.trace_packets,
                   trace_packets=args.trace_packets, audit=True if args.audit else None)
    seeds = args.seeds or ([args.seed] if args.seed is not None else [None])
    if seeds == [None]:
        scenario = manager.load(args.scenario)
        results = [(scenario.seed, *manager.run(scenario, **options))]
    else:
        results = manager.sweep(args.scenario, seeds, args.jobs, **options)

    clean = True
    for seed, text, trace, ok in results:
        clean = clean and ok
        output = args.output
        if output and output != "-" and len(results) > 1:
            output = per_seed_path(output, seed)
        _write(output, text)
        if trace:
            trace_path = args.trace if args.trace not in (None, "-") else None
            if trace_path and len(results) > 1:
                trace_path = per_seed_path(trace_path, seed)
            body = "\n".join(trace) + "\n"
            if trace_path:
                _write(trace_path, body)
            else:
                sys.stderr.write(body)
        if not ok:
            manager.logger.error(f"{args.scenario} seed={seed}: runtime invariant violations, see report")
    return EXIT_OK if clean else EXIT_VIOLATION


def cmd_formulas(args) -> int:
    try:
        timeout = parse_duration(args.T)
        temp_timeout = parse_duration(args.T_tmp)
        result = oracle_provisioning(args.r1, args.r2, timeout, temp_timeout)
    except (ProtocolError, ValueError, ArithmeticError) as e:
        raise ConfigError(f"formulas: {e}") from None
    rows = [
        ("R_1", f"{args.r1}/s"), ("R_2", f"{args.r2}/s"),
        ("T", format_duration(timeout)), ("T_tmp", format_duration(temp_timeout)),
        ("N_v = R_1*T", result.N_v), ("n_v = R_1*T_tmp", result.n_v),
        ("m_v = R_1*T", result.m_v), ("n_a = R_2*T", result.n_a),
    ]
    width = max(len(name) for name, _ in rows)
    sys.stdout.write("".join(f"{name:<{width}}  {value}\n" for name, value in rows))
    return EXIT_OK


def cmd_list_scenarios() -> int:
    sys.stdout.write("\n".join(describe()) + "\n")
    return EXIT_OK


def _positive_number(text: str) -> str:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return text


def create_parser() -> argparse.ArgumentParser:
    """Create command line argument parser.

    Returns:
        Configured argument parser
    """
    parser = argparse.ArgumentParser(
        prog='aitfsim',
        description='aitfsim - AITF filter-propagation simulator',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  aitfsim list-scenarios
  aitfsim run --scenario fig1-cooperative --seed 7 --format json
  aitfsim run --scenario my-topology.yaml --seeds 1..8 --jobs 4 --output out/report.json
  aitfsim formulas --r1 100 --r2 1 --T 60s --T-tmp 600ms
        """
    )

    parser.add_argument(
        '--config', '-c',
        help='Path to settings file'
    )

    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Override log level'
    )

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    run_parser = subparsers.add_parser('run', help='Run a scenario and write its metrics report')
    run_parser.add_argument(
        '--scenario', '-s', required=True,
        help=f'Scenario file (YAML/JSON) or built-in name ({", ".join(BUILTIN_SCENARIOS)})'
    )
    seed_group = run_parser.add_mutually_exclusive_group()
    seed_group.add_argument(
        '--seed', type=int,
        help='Random seed (default: from scenario)'
    )
    seed_group.add_argument(
        '--seeds', type=parse_seed_range,
        help='Seed sweep a..b; one report per seed'
    )
    run_parser.add_argument(
        '--jobs', '-j', type=int, default=1,
        help='Worker processes for a seed sweep (default: 1)'
    )
    run_parser.add_argument(
        '--duration',
        help='Override the run duration (e.g. 600ms, 60s, 10min)'
    )
    run_parser.add_argument(
        '--output', '-o',
        help='Report path (default: stdout); sweeps insert .seedN before the extension'
    )
    run_parser.add_argument(
        '--format', '-f', choices=REPORT_FORMATS,
        help='Report format (default: from settings, text)'
    )
    run_parser.add_argument(
        '--trace', nargs='?', const='-',
        help='Write the protocol event trace to a file (default: stderr)'
    )
    run_parser.add_argument(
        '--trace-packets', action='store_true',
        help='Include per-packet lines in the trace'
    )
    run_parser.add_argument(
        '--audit', action='store_true',
        help='Re-check every forwarded packet against filter tables and recorded routes'
    )

    formulas_parser = subparsers.add_parser('formulas', help='Evaluate the provisioning formulas')
    formulas_parser.add_argument('--r1', type=_positive_number, default='100',
                                 help='Client-to-provider request rate R_1 per second (default: 100)')
    formulas_parser.add_argument('--r2', type=_positive_number, default='1',
                                 help='Provider-to-client request rate R_2 per second (default: 1)')
    formulas_parser.add_argument('--T', dest='T', default='60s',
                                 help='Filter lifetime T (default: 60s)')
    formulas_parser.add_argument('--T-tmp', dest='T_tmp', default='600ms',
                                 help='Temporary filter lifetime T_tmp (default: 600ms)')

    subparsers.add_parser('list-scenarios', help='List built-in scenarios')

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    def signal_handler(sig, frame):
        sys.stderr.write("\nInterrupted\n")
        sys.exit(130)

    signal.signal(signal.SIGINT, signal_handler)

    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == 'list-scenarios':
            return cmd_list_scenarios()
        if args.command == 'formulas':
            return cmd_formulas(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        manager = SimulationManager(args.config, args.log_level)
        return cmd_run(manager, args)
    except ScenarioError as e:
        sys.stderr.write(f"Error: {e}\n")
        return EXIT_CONFIG
    except (ConfigError, ProtocolError) as e:
        sys.stderr.write(f"Error: {e}\n")
        return EXIT_CONFIG
    except OSError as e:
        sys.stderr.write(f"Error: {e.filename or ''}: {e.strerror or e}\n")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
