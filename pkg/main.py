import argparse
import json
import logging
import os
import re
import sys
from dataclasses import replace

import numpy as np

import logger_setup
from errors import DiffPassError
from settings import load_settings, worker_count
from analysis.conditions import (EQUALITY, SampleGrid, combine_verdicts, contraction_checker, contraction_rate,
                                 killing_checker, natural_checker, output_checker,
                                 qpq_checker, rigid_body_checker, scan_region, ConditionError)
from analysis.storage import (NotAMetric, StorageError, constant_storage, make_qpq_storage, natural_storage,
                              qpq_output, storage_bounds)
from demos.figures import FIGURES, UnknownFigure, run_figure, save_figure
from demos.registry import REGISTRY, UnknownSystem, get_example, list_examples
from reports.result_manager import ResultManager
from simulation.integrator import (Diverged, SimulationError, dissipation_residual, integrate_prolonged,
                                   pairwise_distances)
from simulation.signals import SignalParseError, parse_signals

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_BOUNDARY = 2
EXIT_USAGE = 64
EXIT_SIGNAL = 65
EXIT_DIVERGED = 70

VERDICT_EXIT = {'pass': EXIT_PASS, 'fail': EXIT_FAIL, 'boundary': EXIT_BOUNDARY}
STORAGE_CHOICES = ('bundled', 'natural', 'qpq', 'constant')
NEGATIVE_VALUE = re.compile(r'^-\.?\d')


class UsageError(DiffPassError):
    """Raised for invalid command-line usage."""
    pass


class CommandLineParser(argparse.ArgumentParser):
    """Reports usage problems as UsageError so they map to exit code 64.

    Values such as grids (-3.13:3.13:1001) or vectors (-1,2) start with a minus sign;
    any argument of the form -<digit> or -.<digit> is read as a value, never as a flag.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = NEGATIVE_VALUE

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_vector(text):
    try:
        return np.array([float(v) for v in text.split(',')])
    except ValueError as e:
        raise UsageError(f"Invalid vector '{text}': {e}") from e


def parse_matrix(text):
    """'1' or '1,0;0,2' (rows separated by ';')."""
    try:
        rows = [[float(v) for v in row.split(',')] for row in text.split(';')]
        return np.array(rows)
    except ValueError as e:
        raise UsageError(f"Invalid matrix '{text}': {e}") from e


def default_grid_count(n):
    """Per-axis sample count for a default scan of roughly ten thousand points."""
    return min(1001, max(5, int(10000 ** (1.0 / n))))


def resolve_storage(example, choice, P=None):
    """Returns (storage, affine system with the matching output, storage label)."""
    if choice in ('bundled', example.storage.name):
        return example.storage, example.system, example.storage.name
    if choice == 'constant':
        P = np.eye(example.system.n) if P is None else P
        return constant_storage(P), example.system, 'constant'
    if choice not in STORAGE_CHOICES:
        raise UsageError(f"Unknown storage '{choice}' for {example.name}; "
                         f"choose from {', '.join(STORAGE_CHOICES + (example.storage.name,))}")
    if example.gradient is None:
        raise UsageError(f"Storage '{choice}' needs a gradient-form system; {example.name} has none")
    gs = example.gradient
    if choice == 'natural':
        return natural_storage(gs), example.system, 'natural'
    P = (example.P if example.P is not None else np.eye(gs.n)) if P is None else P
    return make_qpq_storage(gs, P), qpq_output(gs, P), 'qpq'


def _report_entry(report, storage=None, system_points=None):
    entry = report.to_dict()
    if storage is not None and report.condition_id == 'metric-contraction':
        bounds = storage_bounds(storage, system_points)
        entry['storage_bounds'] = {'c1': bounds.c1, 'c2': bounds.c2}
        entry['contraction_rate'] = contraction_rate(report, bounds)
    return entry


def cmd_check(args, config):
    example = get_example(args.system)
    P = parse_matrix(args.P) if args.P else None
    n = example.system.n
    if args.grid:
        grid_text = args.grid
    else:
        count = default_grid_count(n)
        lower, upper = (example.domain.lower, example.domain.upper) if example.domain is not None \
            else (-np.ones(n), np.ones(n))
        grid_text = ",".join(f"{float(lo)!r}:{float(hi)!r}:{count}" for lo, hi in zip(lower, upper))
    u_samples = [parse_vector(u) for u in args.u_samples] if args.u_samples else ()
    try:
        grid = SampleGrid.parse(grid_text, u_samples)
    except ConditionError as e:
        raise UsageError(f"Invalid --grid: {e}") from e

    try:
        storage, system, label = resolve_storage(example, args.storage, P)
    except NotAMetric as e:
        result = {'system': example.name, 'storage': args.storage, 'verdict': 'fail', 'error': str(e),
                  'x': np.asarray(e.x).tolist(), 'lambda_min': e.lambda_min}
        _emit(result, args, config)
        return EXIT_FAIL

    if label == 'qpq':
        P_used = P if P is not None else (example.P if example.P is not None else np.eye(n))
        checkers = [qpq_checker(example.gradient, P_used)]
    elif label == 'natural':
        checkers = [natural_checker(example.gradient)]
    else:
        checkers = []
    if label != 'natural':
        checkers += [contraction_checker(system, storage), killing_checker(system, storage),
                     output_checker(system, storage)]
    if example.rigid_body is not None:
        checkers.append(rigid_body_checker(example.rigid_body.closed_loop, example.rigid_body.r))

    eig_tol = config.getfloat('Numerics', 'eig_tolerance', fallback=1e-9)
    eq_tol = config.getfloat('Numerics', 'equality_tolerance', fallback=1e-8)
    threads = worker_count(config)
    reports = []
    bound_points = grid.points()[::max(1, int(np.prod(grid.counts)) // 200)]
    for checker in checkers:
        tol = args.tol if args.tol is not None else (eq_tol if checker.sense == EQUALITY else eig_tol)
        reports.append(scan_region(replace(checker, tolerance=tol), grid, threads=threads,
                                   chunk_size=config.getint('Scan', 'chunk_size', fallback=256),
                                   max_failure_fraction=config.getfloat('Scan', 'max_failure_fraction',
                                                                        fallback=0.01)))

    primary = reports[0]
    verdict = combine_verdicts(reports)
    result = {
        'system': example.name,
        'storage': label,
        'storage_normalization': 'dS = 1/2 dx^T M(x) dx',
        'grid': grid.describe(),
        'verdict': verdict,
        'condition_id': primary.condition_id,
        'tolerance': primary.tolerance,
        'n_points': primary.n_points,
        'max_margin': primary.max_margin,
        'min_margin': primary.min_margin,
        'worst_point': primary.worst_point.tolist(),
        'reports': [_report_entry(report, storage, bound_points)
                    for report in reports],
    }
    if label == 'natural':
        result['caveat'] = "u-dependent condition checked on sampled inputs only"
    _emit(result, args, config)
    if args.table:
        manager = ResultManager(args.out_dir, config)
        for report in reports:
            manager.write_report(report, f"{example.name}_{report.condition_id}.json", include_table=True)
    return VERDICT_EXIT[verdict]


def _emit(result, args, config):
    text = json.dumps(result, indent=2)
    if getattr(args, 'out', None):
        ResultManager(args.out_dir, config).write_json(result, args.out)
    else:
        print(text)


def _split_channels(text):
    return [part.strip() for part in text.split(';')]


def cmd_simulate(args, config):
    example = get_example(args.system)
    system_n = example.system.n
    P = parse_matrix(args.P) if args.P else None
    storage, system, label = resolve_storage(example, args.storage, P)
    u_sig = parse_signals(_split_channels(args.u))
    du_sig = parse_signals(_split_channels(args.du))
    x0_list = [parse_vector(x) for x in (args.x0 or [",".join(["0"] * system_n)])]
    dx0 = parse_vector(args.dx0) if args.dx0 else np.ones(system_n)
    dt = args.dt if args.dt is not None else config.getfloat('Simulation', 'dt', fallback=1e-3)
    T = args.T
    rtol = args.rtol if args.rtol is not None else config.getfloat('Simulation', 'rtol', fallback=1e-6)
    bound = config.getfloat('Simulation', 'divergence_bound', fallback=1e8)
    stiffness_limit = config.getfloat('Simulation', 'stiffness_limit', fallback=0.5)

    manager = ResultManager(args.out_dir, config)
    out = args.out or f"{example.name}_trajectory.csv"
    stem, extension = os.path.splitext(out)
    trajectories, members = [], []
    for index, x0 in enumerate(x0_list):
        traj = integrate_prolonged(system, x0, dx0, u_sig, du_sig, storage, dt, T, bound, stiffness_limit)
        path = manager.path_for(out if len(x0_list) == 1 else f"{stem}_member{index}{extension or '.csv'}")
        manager.write_trajectory(traj, path)
        trajectories.append(traj)
        member = traj.summary()
        member.update({'x0': x0.tolist(), 'csv': path})
        members.append(member)

    residual = max(dissipation_residual(traj) for traj in trajectories)
    summary = {
        'system': example.name,
        'storage': label,
        'u': [str(s) for s in u_sig],
        'du': [str(s) for s in du_sig],
        'dt': dt,
        'T': T,
        'dissipation_residual': residual,
        'rtol': rtol,
        'passed': residual <= rtol,
        'members': members,
    }
    if len(trajectories) > 1:
        _, spread = pairwise_distances([traj.x for traj in trajectories])
        summary['final_spread'] = float(spread[-1])
    print(json.dumps(summary, indent=2))
    return EXIT_PASS if residual <= rtol else EXIT_FAIL


def cmd_demo(args, config):
    result = run_figure(args.name, dt=args.dt, threads=worker_count(config))
    paths = save_figure(result, ResultManager(args.out_dir, config))
    summary = result.summary()
    summary['files'] = paths
    print(json.dumps(summary, indent=2))
    return EXIT_PASS


def cmd_list(args, config):
    print(json.dumps({
        'systems': list_examples(),
        'storages': list(STORAGE_CHOICES),
        'demos': list(FIGURES),
    }, indent=2))
    return EXIT_PASS


COMMANDS = {
    'check': cmd_check,
    'simulate': cmd_simulate,
    'demo': cmd_demo,
    'list': cmd_list,
}


def build_parser():
    parser = CommandLineParser(prog="diffpass", description="Differential passivity checks and simulations.")
    parser.add_argument('--verbose', action='store_true', help="log DEBUG messages to the console")
    parser.add_argument('--quiet', action='store_true', help="log only warnings and errors to the console")
    parser.add_argument('--out-dir', default=None, help="directory for written artifacts")
    commands = parser.add_subparsers(dest='command', parser_class=CommandLineParser)

    check = commands.add_parser('check', help="scan the passivity conditions over a grid")
    check.add_argument('system', help=f"one of {', '.join(REGISTRY)}")
    check.add_argument('--storage', default='bundled', help="bundled | natural | qpq | constant | <bundled name>")
    check.add_argument('--P', default=None, help="constant weight, e.g. '1' or '1,0;0,1'")
    check.add_argument('--grid', default=None, help="lo:hi:count per axis, comma-separated")
    check.add_argument('--u-samples', action='append', default=None, help="input sample (repeatable)")
    check.add_argument('--tol', type=float, default=None)
    check.add_argument('--out', default=None, help="write the JSON report here instead of stdout")
    check.add_argument('--table', action='store_true', help="also write per-point CSV sidecars")

    simulate = commands.add_parser('simulate', help="integrate the prolonged system")
    simulate.add_argument('system', help=f"one of {', '.join(REGISTRY)}")
    simulate.add_argument('--x0', action='append', default=None, help="initial state (repeat for an ensemble)")
    simulate.add_argument('--dx0', default=None, help="initial variation (default all ones)")
    simulate.add_argument('--u', default="0", help="input signal; channels separated by ';'")
    simulate.add_argument('--du', default="0", help="input variation signal; channels separated by ';'")
    simulate.add_argument('--dt', type=float, default=None)
    simulate.add_argument('--T', type=float, default=10.0)
    simulate.add_argument('--storage', default='bundled')
    simulate.add_argument('--P', default=None)
    simulate.add_argument('--rtol', type=float, default=None)
    simulate.add_argument('--out', default=None, help="trajectory CSV path")

    demo = commands.add_parser('demo', help="reproduce a figure as CSV + SVG")
    demo.add_argument('name', help=f"one of {', '.join(FIGURES)}")
    demo.add_argument('--dt', type=float, default=None)

    commands.add_parser('list', help="list bundled systems, storages and demos")
    return parser


def main(argv=None):
    config = load_settings()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE

    console_level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else \
        getattr(logging, config.get('Logging', 'level', fallback='INFO').upper(), logging.INFO)
    logger_setup.setup_logging(log_file=config.get('Logging', 'log_file', fallback='diffpass.log'),
                               console_level=console_level)
    logger.info(f"----- diffpass {config.get('Application', 'version', fallback='0.0.0')} -----")

    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args, config)
    except (UsageError, UnknownSystem, UnknownFigure) as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SignalParseError as e:
        logger.error(f"Signal parse error: {e.args[0]} at offset {e.position}")
        print(str(e), file=sys.stderr)
        return EXIT_SIGNAL
    except Diverged as e:
        logger.error(f"Simulation diverged at t={e.time}: {e}")
        print(str(e), file=sys.stderr)
        return EXIT_DIVERGED
    except (ConditionError, StorageError, SimulationError) as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_FAIL
    except DiffPassError as e:
        logger.exception(f"Command '{args.command}' failed: {e}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
