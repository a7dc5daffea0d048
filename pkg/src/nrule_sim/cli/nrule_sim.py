# GNU General Public License v3.0+ (see LICENSES/GPL-3.0-or-later.txt or
# https://www.gnu.org/licenses/gpl-3.0.txt)
# SPDX-License-Identifier: GPL-3.0-or-later
# SPDX-FileCopyrightText: nrule-sim contributors, 2026
"""Entrypoint to the nrule-sim tool."""

import argparse
import os
import os.path
import sys
from typing import Dict, List

import twiggy  # type: ignore[import]

from ..logging import log, initialize_app_logging
initialize_app_logging()

# We have to call initialize_app_logging() before these imports so that the log object is configured
# correctly before other nrule_sim modules make copies of it.
# pylint: disable=wrong-import-position
from antsibull_core import app_context  # noqa: E402
from antsibull_core.args import (  # noqa: E402
    InvalidArgumentError, get_toplevel_parser, normalize_toplevel_options
)
from antsibull_core.config import ConfigError, load_config  # noqa: E402

from ..dynamics import DEFAULT_DT_FLOOR, DEFAULT_DT_INIT, DEFAULT_TOL  # noqa: E402
from ..ensemble import DEFAULT_P_MIN, DEFAULT_SIGMA, ensemble_command  # noqa: E402
from ..errors import (  # noqa: E402
    GraphError, InvalidScenarioError, NumericalError, OracleError, ScenarioError, TrialError,
)
from ..oracle import DEFAULT_N_STEPS, OracleMode, oracle_command  # noqa: E402
from ..reduction import CollapsePolicy, run_command  # noqa: E402
from ..scenarios import (  # noqa: E402
    dump_scenario_command, list_scenarios_command, validate_command,
)
# pylint: enable=wrong-import-position


mlog = log.fields(mod=__name__)

THREADS_ENV_VAR = 'NRULE_SIM_THREADS'

ARGS_MAP = {'validate': validate_command,
            'run': run_command,
            'ensemble': ensemble_command,
            'oracle': oracle_command,
            'list-scenarios': list_scenarios_command,
            'dump': dump_scenario_command,
            }


def _parse_params(raw: List[str]) -> Dict[str, str]:
    params = {}
    for item in raw:
        name, sep, value = item.partition('=')
        if not sep or not name:
            raise InvalidArgumentError(f'--param expects NAME=VALUE, got {item!r}')
        params[name.strip()] = value.strip()
    return params


def _normalize_scenario_options(args: argparse.Namespace) -> None:
    if args.command not in ('run', 'ensemble', 'oracle', 'dump'):
        return

    args.params = _parse_params(args.params or [])

    if getattr(args, 'tmax', None) is not None and args.tmax <= 0:
        raise InvalidArgumentError('--tmax must be positive')


def _normalize_validate_options(args: argparse.Namespace) -> None:
    if args.command != 'validate':
        return

    if not os.path.isfile(args.scenario_file):
        raise InvalidArgumentError(f'{args.scenario_file} must be an existing file')


def _normalize_integrator_options(args: argparse.Namespace) -> None:
    if args.command not in ('run', 'ensemble'):
        return

    for name in ('tol', 'dt_init', 'dt_floor'):
        if getattr(args, name) <= 0:
            raise InvalidArgumentError(f'--{name.replace("_", "-")} must be positive')
    if args.seed < 0:
        raise InvalidArgumentError('--seed must not be negative')
    if args.samples is not None and args.samples <= 0:
        raise InvalidArgumentError('--samples must be positive')


def _normalize_run_options(args: argparse.Namespace) -> None:
    if args.command != 'run':
        return

    if args.samples_out is not None and args.samples is None:
        raise InvalidArgumentError('--samples-out needs --samples')


def _normalize_ensemble_options(args: argparse.Namespace) -> None:
    if args.command != 'ensemble':
        return

    if args.trials < 1:
        raise InvalidArgumentError('--trials must be at least 1')

    threads = os.environ.get(THREADS_ENV_VAR)
    if threads:
        try:
            args.workers = int(threads)
        except ValueError:
            raise InvalidArgumentError(
                f'{THREADS_ENV_VAR} must be an integer, got {threads!r}') from None
    if args.workers is not None and args.workers < 1:
        raise InvalidArgumentError('the number of workers must be at least 1')
    if args.bin_width is not None and args.bin_width <= 0:
        raise InvalidArgumentError('--bin-width must be positive')


def _normalize_oracle_options(args: argparse.Namespace) -> None:
    if args.command not in ('oracle', 'ensemble'):
        return

    if args.n_steps < 4 or args.n_steps % 2:
        raise InvalidArgumentError('--n-steps must be an even number of at least 4')


def parse_args(program_name: str, args: List[str]) -> argparse.Namespace:
    """
    Parse and coerce the command line arguments.

    :arg program_name: The name of the program
    :arg args: A list of the command line arguments
    :returns: A :python:`argparse.Namespace`
    :raises InvalidArgumentError: Whenever there's something wrong with the arguments.
    """
    scenario_parser = argparse.ArgumentParser(add_help=False)
    scenario_parser.add_argument('scenario',
                                 help='A registered scenario id (see list-scenarios) or the path'
                                 ' of a scenario file')
    scenario_parser.add_argument('--param', dest='params', action='append', default=[],
                                 metavar='NAME=VALUE',
                                 help='Builder parameter of a registered scenario.  Tuples are'
                                 ' given as comma separated numbers.  May be repeated')

    window_parser = argparse.ArgumentParser(add_help=False)
    window_parser.add_argument('--tmax', type=float, default=None,
                               help='End of the time window.  Defaults to the scenario\'s'
                               ' suggested value')

    trajectory_parser = argparse.ArgumentParser(add_help=False)
    trajectory_parser.add_argument('--seed', type=int, default=0,
                                   help='Master seed.  Every trial derives its own stream from'
                                   ' the seed and its index')
    trajectory_parser.add_argument('--tol', type=float, default=DEFAULT_TOL,
                                   help='Relative and absolute tolerance of the integrator')
    trajectory_parser.add_argument('--dt-init', type=float, default=DEFAULT_DT_INIT,
                                   help='Initial integrator step')
    trajectory_parser.add_argument('--dt-floor', type=float, default=DEFAULT_DT_FLOOR,
                                   help='Smallest step the integrator may take before giving up')
    trajectory_parser.add_argument('--policy', choices=[p.value for p in CollapsePolicy],
                                   default=CollapsePolicy.ZERO_NON_CHOSEN.value,
                                   help='What happens to non-chosen components at a hit')
    trajectory_parser.add_argument('--samples', type=float, default=None, metavar='DT',
                                   help='Record the square modulus of every basis state every'
                                   ' DT time units')

    oracle_steps_parser = argparse.ArgumentParser(add_help=False)
    oracle_steps_parser.add_argument('--n-steps', type=int, default=DEFAULT_N_STEPS,
                                     help='Quadrature intervals per stage of the race oracle')

    parser = get_toplevel_parser(prog=program_name,
                                 package='nrule_sim',
                                 description='Stochastic state reduction on component/gap'
                                 ' networks')

    subparsers = parser.add_subparsers(title='Subcommands', dest='command',
                                       help='for help use nrule-sim SUBCOMMANDS -h')
    subparsers.required = True

    validate_parser = subparsers.add_parser('validate',
                                            description='Validate a scenario file')
    validate_parser.add_argument('scenario_file', help='The scenario file to check')

    run_parser = subparsers.add_parser('run',
                                       parents=[scenario_parser, window_parser,
                                                trajectory_parser],
                                       description='Run a single trajectory and write its event'
                                       ' log as JSON lines')
    run_parser.add_argument('--out', default=None,
                            help='File to write the event log to.  Defaults to stdout')
    run_parser.add_argument('--samples-out', default=None,
                            help='CSV file for the sampled square modulus per component')

    ensemble_parser = subparsers.add_parser('ensemble',
                                            parents=[scenario_parser, window_parser,
                                                     trajectory_parser, oracle_steps_parser],
                                            description='Run an ensemble of trajectories and'
                                            ' compare outcome frequencies with the oracle')
    ensemble_parser.add_argument('--trials', type=int, required=True,
                                 help='Number of trajectories')
    ensemble_parser.add_argument('--workers', type=int, default=None,
                                 help='Number of worker processes.  Defaults to the thread_max'
                                 f' setting of the config file.  {THREADS_ENV_VAR} overrides'
                                 ' this option')
    ensemble_parser.add_argument('--report', default=None,
                                 help='File to write the JSON report to.  Defaults to stdout')
    ensemble_parser.add_argument('--csv', default=None,
                                 help='File to write outcome, count, frequency, oracleP and z to')
    ensemble_parser.add_argument('--summary', default=None,
                                 help='File to write a reStructuredText summary to')
    ensemble_parser.add_argument('--bin-width', type=float, default=None,
                                 help='Bin width of the hit-time histograms')
    ensemble_parser.add_argument('--no-oracle', action='store_true',
                                 help='Do not compute the race oracle')
    ensemble_parser.add_argument('--sigma', type=float, default=DEFAULT_SIGMA,
                                 help='Largest acceptable |z| of an outcome')
    ensemble_parser.add_argument('--p-min', type=float, default=DEFAULT_P_MIN,
                                 help='Smallest acceptable chi-square p-value')
    ensemble_parser.add_argument('--assert', dest='assert_', action='store_true',
                                 help='Exit with 4 if an invariant fails or the oracle comparison'
                                 ' does not pass')

    oracle_parser = subparsers.add_parser('oracle',
                                          parents=[scenario_parser, window_parser,
                                                   oracle_steps_parser],
                                          description='Compute an independent reference for a'
                                          ' scenario')
    oracle_parser.add_argument('--mode', default=None,
                               choices=[OracleMode.UNITARY.value, OracleMode.RACE.value,
                                        OracleMode.MODULUS.value],
                               help='Defaults to the oracle mode of the scenario')
    oracle_parser.add_argument('--out', default=None,
                               help='File to write the JSON report to.  Defaults to stdout')

    subparsers.add_parser('list-scenarios',
                          description='List the registered scenarios and their parameters')

    dump_parser = subparsers.add_parser('dump',
                                        description='Write a registered scenario as a scenario'
                                        ' file')
    dump_parser.add_argument('scenario', help='A registered scenario id')
    dump_parser.add_argument('--param', dest='params', action='append', default=[],
                             metavar='NAME=VALUE', help='Builder parameter.  May be repeated')
    dump_parser.add_argument('--out', default=None,
                             help='File to write the scenario to.  Defaults to stdout')

    parsed_args: argparse.Namespace = parser.parse_args(args)

    # Validation and coercion
    normalize_toplevel_options(parsed_args)
    _normalize_scenario_options(parsed_args)
    _normalize_validate_options(parsed_args)
    _normalize_integrator_options(parsed_args)
    _normalize_run_options(parsed_args)
    _normalize_ensemble_options(parsed_args)
    _normalize_oracle_options(parsed_args)

    return parsed_args


def _run_command(command: str) -> int:
    flog = mlog.fields(func='_run_command')
    try:
        return ARGS_MAP[command]()
    except InvalidScenarioError as e:
        print(e)
        return 2
    except (ScenarioError, GraphError) as e:
        print(e)
        return 1
    except TrialError as e:
        flog.fields(trial=e.trial).error(e.message)
        print(e)
        return 3 if e.numerical else 1
    except (NumericalError, OracleError) as e:
        print(e)
        return 3


def run(args: List[str]) -> int:
    """
    Run the program.

    :arg args: A list of command line arguments.  Typically :python:`sys.argv`.
    :returns: A program return code.  0 for success, integers for any errors.  These are documented
        in :func:`main`.
    """
    flog = mlog.fields(func='run')
    flog.fields(raw_args=args).info('Enter')

    program_name = os.path.basename(args[0])
    try:
        parsed_args: argparse.Namespace = parse_args(program_name, args[1:])
    except InvalidArgumentError as e:
        print(e)
        return 1

    try:
        cfg = load_config(parsed_args.config_file)
        flog.fields(config=cfg).info('Config loaded')
    except ConfigError as e:
        print(e)
        return 1

    context_data = app_context.create_contexts(args=parsed_args, cfg=cfg)
    with app_context.app_and_lib_context(context_data) as (app_ctx, dummy_):
        twiggy.dict_config(app_ctx.logging_cfg.dict())
        flog.debug('Set logging config')

        flog.fields(command=parsed_args.command).info('Action')
        return _run_command(parsed_args.command)


def main() -> int:
    """
    Entrypoint called from the script.

    console_scripts call functions which take no parameters.  However, it's hard to test a function
    which takes no parameters so this function lightly wraps :func:`run`, which actually does the
    heavy lifting.

    :returns: A program return code.

    Return codes:
        :0: Success
        :1: Usage error: bad command line arguments, config file or scenario reference
        :2: The scenario failed validation
        :3: Numerical failure: the integrator or the oracle could not meet its tolerance
        :4: Acceptance failure: an invariant or the oracle comparison failed under ``--assert``
    """
    return run(sys.argv)


if __name__ == '__main__':
    sys.exit(main())
