import argparse
import json
import logging
import os
import sys

from dataclasses import replace
from typing import List, Optional

import sentry_sdk
import yaml

from expectile_group_lasso import dataset, loss, pipeline, tuning
from expectile_group_lasso.design import DesignError
from expectile_group_lasso.inference import RankDeficientError
from expectile_group_lasso.simulate import (
    EstimatorConfig, ScenarioError, gamma_sweep, load_scenarios, run, signal_sweep)
from expectile_group_lasso.solver import DimensionError, SolverError, SolverOptions, default_cap
from expectile_group_lasso.writers import BUILTIN_WRITERS

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DATA_ERROR = 2
EXIT_NOT_CONVERGED = 3

DEFAULT_REPS = 100
DEFAULT_OUTPUTS = 'csv'

# Errors caused by the inputs rather than by the program.
DATA_ERRORS = (
    dataset.DataError,
    DesignError,
    DimensionError,
    RankDeficientError,
    ScenarioError,
    SolverError,
    loss.DegenerateSampleError,
    loss.DomainError,
    loss.LossSpecError,
    tuning.TuningError,
)

logger = logging.getLogger(__name__)


def load_config(config_file) -> dict:
    if config_file:
        try:
            with open(config_file) as f:
                config = yaml.safe_load(f) or {}
            if not isinstance(config, dict):
                raise ValueError('configuration must be a mapping')
            return config
        except Exception as error:
            logger.error('Cannot read `%s` configuration file: %s', config_file, repr(error))

    return {}


def parse_outputs(outputs_str: str) -> List[str]:
    outputs = [o for o in outputs_str.lower().replace(' ', '').strip(',').split(',') if o]

    diff = set(outputs) - set(BUILTIN_WRITERS)
    if not outputs or diff:
        raise ValueError('Unsupported outputs {}. Supported outputs are {}'.format(
            sorted(diff) or outputs_str, list(BUILTIN_WRITERS)))

    return outputs


def load_writers(outputs, configuration):
    return [BUILTIN_WRITERS[output](configuration) for output in outputs]


def write_reports(writers, reports) -> list:
    """
    Hand every report to every writer; a failing writer does not stop the others.

    :return: Outputs that could not be written, empty on success.
    """
    failed = []
    for writer in writers:
        try:
            with writer:
                for report in reports:
                    writer.add_report(report)
            failed.extend(writer.failed)
        except Exception:
            logger.exception('Failed to write reports with %s writer', writer.name)
            failed.append(writer.name)
    if failed:
        logger.error('Could not write %s', ', '.join(failed))
    return failed


def parse_floats(text: str, what: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ScenarioError('{} must be a comma separated list of numbers, got {!r}'.format(what, text))
    if not values:
        raise ScenarioError('{} must not be empty'.format(what))
    return values


def solver_options(config: dict) -> SolverOptions:
    try:
        return SolverOptions.from_config(config.get('solver'))
    except (TypeError, ValueError) as error:
        raise ScenarioError('Invalid solver configuration: {}'.format(error))


def estimator_config(args, config: dict) -> EstimatorConfig:
    simulation = config.get('simulation') or {}
    kwargs = {'solver': solver_options(config)}
    if args.lambda_max_factor is not None:
        kwargs['lambda_max_factor'] = args.lambda_max_factor
    if 'tau_sample_size' in simulation:
        kwargs['tau_sample_size'] = int(simulation['tau_sample_size'])
    return EstimatorConfig(**kwargs)


def simulation_settings(args, config: dict):
    simulation = config.get('simulation') or {}
    reps = int(os.environ.get('EGL_REPS', args.reps or simulation.get('reps', DEFAULT_REPS)))
    workers = int(os.environ.get('EGL_WORKERS', args.workers or simulation.get('workers', 1)))
    seed = os.environ.get('EGL_SEED', args.seed)
    return reps, max(workers, 1), None if seed is None else int(seed)


def scenarios_for(args, seed):
    scenarios = load_scenarios(args.scenario)
    if seed is not None:
        scenarios = [replace(s, seed=seed) for s in scenarios]
    return scenarios


def cmd_fit(args, config) -> int:
    frame = dataset.read_csv(args.data)
    groups = dataset.load_groups(args.groups) if args.groups else None
    lags = [dataset.parse_lag(text) for text in args.lag or []]

    data = dataset.build_dataset(frame, args.response, groups=groups, lags=lags)
    if args.learning_rows:
        data = data.rows(dataset.parse_rows(args.learning_rows, data.n))

    report = pipeline.fit_dataset(
        data,
        tau=args.tau,
        q=args.q,
        gamma=args.gamma,
        lam=args.lam,
        cap_weights=args.cap_weights,
        standardize_columns=args.standardize,
        intercept=args.intercept,
        tau_scale=args.tau_scale,
        opts=solver_options(config),
    )

    out_dir = os.path.dirname(os.path.abspath(args.out))
    stem = os.path.splitext(os.path.basename(args.out))[0]
    writers = load_writers(args.outputs, {'out_dir': out_dir, 'paths': {'fit': args.out}, 'stem': stem})
    if write_reports(writers, [report]):
        return EXIT_FAILURE

    if not report.converged:
        logger.error('Penalized fit did not converge; report written with converged=false')
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_evaluate(args, config) -> int:
    frame = dataset.read_csv(args.data)
    splits = args.split or ['all']

    metrics = []
    for path in args.report:
        report = dataset.read_fit_report(path)
        metrics.extend(pipeline.evaluate(report, frame, splits=splits, learning_rows=args.learning_rows,
                                         test_rows=args.test_rows, response=args.response))

    evaluation = pipeline.Evaluation(metrics)
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out))
        stem = os.path.splitext(os.path.basename(args.out))[0]
        writers = load_writers(args.outputs, {'out_dir': out_dir, 'paths': {'evaluate': args.out}, 'stem': stem})
        if write_reports(writers, [evaluation]):
            return EXIT_FAILURE
    else:
        sys.stdout.write(evaluation.tables()['evaluate'].to_csv(index=False))

    return EXIT_OK


def cmd_simulate(args, config) -> int:
    reps, workers, seed = simulation_settings(args, config)
    estimator = estimator_config(args, config)
    if args.cap_weights:
        logger.warning('--cap-weights uses the n^(1/2) cap of each scenario')

    reports = []
    for scenario in scenarios_for(args, seed):
        cfg = replace(estimator, cap=default_cap(scenario.n)) if args.cap_weights else estimator
        reports.append(run(scenario, reps, config=cfg, workers=workers))

    if write_reports(load_writers(args.outputs, {'out_dir': args.out}), reports):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(args, config) -> int:
    reps, workers, seed = simulation_settings(args, config)
    estimator = estimator_config(args, config)

    tables = []
    for scenario in scenarios_for(args, seed):
        cfg = replace(estimator, cap=default_cap(scenario.n)) if args.cap_weights else estimator
        if args.gamma_list:
            tables.append(gamma_sweep(scenario, parse_floats(args.gamma_list, '--gamma-list'), reps, config=cfg,
                                      workers=workers))
        else:
            table = signal_sweep(scenario, parse_floats(args.v_list, '--v-list'), reps, config=cfg,
                                 workers=workers)
            for level, norm in table.thresholds.items():
                logger.info('%s: %g%% detection at ||beta0|| = %s', scenario.label, level, norm)
            tables.append(table)

    if write_reports(load_writers(args.outputs, {'out_dir': args.out}), tables):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_tune(args, config) -> int:
    exponent = args.lambda_exponent
    if exponent is None:
        exponent = tuning.schedule_exponent(args.gamma)

    regime = tuning.RegimeSpec(
        c=args.c, alpha=args.alpha, gamma=args.gamma, lambda_exponent=exponent,
        a_exponent=args.a_exponent, b_exponent=args.b_exponent, p0_exponent=args.p0_exponent,
    )
    document = tuning.check_conditions(regime).to_dict()
    if args.n is not None:
        document['lambda_n'] = float(args.n) ** exponent

    text = json.dumps(document, indent=2)
    if args.out:
        with open(args.out, 'w') as fp:
            fp.write(text + '\n')
        logger.info('Wrote %s', args.out)
    else:
        sys.stdout.write(text + '\n')

    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    argp = argparse.ArgumentParser(description='Adaptive group LASSO expectile estimation and simulations.')
    argp.add_argument('-v', '--verbose', dest='verbose', action='store_true', default=False,
                      help='Verbose output. Can be set via EGL_DEBUG env variable.')
    argp.add_argument('--config', dest='config',
                      help='YAML configuration file with optional `solver` and `simulation` sections. Can be set '
                           'via EGL_CONFIG env variable.')
    argp.add_argument('--outputs', dest='outputs', default=DEFAULT_OUTPUTS,
                      help=('Comma separated report outputs. Supported outputs are {}. Can be set via EGL_OUTPUTS '
                            'env variable.').format(list(BUILTIN_WRITERS)))

    commands = argp.add_subparsers(dest='command', metavar='command')
    commands.required = True

    fit = commands.add_parser('fit', help='Fit the adaptive group LASSO estimator on a CSV file.')
    fit.add_argument('data', help='CSV file with a header row.')
    fit.add_argument('--response', required=True, help='Name of the response column.')
    fit.add_argument('--groups', help='JSON group mapping {group: [column, ...]}; default: one group per column.')
    fit.add_argument('--tau', default='auto', help='Expectile index in (0, 1) or `auto` (default).')
    fit.add_argument('--tau-scale', dest='tau_scale', choices=pipeline.TAU_SCALES, default='standardized',
                     help='Scale on which `--tau auto` estimates the index.')
    fit.add_argument('--q', type=float, default=2.0, help='Loss exponent q > 1 (2 is the expectile loss).')
    fit.add_argument('--gamma', type=float, default=1.0, help='Adaptive weight exponent.')
    fit.add_argument('--lambda', dest='lam', default='schedule',
                     help='Tuning parameter: a number, `n^xi`, `C*n^xi` or `schedule` (n^(-1/2-gamma/4)).')
    fit.add_argument('--cap-weights', dest='cap_weights', action='store_true', default=False,
                     help='Cap adaptive weights at n^(1/2) instead of pinning zero pilot groups.')
    fit.add_argument('--standardize', dest='standardize', action='store_true', default=True,
                     help='Standardize covariates before fitting (default).')
    fit.add_argument('--no-standardize', dest='standardize', action='store_false')
    fit.add_argument('--no-intercept', dest='intercept', action='store_false', default=True,
                     help='Fit without the unpenalized intercept.')
    fit.add_argument('--lag', action='append', help='Append lagged copies of a column, as column:k. Repeatable.')
    fit.add_argument('--learning-rows', dest='learning_rows', help='Fit on this start:stop row range only.')
    fit.add_argument('--out', default='report.csv', help='Report CSV path.')
    fit.set_defaults(func=cmd_fit)

    evaluate = commands.add_parser('evaluate', help='Prediction MAD and residual variance of fitted models.')
    evaluate.add_argument('data', help='CSV file with the response and the report columns.')
    evaluate.add_argument('--report', action='append', required=True, help='Fit report CSV. Repeatable.')
    evaluate.add_argument('--split', action='append', choices=dataset.SPLITS,
                          help='Rows to evaluate on. Repeatable; default all.')
    evaluate.add_argument('--learning-rows', dest='learning_rows', help='Learning rows as start:stop.')
    evaluate.add_argument('--test-rows', dest='test_rows',
                          help='Test rows as start:stop; default: rows after the learning range.')
    evaluate.add_argument('--response', help='Response column; default: the one recorded in the report.')
    evaluate.add_argument('--out', help='Metrics CSV path; default: standard output.')
    evaluate.set_defaults(func=cmd_evaluate)

    for name, func, description in (('simulate', cmd_simulate, 'Run Monte Carlo scenarios.'),
                                    ('sweep', cmd_sweep, 'Sweep gamma or the signal strength of scenarios.')):
        command = commands.add_parser(name, help=description)
        command.add_argument('scenario', help='Scenario file (JSON or YAML).')
        command.add_argument('--reps', type=int,
                             help='Replications per scenario (default {}). Can be set via EGL_REPS env '
                                  'variable.'.format(DEFAULT_REPS))
        command.add_argument('--workers', type=int,
                             help='Parallel replication workers. Can be set via EGL_WORKERS env variable.')
        command.add_argument('--seed', type=int,
                             help='Override the scenario seeds. Can be set via EGL_SEED env variable.')
        command.add_argument('--lambda-max-factor', dest='lambda_max_factor', type=float,
                             help='Use this multiple of lambda_max instead of the scenario schedule.')
        command.add_argument('--cap-weights', dest='cap_weights', action='store_true', default=False,
                             help='Cap adaptive weights at n^(1/2).')
        command.add_argument('--out', default='.', help='Output directory.')
        command.set_defaults(func=func)

        if name == 'sweep':
            sweep = command.add_mutually_exclusive_group(required=True)
            sweep.add_argument('--gamma-list', dest='gamma_list', help='Comma separated gamma values.')
            sweep.add_argument('--v-list', dest='v_list',
                               help='Comma separated signal levels v (first coefficient v * 1e-2).')

    tune = commands.add_parser('tune', help='Check the rate conditions of a tuning regime.')
    tune.add_argument('--c', type=float, default=0.0, help='Growth exponent of p = O(n^c).')
    tune.add_argument('--alpha', type=float, default=0.0, help='Signal floor exponent.')
    tune.add_argument('--gamma', type=float, required=True, help='Adaptive weight exponent.')
    tune.add_argument('--lambda-exponent', dest='lambda_exponent', type=float,
                      help='Exponent e of lambda_n = n^e; default -1/2 - gamma/4.')
    tune.add_argument('--a-exponent', dest='a_exponent', type=float, help='Pilot rate a_n = n^e.')
    tune.add_argument('--b-exponent', dest='b_exponent', type=float, help='Penalized rate b_n = n^e.')
    tune.add_argument('--p0-exponent', dest='p0_exponent', type=float, help='Active groups p0 = O(n^e).')
    tune.add_argument('--n', type=int, help='Also report lambda_n at this sample size.')
    tune.add_argument('--out', help='JSON output path; default: standard output.')
    tune.set_defaults(func=cmd_tune)

    return argp


def run_command(args, config) -> int:
    try:
        return args.func(args, config)
    except DATA_ERRORS as error:
        logger.error('%s', error)
        return EXIT_DATA_ERROR
    except Exception as error:
        logger.exception('Failed to run %s', args.command)
        sentry_sdk.capture_exception(error)
        return EXIT_FAILURE


def main(argv: Optional[List[str]] = None):
    logging.basicConfig(
        level=os.environ.get('LOGLEVEL', 'INFO').upper(),
        format='%(asctime)s %(levelname)s %(message)s',
    )
    sentry_dsn = os.environ.get('SENTRY_DSN')
    if sentry_dsn:
        sentry_sdk.init(
            dsn=sentry_dsn,
            release=os.environ.get('VERSION', 'unknown'),
            default_integrations=True,
            send_default_pii=False,
            environment=os.environ.get('EGL_ENVIRONMENT', 'unknown'),
        )

    args = build_parser().parse_args(argv)

    if args.verbose or os.environ.get('EGL_DEBUG'):
        logging.getLogger('expectile_group_lasso').setLevel(logging.DEBUG)

    config_file = os.environ.get('EGL_CONFIG', args.config)
    config = load_config(config_file)

    try:
        args.outputs = parse_outputs(os.environ.get('EGL_OUTPUTS', args.outputs))
    except ValueError as error:
        logger.error('%s', error)
        sys.exit(EXIT_DATA_ERROR)

    logger.info('Loaded configuration:')
    logger.info('\tCommand: %s', args.command)
    logger.info('\tOutputs: %s', args.outputs)
    logger.info('\tConfiguration file: %s', config_file)

    sys.exit(run_command(args, config))
