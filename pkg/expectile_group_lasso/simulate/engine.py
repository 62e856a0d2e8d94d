"""
Monte Carlo engine: scenario draws, the estimation pipeline per replication, aggregated selection and accuracy
metrics, and the gamma / signal-strength sweeps.

Every replication draws from its own stream ``SeedSequence([seed, replication, attempt])`` so results do not
depend on execution order or on the number of workers.
"""
import functools
import logging

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from expectile_group_lasso import loss
from expectile_group_lasso.design import GroupedCoefficients, GroupedDesign, active_set, assumption_report
from expectile_group_lasso.simulate.errors import BUILTIN_ERRORS, SYMMETRIC_ERRORS
from expectile_group_lasso.simulate.scenario import ScenarioError, ScenarioSpec
from expectile_group_lasso.solver import (
    PenaltySpec, SolverOptions, adaptive_weights, fit_penalized, fit_unpenalized, lambda_max)

TAU_SAMPLE_SIZE = 10 ** 6
TAU_STREAM = 2 ** 31 - 1
MAX_ATTEMPTS = 100
DEGENERATE_EIGEN = 1e-10

THRESHOLDS = (99.0, 95.0)

SUMMARY_COLUMNS = (
    'scenario', 'structure', 'error_dist', 'n', 'p', 'p0', 'gamma', 'tau', 'lambda', 'replications',
    'mean_true_nonzero', 'mean_false_nonzero', 'pct_true', 'pct_false', 'mean_abs_all', 'mean_abs_active',
    'nonconverged', 'regenerated', 'degenerate',
)

RECORD_COLUMNS = (
    'scenario', 'replication', 'true_nonzero', 'false_nonzero', 'true_groups', 'pct_true', 'pct_false',
    'abs_all', 'abs_active', 'lambda', 'converged', 'iterations', 'kkt_residual', 'attempts', 'degenerate',
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    """
    Estimation settings shared by all replications.

    ``lambda_max_factor`` replaces the scenario schedule by ``factor * lambda_max`` of each replication.
    """
    solver: SolverOptions = field(default_factory=SolverOptions)
    cap: Optional[float] = None
    lambda_max_factor: Optional[float] = None
    tau_sample_size: int = TAU_SAMPLE_SIZE


@dataclass(frozen=True, eq=False)
class Draw:
    design: GroupedDesign
    y: np.ndarray
    beta0: GroupedCoefficients
    tau: float
    attempts: int = 1


@dataclass(frozen=True)
class ReplicationRecord:
    replication: int
    true_nonzero: int
    false_nonzero: int
    true_groups: int
    p: int
    pct_true: float
    pct_false: float
    abs_all: float
    abs_active: float
    lam: float
    converged: bool
    iterations: int
    kkt_residual: float
    attempts: int
    active: Tuple[int, ...] = ()

    @property
    def degenerate(self) -> bool:
        return self.true_groups == 0

    def to_dict(self, scenario: str) -> dict:
        return {
            'scenario': scenario,
            'replication': self.replication,
            'true_nonzero': self.true_nonzero,
            'false_nonzero': self.false_nonzero,
            'true_groups': self.true_groups,
            'pct_true': self.pct_true,
            'pct_false': self.pct_false,
            'abs_all': self.abs_all,
            'abs_active': self.abs_active,
            'lambda': self.lam,
            'converged': self.converged,
            'iterations': self.iterations,
            'kkt_residual': self.kkt_residual,
            'attempts': self.attempts,
            'degenerate': self.degenerate,
        }


@dataclass(frozen=True)
class SimulationReport:
    spec: ScenarioSpec
    tau: float
    p: int
    p0: int
    replications: int
    mean_true_nonzero: float
    mean_false_nonzero: float
    pct_true: float
    pct_false: float
    mean_abs_all: float
    mean_abs_active: float
    nonconverged: int
    regenerated: int
    degenerate: bool
    records: Tuple[ReplicationRecord, ...]

    kind = 'simulation'

    @property
    def scenario(self) -> str:
        return self.spec.label

    @property
    def lam(self) -> float:
        values = {r.lam for r in self.records}
        return values.pop() if len(values) == 1 else float('nan')

    def summary_row(self) -> dict:
        return {
            'scenario': self.scenario,
            'structure': self.spec.structure,
            'error_dist': self.spec.error_dist,
            'n': self.spec.n,
            'p': self.p,
            'p0': self.p0,
            'gamma': self.spec.gamma,
            'tau': self.tau,
            'lambda': self.lam,
            'replications': self.replications,
            'mean_true_nonzero': self.mean_true_nonzero,
            'mean_false_nonzero': self.mean_false_nonzero,
            'pct_true': self.pct_true,
            'pct_false': self.pct_false,
            'mean_abs_all': self.mean_abs_all,
            'mean_abs_active': self.mean_abs_active,
            'nonconverged': self.nonconverged,
            'regenerated': self.regenerated,
            'degenerate': self.degenerate,
        }

    def tables(self) -> Dict[str, pd.DataFrame]:
        return {
            'simulation': pd.DataFrame([self.summary_row()], columns=SUMMARY_COLUMNS),
            'replications': pd.DataFrame([r.to_dict(self.scenario) for r in self.records], columns=RECORD_COLUMNS),
        }

    def context(self) -> dict:
        return dict(self.summary_row(), records=self.records)


@dataclass(frozen=True)
class SweepTable:
    """One simulation report per sweep point; signal sweeps also carry detection thresholds."""
    sweep: str
    values: Tuple[float, ...]
    reports: Tuple[SimulationReport, ...]
    thresholds: Dict[float, Optional[float]] = field(default_factory=dict)

    kind = 'sweep'

    def rows(self) -> List[dict]:
        rows = []
        for value, report in zip(self.values, self.reports):
            row = {'sweep': self.sweep, 'value': value}
            if self.sweep == 'signal':
                row['beta_norm'] = value * 1e-2
            row.update(report.summary_row())
            rows.append(row)
        return rows

    def tables(self) -> Dict[str, pd.DataFrame]:
        tables = {
            'sweep': pd.DataFrame(self.rows()),
            'replications': pd.concat([r.tables()['replications'] for r in self.reports], ignore_index=True),
        }
        if self.thresholds:
            tables['thresholds'] = pd.DataFrame(
                [{'detection_pct': pct, 'beta_norm': norm} for pct, norm in self.thresholds.items()],
                columns=('detection_pct', 'beta_norm'))
        return tables

    def context(self) -> dict:
        return {'sweep': self.sweep, 'rows': self.rows(), 'thresholds': self.thresholds}


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


@functools.lru_cache(maxsize=32)
def scenario_tau(error_dist: str, seed: int, size: int = TAU_SAMPLE_SIZE) -> float:
    """
    Expectile index of an error law, estimated once on a dedicated sample of ``size`` draws.

    The estimate uses the raw error scale: standardizing centers the sample and forces the ratio to 1/2.
    """
    sample = BUILTIN_ERRORS[error_dist](stream(seed, TAU_STREAM), size)
    tau = loss.estimate_tau(sample, standardize=False)
    logger.info('Estimated tau=%.4f for %s errors on %d draws', tau, error_dist, size)
    return tau


def resolve_tau(spec: ScenarioSpec, sample_size: int = TAU_SAMPLE_SIZE) -> float:
    if spec.tau is not None:
        return spec.tau
    fixed = spec.model.fixed_tau
    if fixed is not None:
        if spec.error_dist not in SYMMETRIC_ERRORS:
            logger.warning('%s: %s structure fixes tau=%g but %s errors are asymmetric; set tau explicitly',
                           spec.label, spec.structure, fixed, spec.error_dist)
        return fixed
    return scenario_tau(spec.error_dist, spec.seed, sample_size)


def generate(spec: ScenarioSpec, replication: int, tau: Optional[float] = None) -> Draw:
    """
    Draw the design, coefficients and response of one replication.

    Designs whose Gram matrix has a minimum eigenvalue below 1e-10 are redrawn from the next sub-seed.

    :raises ScenarioError: if no usable design is found within 100 attempts.
    """
    p, p0 = spec.sizes()
    model = spec.model
    groups = model.groups(p)
    tau = resolve_tau(spec) if tau is None else tau

    if groups.r > spec.n:
        raise ScenarioError('{} columns need at least as many observations, n={}'.format(groups.r, spec.n))

    for attempt in range(MAX_ATTEMPTS):
        design_rng, error_rng, beta_rng = (
            np.random.default_rng(s) for s in np.random.SeedSequence([spec.seed, replication, attempt]).spawn(3))

        design = GroupedDesign(design_rng.standard_normal((spec.n, groups.r)), groups)
        if assumption_report(design).min_eigen < DEGENERATE_EIGEN:
            logger.warning('Degenerate design in replication %d (attempt %d) of %s: redrawing',
                           replication, attempt, spec.label)
            continue

        try:
            beta0 = model.true_beta(p, p0, beta_rng, active=spec.beta)
        except ValueError as error:
            raise ScenarioError(str(error))

        errors = BUILTIN_ERRORS[spec.error_dist](error_rng, spec.n)
        y = design.X @ beta0 + errors
        return Draw(design, y, GroupedCoefficients(beta0, groups), tau, attempt + 1)

    raise ScenarioError('No non-degenerate design after {} attempts for {}'.format(MAX_ATTEMPTS, spec.label))


def selection_metrics(beta_hat: GroupedCoefficients, beta0: GroupedCoefficients) -> dict:
    """Selection counts and absolute errors of one estimate; the true active set is the non-zero blocks of beta0."""
    p = beta0.groups.p
    truth = active_set(beta0, 0.0).mask(p)
    selected = active_set(beta_hat, 0.0).mask(p)

    true_groups = int(truth.sum())
    true_nonzero = int(np.sum(truth & selected))
    false_nonzero = int(np.sum(selected & ~truth))

    errors = np.array([np.sum(np.abs(block)) for block in beta0.groups.split(beta_hat.beta - beta0.beta)])

    return {
        'true_nonzero': true_nonzero,
        'false_nonzero': false_nonzero,
        'true_groups': true_groups,
        'p': p,
        'pct_true': 100.0 * true_nonzero / true_groups if true_groups else 0.0,
        'pct_false': 100.0 * false_nonzero / (p - true_groups) if p > true_groups else 0.0,
        'abs_all': float(errors.sum()),
        'abs_active': float(errors[truth].sum()),
    }


def replicate(spec: ScenarioSpec, replication: int, config: EstimatorConfig, tau: float) -> ReplicationRecord:
    """One replication: draw, pilot fit, adaptive weights, tuning, penalized fit, metrics."""
    draw = generate(spec, replication, tau=tau)
    loss_spec = loss.LossSpec(draw.tau, spec.q)

    pilot = fit_unpenalized(draw.design, draw.y, loss_spec, opts=config.solver)
    weights = adaptive_weights(pilot.beta, spec.gamma, cap=config.cap)

    if config.lambda_max_factor is not None:
        lam = config.lambda_max_factor * lambda_max(draw.design, draw.y, loss_spec, weights, opts=config.solver)
    else:
        lam = spec.schedule()(spec.n)

    penalty = PenaltySpec(lam, spec.gamma, weights, cap_applied=config.cap is not None)
    fit = fit_penalized(draw.design, draw.y, loss_spec, penalty, opts=config.solver)

    metrics = selection_metrics(fit.beta, draw.beta0)
    logger.debug('Replication %d of %s: %d true, %d false non-zeros', replication, spec.label,
                 metrics['true_nonzero'], metrics['false_nonzero'])

    return ReplicationRecord(
        replication=replication,
        lam=lam,
        converged=fit.converged,
        iterations=fit.iterations,
        kkt_residual=fit.kkt_residual,
        attempts=draw.attempts,
        active=fit.active.indices,
        **metrics,
    )


def aggregate(spec: ScenarioSpec, tau: float, records: Sequence[ReplicationRecord]) -> SimulationReport:
    p, p0 = spec.sizes()
    M = len(records)

    def mean(name):
        return float(np.mean([getattr(r, name) for r in records]))

    # accuracy uses the (M p)^-1 normalisation for both the full vector and its active part
    scale = M * p

    return SimulationReport(
        spec=spec,
        tau=tau,
        p=p,
        p0=p0,
        replications=M,
        mean_true_nonzero=mean('true_nonzero'),
        mean_false_nonzero=mean('false_nonzero'),
        pct_true=mean('pct_true'),
        pct_false=mean('pct_false'),
        mean_abs_all=sum(r.abs_all for r in records) / scale,
        mean_abs_active=sum(r.abs_active for r in records) / scale,
        nonconverged=sum(1 for r in records if not r.converged),
        regenerated=sum(r.attempts - 1 for r in records),
        degenerate=any(r.degenerate for r in records),
        records=tuple(records),
    )


def run(spec: ScenarioSpec, M: int, config: Optional[EstimatorConfig] = None, workers: int = 1) -> SimulationReport:
    """
    Run ``M`` independent replications of ``spec`` and aggregate their metrics.

    :param workers: Number of threads running replications; the report does not depend on it.
    """
    if M < 1:
        raise ScenarioError('At least one replication is required, got {}'.format(M))
    config = config or EstimatorConfig()
    tau = resolve_tau(spec, config.tau_sample_size)

    logger.info('Running %d replications of %s (tau=%.4f, %d workers)', M, spec.label, tau, workers)

    task = functools.partial(replicate, spec, config=config, tau=tau)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(task, range(M)))
    else:
        records = [task(m) for m in range(M)]

    report = aggregate(spec, tau, records)
    if report.nonconverged:
        logger.warning('%d of %d replications of %s did not converge', report.nonconverged, M, spec.label)
    return report


def gamma_sweep(spec: ScenarioSpec, gammas: Sequence[float], M: int, config: Optional[EstimatorConfig] = None,
                workers: int = 1) -> SweepTable:
    """One run per weight exponent; all other settings fixed."""
    if not len(gammas):
        raise ScenarioError('The gamma sweep needs at least one value')
    values = tuple(float(g) for g in gammas)
    reports = tuple(run(replace(spec, gamma=g), M, config=config, workers=workers) for g in values)
    return SweepTable('gamma', values, reports)


def signal_sweep(spec: ScenarioSpec, v_values: Sequence[float], M: int, config: Optional[EstimatorConfig] = None,
                 workers: int = 1) -> SweepTable:
    """
    One run per signal level ``v``: the first coefficient is ``v * 1e-2`` and all others are zero.

    Thresholds map each detection level (99%, 95%) to the smallest ``||beta0||_2`` of the sweep whose mean
    percentage of detected true non-zeros reaches it, or None.
    """
    if not len(v_values):
        raise ScenarioError('The signal sweep needs at least one value')
    if spec.model.grouped:
        raise ScenarioError('The signal sweep is defined for ungrouped structures')

    values = tuple(sorted(float(v) for v in v_values))
    reports = tuple(
        run(replace(spec, beta=(v * 1e-2,), p0=1), M, config=config, workers=workers) for v in values)

    thresholds = {}
    for level in THRESHOLDS:
        reached = [v for v, r in zip(values, reports) if not r.degenerate and r.pct_true >= level]
        thresholds[level] = reached[0] * 1e-2 if reached else None

    return SweepTable('signal', values, reports, thresholds)
