"""
Data pipelines behind the ``fit`` and ``evaluate`` commands.
"""
import logging

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from expectile_group_lasso import loss
from expectile_group_lasso.dataset import Dataset, ModelReport, model_matrix, split_index
from expectile_group_lasso.design import AssumptionReport, Standardizer, assumption_report, standardize
from expectile_group_lasso.inference import CovarianceEstimate, try_sandwich_covariance
from expectile_group_lasso.solver import (
    FitResult, PenaltySpec, SolverOptions, default_cap, fit_penalized, pilot_and_weights)
from expectile_group_lasso.tuning import LambdaSchedule

TAU_SCALES = ('standardized', 'raw')

REPORT_COLUMNS = ('record', 'group', 'name', 'value', 'se', 'active')

EVAL_COLUMNS = ('model', 'split', 'n', 'mad', 'variance')

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FitReport:
    dataset: Dataset
    spec: loss.LossSpec
    tau_source: str
    gamma: float
    lam: float
    schedule: LambdaSchedule
    pilot: FitResult
    fit: FitResult
    beta: np.ndarray
    intercept: float
    standard_errors: Optional[np.ndarray]
    covariance: Optional[CovarianceEstimate]
    standardizer: Optional[Standardizer]
    assumptions: AssumptionReport
    cap: Optional[float] = None

    kind = 'fit'

    @property
    def converged(self) -> bool:
        return self.fit.converged

    def group_norms(self) -> np.ndarray:
        return self.dataset.design.groups.norms(self.beta)

    def meta(self) -> Dict[str, object]:
        return {
            'response': self.dataset.response,
            'n': self.dataset.n,
            'tau': self.spec.tau,
            'tau_source': self.tau_source,
            'q': self.spec.q,
            'gamma': self.gamma,
            'lambda': self.lam,
            'lambda_rule': self.schedule.describe(),
            'weight_cap': '' if self.cap is None else self.cap,
            'standardize': self.standardizer is not None,
            'intercept': self.fit.intercept is not None,
            'lags': ','.join('{}:{}'.format(c, k) for c, k in self.dataset.lags),
            'active_groups': len(self.fit.active),
            'objective': self.fit.objective,
            'iterations': self.fit.iterations,
            'kkt_residual': self.fit.kkt_residual,
            'converged': self.fit.converged,
        }

    def rows(self) -> List[dict]:
        design = self.dataset.design
        groups = design.groups
        active = self.fit.active
        se = self.standard_errors if self.standard_errors is not None else np.full(design.r, np.nan)

        rows = [{'record': 'meta', 'group': '', 'name': k, 'value': v, 'se': np.nan, 'active': ''}
                for k, v in self.meta().items()]
        rows.append({'record': 'intercept', 'group': '', 'name': 'intercept', 'value': self.intercept,
                     'se': np.nan, 'active': ''})

        for j, (block, norm) in enumerate(zip(groups.slices, self.group_norms())):
            label = groups.label(j)
            rows.append({'record': 'group_norm', 'group': label, 'name': label, 'value': norm, 'se': np.nan,
                         'active': j in active})
            for k in range(block.start, block.stop):
                rows.append({'record': 'coefficient', 'group': label, 'name': design.column_label(k),
                             'value': self.beta[k], 'se': se[k], 'active': j in active})
        return rows

    def tables(self) -> Dict[str, pd.DataFrame]:
        return {'fit': pd.DataFrame(self.rows(), columns=REPORT_COLUMNS)}

    def context(self) -> dict:
        design = self.dataset.design
        return dict(
            self.meta(),
            active=[design.groups.label(j) for j in self.fit.active],
            groups=[(design.groups.label(j), norm, j in self.fit.active) for j, norm in enumerate(self.group_norms())],
            assumptions=self.assumptions.to_dict(),
            pilot_converged=self.pilot.converged,
        )


@dataclass(frozen=True)
class EvalMetrics:
    """Prediction accuracy of one model on one split: mean absolute residual and residual variance."""
    model: str
    split: str
    n: int
    mad: float
    variance: float

    def to_dict(self) -> dict:
        return {'model': self.model, 'split': self.split, 'n': self.n, 'mad': self.mad, 'variance': self.variance}


@dataclass(frozen=True)
class Evaluation:
    metrics: Sequence[EvalMetrics]

    kind = 'evaluate'

    def tables(self) -> Dict[str, pd.DataFrame]:
        return {'evaluate': pd.DataFrame([m.to_dict() for m in self.metrics], columns=EVAL_COLUMNS)}

    def context(self) -> dict:
        return {'metrics': [m.to_dict() for m in self.metrics]}


def resolve_tau(y: np.ndarray, tau: Union[str, float], tau_scale: str = 'standardized'):
    """Return ``(tau, source)``; ``auto`` estimates the index on the response."""
    if isinstance(tau, str) and tau.strip().lower() == 'auto':
        if tau_scale not in TAU_SCALES:
            raise ValueError('tau_scale must be one of {}, got {!r}'.format(', '.join(TAU_SCALES), tau_scale))
        estimate = loss.estimate_tau(y, standardize=tau_scale == 'standardized')
        logger.info('Estimated tau=%.4f on the %s response', estimate, tau_scale)
        return estimate, 'auto'
    return float(tau), 'fixed'


def fit_dataset(dataset: Dataset, tau: Union[str, float] = 'auto', q: float = 2.0, gamma: float = 1.0,
                lam: Union[str, float] = 'schedule', cap_weights: bool = False, standardize_columns: bool = True,
                intercept: bool = True, tau_scale: str = 'standardized',
                opts: Optional[SolverOptions] = None) -> FitReport:
    """
    Pilot fit, adaptive weights, penalized fit and plug-in standard errors on a dataset.

    Coefficients and standard errors are reported on the raw column scale.
    """
    opts = opts or SolverOptions()
    y = dataset.y
    tau_value, tau_source = resolve_tau(y, tau, tau_scale)
    spec = loss.LossSpec(tau_value, q)

    design, standardizer = standardize(dataset.design) if standardize_columns else (dataset.design, None)
    assumptions = assumption_report(design)
    if assumptions.degenerate:
        logger.warning('Gram matrix is degenerate (min eigenvalue %.3g)', assumptions.min_eigen)

    schedule = LambdaSchedule.parse(lam, gamma=gamma)
    lam_value = schedule(dataset.n)
    cap = default_cap(dataset.n) if cap_weights else None

    pilot, weights = pilot_and_weights(design, y, spec, gamma, cap=cap, opts=opts, intercept=intercept)
    logger.info('Pilot fit: %d iterations, converged=%s', pilot.iterations, pilot.converged)

    penalty = PenaltySpec(lam_value, gamma, weights, cap_applied=cap is not None)
    fit = fit_penalized(design, y, spec, penalty, opts=opts, warm_start=pilot.beta, intercept=intercept)
    logger.info('Penalized fit with lambda=%.6g: %d of %d groups active, KKT residual %.3g', lam_value,
                len(fit.active), design.p, fit.kkt_residual)

    covariance = try_sandwich_covariance(design, y, fit, spec)

    raw_intercept = fit.intercept or 0.0
    if standardizer is not None:
        beta, raw_intercept = standardizer.back_transform(fit.beta.beta, raw_intercept)
    else:
        beta = np.array(fit.beta.beta)

    standard_errors = None
    if covariance is not None:
        standard_errors = np.full(design.r, np.nan)
        scales = standardizer.scales[covariance.columns] if standardizer is not None else 1.0
        standard_errors[covariance.columns] = covariance.standard_errors / scales

    return FitReport(
        dataset=dataset,
        spec=spec,
        tau_source=tau_source,
        gamma=gamma,
        lam=lam_value,
        schedule=schedule,
        pilot=pilot,
        fit=fit,
        beta=beta,
        intercept=float(raw_intercept),
        standard_errors=standard_errors,
        covariance=covariance,
        standardizer=standardizer,
        assumptions=assumptions,
        cap=cap,
    )


def residual_metrics(residuals: np.ndarray, model: str, split: str) -> EvalMetrics:
    residuals = np.asarray(residuals, dtype=float)
    variance = float(np.var(residuals, ddof=1)) if residuals.size > 1 else 0.0
    return EvalMetrics(model=model, split=split, n=int(residuals.size), mad=float(np.mean(np.abs(residuals))),
                       variance=variance)


def evaluate(report: ModelReport, frame: pd.DataFrame, splits: Sequence[str] = ('all',),
             learning_rows: Optional[str] = None, test_rows: Optional[str] = None,
             response: Optional[str] = None) -> List[EvalMetrics]:
    """Residual MAD and variance of a fitted model on each requested split of ``frame``."""
    X, y = model_matrix(frame, report, response=response)
    residuals = y - X @ report.beta - report.intercept

    metrics = []
    for split in splits:
        index = split_index(split, y.size, learning_rows, test_rows)
        metrics.append(residual_metrics(residuals[index], report.path, split))
    return metrics
