"""
Plug-in asymptotic covariance of the active-group coefficients.

``cov = (sigma2_g / mu_h^2) * U_{n,A}^-1 / n`` with the moments estimated on the fitted residuals and
``U_{n,A}`` the Gram matrix of the active columns. A fitted intercept joins the Gram matrix and only the
active block of its inverse is kept. Selection randomness is ignored.
"""
import logging

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.stats

from expectile_group_lasso import loss
from expectile_group_lasso.design import ActiveSet, GroupedDesign
from expectile_group_lasso.solver import ILL_CONDITIONED_EIGEN, FitResult

logger = logging.getLogger(__name__)


class EmptyActiveSetError(ValueError):
    pass


class RankDeficientError(ValueError):
    def __init__(self, message, min_eigen):
        super().__init__(message)
        self.min_eigen = min_eigen


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    sigma2_over_mu2: float
    cov: np.ndarray
    active: ActiveSet
    columns: np.ndarray
    moments: loss.LossMoments
    n: int

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0, None))

    def confidence_intervals(self, beta, level: float = 0.95) -> np.ndarray:
        """
        Normal intervals ``beta_k -/+ z * se_k`` for the active coefficients.

        :param beta: Full coefficient vector (length ``r``) or the active part (length ``r0``).
        :return: ``r0 x 2`` array of lower and upper bounds.
        """
        if not 0 < level < 1:
            raise ValueError('level must lie in (0, 1), got {}'.format(level))
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.size != self.columns.size:
            beta = beta[self.columns]
        z = scipy.stats.norm.ppf(0.5 + level / 2)
        half = z * self.standard_errors
        return np.column_stack([beta - half, beta + half])

    def contrast_variance(self, u) -> float:
        """Variance of ``u' beta_A`` for a contrast over the active coefficients."""
        u = np.asarray(u, dtype=float).ravel()
        if u.size != self.columns.size:
            raise ValueError('Contrast has length {}, expected {}'.format(u.size, self.columns.size))
        return float(u @ self.cov @ u)


def sandwich_covariance(design: GroupedDesign, y, fit: FitResult, spec: loss.LossSpec,
                        floor: float = loss.DEFAULT_H_FLOOR) -> CovarianceEstimate:
    """
    Residual plug-in sandwich covariance restricted to the active groups of ``fit``.

    :raises EmptyActiveSetError: if no group is active.
    :raises RankDeficientError: if the active Gram matrix is not positive definite.
    """
    if not len(fit.active):
        raise EmptyActiveSetError('No active group: covariance is undefined')

    y = np.asarray(y, dtype=float).ravel()
    intercept = fit.intercept or 0.0
    residuals = y - design.X @ fit.beta.beta - intercept
    moments = loss.empirical_moments(residuals, spec, floor=floor)

    if not moments.mu_h > 0:
        raise RankDeficientError('Mean curvature of the loss is zero', 0.0)

    columns = design.groups.columns(fit.active)
    X_active = design.X[:, columns]
    offset = 0
    if fit.intercept is not None:
        X_active = np.column_stack([np.ones(design.n), X_active])
        offset = 1
    gram = X_active.T @ X_active / design.n
    gram = (gram + gram.T) / 2

    eigenvalues = scipy.linalg.eigvalsh(gram)
    if eigenvalues[0] <= ILL_CONDITIONED_EIGEN * max(eigenvalues[-1], 1.0):
        raise RankDeficientError(
            'Active Gram matrix is not positive definite (min eigenvalue {:.3g})'.format(eigenvalues[0]),
            float(eigenvalues[0]))

    try:
        factor = scipy.linalg.cho_factor(gram)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise RankDeficientError('Cholesky factorisation of the active Gram matrix failed', float(eigenvalues[0]))

    inverse = scipy.linalg.cho_solve(factor, np.eye(gram.shape[0]))[offset:, offset:]
    inverse = (inverse + inverse.T) / 2
    cov = moments.ratio * inverse / design.n

    logger.debug('Sandwich covariance over %d active columns, sigma2/mu2 = %.6g', columns.size, moments.ratio)

    return CovarianceEstimate(
        sigma2_over_mu2=moments.ratio,
        cov=cov,
        active=fit.active,
        columns=columns,
        moments=moments,
        n=design.n,
    )


def try_sandwich_covariance(design: GroupedDesign, y, fit: FitResult,
                            spec: loss.LossSpec) -> Optional[CovarianceEstimate]:
    """:func:`sandwich_covariance`, or None when the active set is empty or rank deficient."""
    try:
        return sandwich_covariance(design, y, fit, spec)
    except EmptyActiveSetError:
        logger.info('Empty active set: no standard errors')
    except RankDeficientError as error:
        logger.warning('No standard errors: %s', error)
    return None
