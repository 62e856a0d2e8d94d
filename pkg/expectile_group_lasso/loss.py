"""
Asymmetric L_q loss family.

``rho(u) = |tau - 1{u < 0}| * |u|^q`` with ``q > 1``; ``q = 2`` is the expectile loss. The derivative kernels
follow the convention ``psi(t) = rho(eps - t)``: ``g(eps) = psi'(0)`` and ``h(eps) = psi''(0)``.

At ``eps = 0`` the ``eps >= 0`` branch is taken. ``rho`` and ``g`` are continuous there so the choice only
matters for ``h`` when ``q < 2``.
"""
import logging

from dataclasses import dataclass
from typing import Union

import numpy as np

DEFAULT_H_FLOOR = 1e-6

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class LossSpecError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    """Asymmetry index ``tau`` in (0, 1) and exponent ``q > 1``."""
    tau: float
    q: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.tau) or not 0 < self.tau < 1:
            raise LossSpecError('tau must lie in the open interval (0, 1), got {}'.format(self.tau))
        if not np.isfinite(self.q) or self.q <= 1:
            raise LossSpecError('q must be greater than 1, got {}'.format(self.q))

    @property
    def is_expectile(self) -> bool:
        return self.q == 2


@dataclass(frozen=True)
class LossMoments:
    """Plug-in estimates of ``mu_h = E[h(eps)]`` and ``sigma2_g = Var[g(eps)]``."""
    mu_h: float
    sigma2_g: float

    @property
    def ratio(self) -> float:
        """``sigma2_g / mu_h^2``, the scalar factor of the asymptotic covariance."""
        return self.sigma2_g / self.mu_h ** 2


def _checked(x, name) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError('{} must be finite'.format(name))
    return arr


def _unwrap(arr: np.ndarray) -> ArrayLike:
    return float(arr) if arr.ndim == 0 else arr


def _asymmetry(eps: np.ndarray, spec: LossSpec) -> np.ndarray:
    return np.where(eps < 0, 1.0 - spec.tau, spec.tau)


def rho(u: ArrayLike, spec: LossSpec) -> ArrayLike:
    """
    Evaluate the asymmetric L_q loss elementwise.

    :param u: Residual(s).
    :type u: float or numpy.ndarray

    :param spec: Loss definition.
    :type spec: LossSpec

    :return: ``|tau - 1{u<0}| * |u|^q``, same shape as ``u``.
    """
    u = _checked(u, 'u')
    return _unwrap(_asymmetry(u, spec) * np.abs(u) ** spec.q)


def g(eps: ArrayLike, spec: LossSpec) -> ArrayLike:
    """
    First derivative of ``t -> rho(eps - t)`` at ``t = 0``.

    This is minus the derivative of ``rho`` itself, so the gradient of ``sum rho(y_i - x_i'b)`` in ``b`` is
    ``sum g(eps_i) x_i``.
    """
    eps = _checked(eps, 'eps')
    return _unwrap(-spec.q * _asymmetry(eps, spec) * np.sign(eps) * np.abs(eps) ** (spec.q - 1))


def h(eps: ArrayLike, spec: LossSpec, floor: float = DEFAULT_H_FLOOR) -> ArrayLike:
    """
    Second derivative of ``t -> rho(eps - t)`` at ``t = 0``.

    ``|eps|`` is clamped below by ``floor`` because ``|eps|^(q-2)`` diverges at zero for ``q < 2``. For
    ``q = 2`` the floor has no effect.
    """
    if not floor > 0:
        raise ValueError('floor must be positive, got {}'.format(floor))
    eps = _checked(eps, 'eps')
    scale = spec.q * (spec.q - 1) * _asymmetry(eps, spec)
    if spec.q == 2:
        return _unwrap(scale)
    return _unwrap(scale * np.maximum(np.abs(eps), floor) ** (spec.q - 2))


def _sample(values, minimum: int, name: str) -> np.ndarray:
    arr = _checked(values, name).ravel()
    if arr.size < minimum:
        raise DegenerateSampleError('{} needs at least {} elements, got {}'.format(name, minimum, arr.size))
    return arr


def estimate_tau(sample, standardize: bool = True) -> float:
    """
    Estimate the asymmetry index making 0 the tau-th expectile of ``sample``.

    ``tau = E[e 1{e<0}] / E[e (1{e<0} - 1{e>0})]`` evaluated on empirical means.

    :param sample: Observations, at least two.
    :type sample: array-like

    :param standardize: Standardize to zero mean and unit variance first (the normalized-observation form).
                        A centered sample has equal positive and negative mass, so the standardized estimate is
                        1/2 up to rounding; ``standardize=False`` evaluates the ratio on the raw scale.
    :type standardize: bool

    :return: Estimate in (0, 1).
    :rtype: float
    """
    y = _sample(sample, 2, 'sample')

    if standardize:
        scale = y.std()
        if scale == 0:
            raise DegenerateSampleError('Cannot estimate tau from a constant sample')
        y = (y - y.mean()) / scale

    negative = np.mean(np.where(y < 0, y, 0.0))
    denominator = np.mean(y * ((y < 0).astype(float) - (y > 0).astype(float)))

    if denominator == 0 or negative == 0:
        raise DegenerateSampleError('Degenerate sample: tau ratio has no interior solution')

    tau = float(negative / denominator)
    if not 0 < tau < 1:
        raise DegenerateSampleError('Degenerate sample: tau estimate {} outside (0, 1)'.format(tau))

    return tau


def empirical_moments(residuals, spec: LossSpec, floor: float = DEFAULT_H_FLOOR) -> LossMoments:
    """
    Sample mean of ``h`` and sample variance (n-1 divisor) of ``g`` over ``residuals``.
    """
    eps = _sample(residuals, 2, 'residuals')

    mu_h = float(np.mean(h(eps, spec, floor=floor)))
    sigma2_g = float(np.var(g(eps, spec), ddof=1))

    return LossMoments(mu_h=mu_h, sigma2_g=sigma2_g)


def expansion_ratio(sample, t: float, spec: LossSpec) -> float:
    """Mean of ``rho(eps - t) - rho(eps)`` over ``sample`` divided by ``t^2 / 2``."""
    if t == 0:
        raise ValueError('t must be non-zero')
    eps = _sample(sample, 1, 'sample')
    return float(np.mean(rho(eps - t, spec) - rho(eps, spec)) / (t * t / 2))
