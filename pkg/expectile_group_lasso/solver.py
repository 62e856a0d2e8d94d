"""
L_q-quantile and adaptive group LASSO estimation.

The penalized objective is

    Q_n(b) = n^-1 sum_i rho(y_i - x_i'b) + lam * sum_j w_j ||b_j||_2

and is minimised by accelerated proximal gradient with backtracking on the smooth part. Groups with an
infinite weight are pinned to zero. The unpenalized pilot is computed by damped Newton steps, which for the
expectile loss (q = 2) are exactly iteratively reweighted least squares steps.

KKT sign convention: ``loss.g(eps) = d/dt rho(eps - t)`` at 0, so the gradient of the smooth part in ``b`` is
``+n^-1 sum_i g(eps_i) x_i``. The score reported here is its negation, ``s_j = -n^-1 sum_i g(eps_i) X_ij``,
and optimality reads ``s_j = lam * w_j * b_j / ||b_j||`` on active groups and ``||s_j|| <= lam * w_j`` on zero
groups.
"""
import logging
import math

from dataclasses import dataclass, fields
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from expectile_group_lasso import loss
from expectile_group_lasso.design import ActiveSet, GroupedCoefficients, GroupedDesign, active_set

ILL_CONDITIONED_EIGEN = 1e-12
SCREEN_SLACK = 1e-12
ARMIJO = 1e-4
STEP_EXPAND = 1.1
MAX_STALLS = 50

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


class IllConditionedError(SolverError):
    def __init__(self, message, min_eigen):
        super().__init__(message)
        self.min_eigen = min_eigen


class StepSizeUnderflowError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """
    Tuning scalar ``lam``, weight exponent ``gamma`` and per-group adaptive weights.

    A weight of ``+inf`` pins its group to zero.
    """
    lam: float
    gamma: float
    weights: np.ndarray
    cap_applied: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError('lambda must be finite and non-negative, got {}'.format(self.lam))
        if not self.gamma > 0:
            raise ValueError('gamma must be positive, got {}'.format(self.gamma))
        weights = np.array(self.weights, dtype=float).ravel()
        if weights.size == 0 or np.any(np.isnan(weights)) or np.any(weights <= 0):
            raise ValueError('weights must be positive (or +inf to pin a group)')
        weights.flags.writeable = False
        object.__setattr__(self, 'weights', weights)

    @property
    def p(self) -> int:
        return self.weights.size

    @property
    def pinned(self) -> np.ndarray:
        return np.isinf(self.weights)


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 100000
    tol_obj: float = 1e-10
    tol_kkt: float = 1e-6
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    h_floor: float = loss.DEFAULT_H_FLOOR

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ValueError('max_iter must be a positive integer')
        for name in ('tol_obj', 'tol_kkt', 'step_init', 'h_floor'):
            if not getattr(self, name) > 0:
                raise ValueError('{} must be positive'.format(name))
        if not 0 < self.backtrack_factor < 1:
            raise ValueError('backtrack_factor must lie in (0, 1)')

    @classmethod
    def from_config(cls, config: Optional[dict]) -> 'SolverOptions':
        """Build options from a configuration mapping, ignoring unknown keys."""
        config = config or {}
        known = {f.name for f in fields(cls)}
        unknown = set(config) - known
        if unknown:
            logger.warning('Ignoring unknown solver options: %s', ', '.join(sorted(unknown)))
        return cls(**{k: v for k, v in config.items() if k in known})


@dataclass(frozen=True, eq=False)
class FitResult:
    beta: GroupedCoefficients
    active: ActiveSet
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool
    intercept: Optional[float] = None
    history: Tuple[float, ...] = ()


class _Problem:
    """Flattened problem: matrix, response, coefficient blocks and their penalty weights."""

    def __init__(self, X: np.ndarray, y: np.ndarray, spec: loss.LossSpec, blocks: List[slice],
                 weights: np.ndarray, lam: float, h_floor: float = loss.DEFAULT_H_FLOOR):
        self.X = X
        self.y = y
        self.n = X.shape[0]
        self.spec = spec
        self.blocks = blocks
        # weight 0 marks an unpenalized block, +inf a pinned one
        self.weights = weights
        self.lam = lam
        self.h_floor = h_floor

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        return self.y - self.X @ theta

    def smooth(self, theta: np.ndarray) -> float:
        return float(np.sum(loss.rho(self.residuals(theta), self.spec))) / self.n

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.X.T @ loss.g(self.residuals(theta), self.spec) / self.n

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        curvature = loss.h(self.residuals(theta), self.spec, floor=self.h_floor)
        return self.X.T @ (curvature[:, None] * self.X) / self.n

    def penalty(self, theta: np.ndarray) -> float:
        total = 0.0
        for block, weight in zip(self.blocks, self.weights):
            norm = np.linalg.norm(theta[block])
            if np.isinf(weight):
                if norm > 0:
                    return math.inf
            elif weight > 0:
                total += weight * norm
        return self.lam * total

    def objective(self, theta: np.ndarray) -> float:
        return self.smooth(theta) + self.penalty(theta)

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        out = v.copy()
        for block, weight in zip(self.blocks, self.weights):
            if np.isinf(weight):
                out[block] = 0.0
            elif weight > 0:
                out[block] = group_prox(v[block], step * self.lam * weight)
        return out

    def kkt(self, theta: np.ndarray) -> float:
        score = -self.gradient(theta)
        worst = 0.0
        for block, weight in zip(self.blocks, self.weights):
            if np.isinf(weight):
                continue
            s, b = score[block], theta[block]
            norm = np.linalg.norm(b)
            if weight == 0:
                violation = np.linalg.norm(s)
            elif norm > 0:
                violation = np.linalg.norm(s - self.lam * weight * b / norm)
            else:
                violation = max(0.0, np.linalg.norm(s) - self.lam * weight)
            worst = max(worst, float(violation))
        return worst

    def at_origin_optimal(self, theta: np.ndarray, tol: float) -> bool:
        """Whether ``theta`` (zero on every penalized block) satisfies the subgradient bound everywhere."""
        score = -self.gradient(theta)
        for block, weight in zip(self.blocks, self.weights):
            norm = np.linalg.norm(score[block])
            if np.isinf(weight):
                continue
            if weight == 0:
                if norm > tol:
                    return False
            elif norm > self.lam * weight * (1 + SCREEN_SLACK):
                return False
        return True


def _vector(beta, r: int) -> np.ndarray:
    if isinstance(beta, GroupedCoefficients):
        beta = beta.beta
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape != (r,):
        raise DimensionError('Coefficient vector has length {}, expected {}'.format(beta.size, r))
    return beta


def _response(design: GroupedDesign, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != (design.n,):
        raise DimensionError('Response has length {}, design has {} rows'.format(y.size, design.n))
    if not np.all(np.isfinite(y)):
        raise loss.DomainError('Response must be finite')
    return y


def _problem(design: GroupedDesign, y, spec: loss.LossSpec, intercept: bool = False,
             pen: Optional[PenaltySpec] = None, h_floor: float = loss.DEFAULT_H_FLOOR) -> _Problem:
    y = _response(design, y)
    X = design.X
    blocks = list(design.groups.slices)

    if pen is None:
        weights, lam = np.zeros(design.p), 0.0
    else:
        if pen.p != design.p:
            raise DimensionError('Penalty has {} weights, design has {} groups'.format(pen.p, design.p))
        weights, lam = np.array(pen.weights), pen.lam

    if intercept:
        X = np.column_stack([X, np.ones(design.n)])
        blocks.append(slice(design.r, design.r + 1))
        weights = np.append(weights, 0.0)

    return _Problem(X, y, spec, blocks, weights, lam, h_floor=h_floor)


def _theta(beta: np.ndarray, intercept: Optional[float]) -> np.ndarray:
    return beta if intercept is None else np.append(beta, intercept)


def _result(problem: _Problem, design: GroupedDesign, theta: np.ndarray, intercept: bool, iterations: int,
            converged: bool, history: List[float]) -> FitResult:
    beta = GroupedCoefficients(theta[:design.r], design.groups)
    return FitResult(
        beta=beta,
        active=active_set(beta, 0.0),
        objective=problem.objective(theta),
        iterations=iterations,
        kkt_residual=problem.kkt(theta),
        converged=converged,
        intercept=float(theta[design.r]) if intercept else None,
        history=tuple(history),
    )


def objective_unpenalized(design: GroupedDesign, y, beta, spec: loss.LossSpec, intercept: float = 0.0) -> float:
    """Return ``G_n(beta) = sum_i rho(y_i - x_i'beta - intercept)``."""
    y = _response(design, y)
    beta = _vector(beta, design.r)
    return float(np.sum(loss.rho(y - design.X @ beta - intercept, spec)))


def objective_penalized(design: GroupedDesign, y, beta, spec: loss.LossSpec, pen: PenaltySpec,
                        intercept: float = 0.0) -> float:
    """Return ``n^-1 G_n(beta) + lam * sum_j w_j ||beta_j||``; the ``n^-1`` applies to the loss only."""
    if pen.p != design.p:
        raise DimensionError('Penalty has {} weights, design has {} groups'.format(pen.p, design.p))
    beta = _vector(beta, design.r)
    smooth = objective_unpenalized(design, y, beta, spec, intercept=intercept) / design.n

    penalty = 0.0
    for norm, weight in zip(design.groups.norms(beta), pen.weights):
        if np.isinf(weight):
            if norm > 0:
                return math.inf
            continue
        penalty += weight * norm

    return smooth + pen.lam * penalty


def loss_gradient(design: GroupedDesign, y, beta, spec: loss.LossSpec, intercept: Optional[float] = None):
    """Gradient of ``n^-1 G_n`` in ``beta`` (and in the intercept when one is given)."""
    problem = _problem(design, y, spec, intercept=intercept is not None)
    return problem.gradient(_theta(_vector(beta, design.r), intercept))


def kkt_residual(design: GroupedDesign, y, beta, spec: loss.LossSpec, pen: PenaltySpec,
                 intercept: Optional[float] = None) -> float:
    """
    Largest violation of the optimality conditions over groups.

    Active groups contribute ``||s_j - lam * w_j * b_j / ||b_j||||``, zero groups
    ``max(0, ||s_j|| - lam * w_j)``, with the score ``s_j = -n^-1 sum_i g(eps_i) X_ij``. Pinned groups are
    constraints and contribute nothing; an intercept contributes ``|s_0|``.
    """
    problem = _problem(design, y, spec, intercept=intercept is not None, pen=pen)
    return problem.kkt(_theta(_vector(beta, design.r), intercept))


def group_prox(v: np.ndarray, threshold: float) -> np.ndarray:
    """
    Proximal map of ``threshold * ||.||_2``: ``max(0, 1 - threshold / ||v||) * v``.

    Returns an exact zero vector when ``||v|| <= threshold``.
    """
    if threshold < 0:
        raise ValueError('threshold must be non-negative, got {}'.format(threshold))
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= threshold:
        return np.zeros_like(v)
    if threshold == 0:
        return v.copy()
    return (1 - threshold / norm) * v


def adaptive_weights(beta_tilde: GroupedCoefficients, gamma: float, cap: Optional[float] = None) -> np.ndarray:
    """
    Adaptive weights ``||beta_tilde_j||^-gamma``, optionally capped at ``cap``.

    A zero pilot block yields ``cap`` when a cap is given and ``+inf`` (group pinned to zero) otherwise.
    """
    if not gamma > 0:
        raise ValueError('gamma must be positive, got {}'.format(gamma))
    if cap is not None and not cap > 0:
        raise ValueError('cap must be positive, got {}'.format(cap))

    norms = beta_tilde.norms()
    with np.errstate(divide='ignore'):
        weights = np.where(norms > 0, norms, 0.0) ** (-float(gamma))

    if cap is not None:
        weights = np.minimum(weights, cap)

    return weights


def lambda_max(design: GroupedDesign, y, spec: loss.LossSpec, weights: np.ndarray, intercept: bool = False,
               opts: Optional[SolverOptions] = None) -> float:
    """
    Smallest ``lam`` for which the zero vector solves the penalized problem:
    ``max_j ||s_j(0)|| / w_j`` over groups with a finite weight.
    """
    weights = np.asarray(weights, dtype=float)
    opts = opts or SolverOptions()
    theta = _origin(design, y, spec, intercept, opts)
    problem = _problem(design, y, spec, intercept=intercept)
    score = -problem.gradient(theta)

    ratios = [np.linalg.norm(score[s]) / w for s, w in zip(design.groups.slices, weights) if np.isfinite(w)]
    return float(max(ratios)) if ratios else 0.0


def prox_gradient_step(design: GroupedDesign, y, beta, spec: loss.LossSpec, pen: PenaltySpec, step: float,
                       intercept: Optional[float] = None):
    """One unaccelerated proximal gradient step of length ``step``; returns the new coefficient vector."""
    problem = _problem(design, y, spec, intercept=intercept is not None, pen=pen)
    theta = _theta(_vector(beta, design.r), intercept)
    return problem.prox(theta - step * problem.gradient(theta), step)


def _check_conditioning(problem: _Problem):
    U = problem.X.T @ problem.X / problem.n
    eigenvalues = scipy.linalg.eigvalsh((U + U.T) / 2)
    min_eigen, max_eigen = float(eigenvalues[0]), float(eigenvalues[-1])
    if min_eigen <= ILL_CONDITIONED_EIGEN * max(1.0, max_eigen):
        raise IllConditionedError(
            'Gram matrix is singular or ill-conditioned (min eigenvalue {:.3g})'.format(min_eigen), min_eigen)


def _newton(problem: _Problem, theta: np.ndarray, opts: SolverOptions) -> Tuple[np.ndarray, int, bool, List[float]]:
    """Damped Newton iterations with Armijo backtracking; gradient steps when Newton fails to descend."""
    history = [problem.smooth(theta)]
    lipschitz_step = opts.step_init * problem.n / max(np.linalg.norm(problem.X, 2) ** 2, 1e-300)

    for iteration in range(int(opts.max_iter)):
        grad = problem.gradient(theta)
        if np.linalg.norm(grad) <= opts.tol_kkt:
            return theta, iteration, True, history

        try:
            direction = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(problem.hessian(theta)), grad)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            direction = -grad

        candidates = [(direction, 1.0)]
        if grad @ direction >= 0 or not np.all(np.isfinite(direction)):
            candidates = []
        candidates.append((-grad, lipschitz_step))

        current = history[-1]
        accepted = False
        for d, alpha in candidates:
            slope = float(grad @ d)
            while alpha > 1e-16:
                trial = theta + alpha * d
                value = problem.smooth(trial)
                if value <= current + ARMIJO * alpha * slope:
                    theta, accepted = trial, True
                    history.append(value)
                    break
                alpha *= opts.backtrack_factor
            if accepted:
                break

        if not accepted:
            # no representable decrease left
            converged = np.linalg.norm(problem.gradient(theta)) <= opts.tol_kkt
            return theta, iteration + 1, converged, history

        logger.debug('Newton iteration %d: objective %.12g', iteration, history[-1])

    grad = problem.gradient(theta)
    return theta, int(opts.max_iter), bool(np.linalg.norm(grad) <= opts.tol_kkt), history


def _origin(design: GroupedDesign, y, spec: loss.LossSpec, intercept: bool, opts: SolverOptions) -> np.ndarray:
    """Zero coefficients, with the intercept-only fit appended when an intercept is used."""
    if not intercept:
        return np.zeros(design.r)
    y = _response(design, y)
    ones = _Problem(np.ones((design.n, 1)), y, spec, [slice(0, 1)], np.zeros(1), 0.0, h_floor=opts.h_floor)
    start = np.array([float(np.mean(y))])
    b0, _, _, _ = _newton(ones, start, opts)
    return np.append(np.zeros(design.r), b0)


def fit_unpenalized(design: GroupedDesign, y, spec: loss.LossSpec, opts: Optional[SolverOptions] = None,
                    intercept: bool = False) -> FitResult:
    """
    Unpenalized L_q-quantile estimator, the minimiser of ``G_n``.

    Starts from least squares and runs damped Newton steps; for ``q = 2`` each full step is one iteratively
    reweighted least squares solve with weights ``tau`` / ``1 - tau`` by residual sign.

    :raises IllConditionedError: if the Gram matrix is (numerically) singular.
    """
    opts = opts or SolverOptions()
    problem = _problem(design, y, spec, intercept=intercept, h_floor=opts.h_floor)

    if design.n < problem.m:
        logger.warning('Fewer observations (%d) than coefficients (%d): the pilot estimator is not unique',
                       design.n, problem.m)
    _check_conditioning(problem)

    try:
        start = scipy.linalg.lstsq(problem.X, problem.y)[0]
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as error:
        raise IllConditionedError('Least squares start failed: {}'.format(error), float('nan'))

    theta, iterations, converged, history = _newton(problem, start, opts)

    if not converged:
        logger.warning('Unpenalized fit did not converge after %d iterations', iterations)

    return _result(problem, design, theta, intercept, iterations, converged, history)


def fit_penalized(design: GroupedDesign, y, spec: loss.LossSpec, pen: PenaltySpec,
                  opts: Optional[SolverOptions] = None, warm_start=None, intercept: bool = False) -> FitResult:
    """
    Adaptive group LASSO estimator: minimise ``Q_n`` by accelerated proximal gradient.

    Iterates until the relative objective decrease is at most ``tol_obj`` and the KKT residual is at most
    ``tol_kkt``. Accelerated steps that increase the objective restart the momentum, so accepted iterates
    never increase ``Q_n``.

    :param warm_start: Initial coefficients (vector or GroupedCoefficients); zero when omitted.

    :raises StepSizeUnderflowError: if backtracking drives the step size to zero.
    """
    opts = opts or SolverOptions()
    problem = _problem(design, y, spec, intercept=intercept, pen=pen, h_floor=opts.h_floor)

    origin = _origin(design, y, spec, intercept, opts)
    if problem.at_origin_optimal(origin, opts.tol_kkt):
        logger.debug('lambda %.6g is above lambda_max: zero solution', pen.lam)
        return _result(problem, design, origin, intercept, 0, True, [problem.objective(origin)])

    theta = origin.copy()
    if warm_start is not None:
        theta[:design.r] = _vector(warm_start, design.r)
    theta = problem.prox(theta, 0.0)

    spectral = max(np.linalg.norm(problem.X, 2) ** 2 / problem.n, 1e-300)
    if spec.is_expectile:
        step = opts.step_init / (2 * max(spec.tau, 1 - spec.tau) * spectral)
        expand = 1.0
    else:
        step = opts.step_init / spectral
        expand = STEP_EXPAND
    min_step = step * 1e-20

    value = problem.objective(theta)
    history = [value]
    y_point, momentum = theta.copy(), 1.0
    converged, stalls, iteration = False, 0, 0

    for iteration in range(1, int(opts.max_iter) + 1):
        grad = problem.gradient(y_point)
        smooth_y = problem.smooth(y_point)
        step *= expand

        while True:
            candidate = problem.prox(y_point - step * grad, step)
            delta = candidate - y_point
            bound = smooth_y + grad @ delta + delta @ delta / (2 * step)
            if problem.smooth(candidate) <= bound + 1e-14 * max(1.0, abs(smooth_y)):
                break
            step *= opts.backtrack_factor
            if step < min_step:
                raise StepSizeUnderflowError('Step size underflow after {} iterations'.format(iteration))

        candidate_value = problem.objective(candidate)

        if candidate_value > value:
            if np.array_equal(y_point, theta):
                stalls += 1
                if problem.kkt(theta) <= opts.tol_kkt:
                    converged = True
                    break
                if stalls >= MAX_STALLS:
                    break
            # restart momentum from the last accepted iterate
            y_point, momentum = theta.copy(), 1.0
            continue

        momentum_next = (1 + math.sqrt(1 + 4 * momentum * momentum)) / 2
        y_point = candidate + ((momentum - 1) / momentum_next) * (candidate - theta)
        previous, theta, momentum = value, candidate, momentum_next
        value = candidate_value
        history.append(value)

        if abs(previous - value) <= opts.tol_obj * max(1.0, abs(previous)):
            if problem.kkt(theta) <= opts.tol_kkt:
                converged = True
                break

        if iteration % 1000 == 0:
            logger.debug('Proximal gradient iteration %d: objective %.12g, step %.3g', iteration, value, step)

    result = _result(problem, design, theta, intercept, iteration, converged, history)
    if not converged:
        logger.warning('Penalized fit did not converge after %d iterations (KKT residual %.3g)',
                       iteration, result.kkt_residual)
    return result


def pilot_and_weights(design: GroupedDesign, y, spec: loss.LossSpec, gamma: float, cap: Optional[float] = None,
                      opts: Optional[SolverOptions] = None,
                      intercept: bool = False) -> Tuple[FitResult, np.ndarray]:
    """Unpenalized pilot fit followed by its adaptive weights."""
    pilot = fit_unpenalized(design, y, spec, opts=opts, intercept=intercept)
    return pilot, adaptive_weights(pilot.beta, gamma, cap=cap)


def default_cap(n: int) -> float:
    """The ``n^(1/2)`` weight cap."""
    return math.sqrt(n)


__all__ = (
    'DimensionError',
    'FitResult',
    'IllConditionedError',
    'PenaltySpec',
    'SolverError',
    'SolverOptions',
    'StepSizeUnderflowError',
    'adaptive_weights',
    'default_cap',
    'fit_penalized',
    'fit_unpenalized',
    'group_prox',
    'kkt_residual',
    'lambda_max',
    'loss_gradient',
    'objective_penalized',
    'objective_unpenalized',
    'pilot_and_weights',
    'prox_gradient_step',
)
