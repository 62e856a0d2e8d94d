"""
Tuning-parameter schedules and rate-condition diagnostics.

Schedules are monomials ``lam_n = C * n^e``. A rate condition ``lam_n * n^k -> 0`` (or ``-> inf``) then holds
exactly when the net exponent ``e + k`` is negative (or positive); a zero net exponent is left undecided since
constants and logarithmic factors are not modelled.

Exponent arithmetic is done on exact decimal fractions so boundary cases such as ``e = -1/2`` are recognised.
"""
import logging
import re

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Tuple

logger = logging.getLogger(__name__)

FIXED_P = 'fixed_p'
GROWING_P = 'growing_p'
SCHEMES = (FIXED_P, GROWING_P)

PASS = 'pass'
FAIL = 'fail'
INDETERMINATE = 'indeterminate'

TO_ZERO = '0'
TO_INFINITY = 'inf'

SCHEDULE_KEYWORD = 'schedule'

_MONOMIAL = re.compile(
    r'^\s*(?:(?P<constant>[-+]?[0-9.eE+-]+)\s*\*\s*)?'
    r'n\s*\^\s*\(?\s*(?P<exponent>[-+]?[0-9.eE+-]+)\s*\)?\s*$')


class TuningError(ValueError):
    pass


def _exact(x) -> Fraction:
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class RegimeSpec:
    """
    Growth regime: ``p = O(n^c)``, signal floor ``n^-alpha``, weight exponent ``gamma`` and
    ``lam_n = n^lambda_exponent``.

    The optional rate sequences ``a_n = n^a_exponent`` (pilot rate), ``b_n = n^b_exponent`` (penalized rate) and
    ``p0 = O(n^p0_exponent)`` enable the additional checks of the ``c`` in ``[1/2, 1]`` theory.
    """
    c: float
    alpha: float
    gamma: float
    lambda_exponent: float
    a_exponent: Optional[float] = None
    b_exponent: Optional[float] = None
    p0_exponent: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.c <= 1:
            raise TuningError('c must lie in [0, 1], got {}'.format(self.c))
        if not self.gamma > 0:
            raise TuningError('gamma must be positive, got {}'.format(self.gamma))
        if self.p0_exponent is not None and not 0 <= self.p0_exponent <= self.c:
            raise TuningError('p0_exponent must lie in [0, c], got {}'.format(self.p0_exponent))

    @property
    def label(self) -> str:
        if self.c < 0.5:
            return 'moderate growth (c in [0, 1/2))'
        return 'fast growth (c in [1/2, 1])'


@dataclass(frozen=True)
class Condition:
    name: str
    setting: str
    statement: str
    limit: str
    exponent: float
    status: str

    @property
    def holds(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'setting': self.setting,
            'statement': self.statement,
            'limit': self.limit,
            'net_exponent': self.exponent,
            'status': self.status,
        }


@dataclass(frozen=True)
class ConditionReport:
    regime: RegimeSpec
    conditions: Tuple[Condition, ...]

    def __getitem__(self, name: str) -> Condition:
        for condition in self.conditions:
            if condition.name == name:
                return condition
        raise KeyError(name)

    def setting(self, setting: str) -> Tuple[Condition, ...]:
        return tuple(c for c in self.conditions if c.setting == setting)

    def holds(self, *settings: str) -> bool:
        """Whether every condition of the given settings (all when none given) passes."""
        return all(c.holds for c in self.conditions if not settings or c.setting in settings)

    def to_dict(self) -> dict:
        return {
            'regime': {
                'c': self.regime.c,
                'alpha': self.regime.alpha,
                'gamma': self.regime.gamma,
                'lambda_exponent': self.regime.lambda_exponent,
                'a_exponent': self.regime.a_exponent,
                'b_exponent': self.regime.b_exponent,
                'p0_exponent': self.regime.p0_exponent,
                'label': self.regime.label,
            },
            'conditions': [c.to_dict() for c in self.conditions],
        }


def _limit(name: str, setting: str, statement: str, limit: str, exponent: Fraction) -> Condition:
    if exponent == 0:
        status = INDETERMINATE
    elif (exponent < 0) == (limit == TO_ZERO):
        status = PASS
    else:
        status = FAIL
    return Condition(name, setting, statement, limit, float(exponent), status)


def _inequality(name: str, setting: str, statement: str, margin: Fraction) -> Condition:
    # a strict inequality between constants: the boundary fails
    return Condition(name, setting, statement, '>0', float(margin), PASS if margin > 0 else FAIL)


def fixed_p_conditions(gamma: float, lambda_exponent: float) -> Tuple[Condition, ...]:
    """The two rate conditions for a fixed number of groups."""
    e, gamma = _exact(lambda_exponent), _exact(gamma)
    return (
        _limit('bias', FIXED_P, 'n^(1/2) * lambda_n -> 0', TO_ZERO, e + Fraction(1, 2)),
        _limit('sparsity', FIXED_P, 'n^((gamma+1)/2) * lambda_n -> inf', TO_INFINITY, e + (gamma + 1) / 2),
    )


def growing_p_conditions(regime: RegimeSpec) -> Tuple[Condition, ...]:
    """
    The rate conditions for ``p = O(n^c)``. For ``c = 0`` and ``alpha = 0`` they coincide with
    :func:`fixed_p_conditions` up to the setting label.
    """
    e, c = _exact(regime.lambda_exponent), _exact(regime.c)
    alpha, gamma = _exact(regime.alpha), _exact(regime.gamma)
    return (
        _limit('bias', GROWING_P, 'lambda_n * n^(1/2 - alpha*gamma) -> 0', TO_ZERO,
               e + Fraction(1, 2) - alpha * gamma),
        _limit('sparsity', GROWING_P, 'lambda_n * n^((1-c)(1+gamma)/2) -> inf', TO_INFINITY,
               e + (1 - c) * (1 + gamma) / 2),
        _inequality('signal_floor', GROWING_P, 'alpha > (c-1)/2', alpha - (c - 1) / 2),
    )


def sequence_conditions(regime: RegimeSpec) -> Tuple[Condition, ...]:
    """Conditions on the pilot rate ``a_n`` and penalized rate ``b_n``, for whichever of them are supplied."""
    e, gamma = _exact(regime.lambda_exponent), _exact(regime.gamma)
    conditions = []

    if regime.a_exponent is not None:
        a = _exact(regime.a_exponent)
        conditions += [
            _limit('pilot_rate_vanishes', 'sequence', 'a_n -> 0', TO_ZERO, a),
            _limit('pilot_rate_slower', 'sequence', 'n^(1/2) * a_n -> inf', TO_INFINITY, a + Fraction(1, 2)),
        ]

    if regime.b_exponent is not None:
        b = _exact(regime.b_exponent)
        conditions += [
            _limit('rate_vanishes', 'sequence', 'b_n -> 0', TO_ZERO, b),
            _limit('rate_slower', 'sequence', 'n^(1/2) * b_n -> inf', TO_INFINITY, b + Fraction(1, 2)),
        ]
        if regime.p0_exponent is not None:
            p0 = _exact(regime.p0_exponent)
            conditions.append(_limit('rate_penalty', 'sequence', 'lambda_n * (p0)^(1/2) / b_n -> 0', TO_ZERO,
                                     e + p0 / 2 - b))
        if regime.a_exponent is not None:
            a = _exact(regime.a_exponent)
            conditions.append(_limit('rate_sparsity', 'sequence', 'lambda_n / (a_n^gamma * b_n) -> inf',
                                     TO_INFINITY, e - gamma * a - b))

    return tuple(conditions)


def check_conditions(regime: RegimeSpec) -> ConditionReport:
    """
    Evaluate every rate condition on ``regime`` as an exponent comparison.

    Each condition reports its net exponent of ``n`` and a status: ``pass``, ``fail`` or ``indeterminate`` (net
    exponent exactly 0, logarithmic factors unresolved). Never raises.
    """
    e = _exact(regime.lambda_exponent)
    conditions = (
        (_limit('lambda_vanishes', 'schedule', 'lambda_n -> 0', TO_ZERO, e),)
        + fixed_p_conditions(regime.gamma, regime.lambda_exponent)
        + growing_p_conditions(regime)
        + sequence_conditions(regime)
    )
    return ConditionReport(regime=regime, conditions=conditions)


def schedule_exponent(gamma: float) -> float:
    """Exponent of the default schedule ``lam_n = n^(-1/2 - gamma/4)``."""
    return float(-Fraction(1, 2) - _exact(gamma) / 4)


def lambda_schedule(n: int, gamma: float, scheme: str = FIXED_P, regime: Optional[RegimeSpec] = None) -> float:
    """
    Return ``n^(-1/2 - gamma/4)``.

    The ``growing_p`` scheme first checks the growing-p and sequence conditions of ``regime`` with its
    ``gamma`` and ``lambda_exponent`` replaced by this schedule's, and refuses a regime that does not pass.

    :raises TuningError: on ``n < 1``, ``gamma <= 0``, an unknown scheme or a failing growing-p regime.
    """
    if int(n) != n or n < 1:
        raise TuningError('n must be a positive integer, got {}'.format(n))
    if not gamma > 0:
        raise TuningError('gamma must be positive, got {}'.format(gamma))
    if scheme not in SCHEMES:
        raise TuningError('Unknown scheme {!r}, expected one of {}'.format(scheme, ', '.join(SCHEMES)))
    if not 0 < gamma < 1:
        logger.warning('gamma=%s lies outside (0, 1), the range of the n^(-1/2 - gamma/4) schedule', gamma)

    exponent = schedule_exponent(gamma)

    if scheme == GROWING_P:
        if regime is None:
            raise TuningError('The growing_p scheme needs a regime')
        report = check_conditions(replace(regime, gamma=gamma, lambda_exponent=exponent))
        if not report.holds(GROWING_P, 'sequence'):
            failing = [c.name for c in report.conditions if c.setting in (GROWING_P, 'sequence') and not c.holds]
            raise TuningError('Schedule n^({}) violates the growing-p conditions: {}'.format(
                exponent, ', '.join(failing)))

    return float(n) ** exponent


@dataclass(frozen=True)
class LambdaSchedule:
    """Monomial tuning schedule ``constant * n^exponent``; a constant ``lambda`` has exponent 0."""
    exponent: float
    constant: float = 1.0

    def __post_init__(self):
        if not self.constant >= 0:
            raise TuningError('Schedule constant must be non-negative, got {}'.format(self.constant))

    def __call__(self, n: int) -> float:
        if n < 1:
            raise TuningError('n must be a positive integer, got {}'.format(n))
        return self.constant * float(n) ** self.exponent

    @classmethod
    def default(cls, gamma: float) -> 'LambdaSchedule':
        return cls(schedule_exponent(gamma))

    @classmethod
    def parse(cls, text, gamma: Optional[float] = None) -> 'LambdaSchedule':
        """
        Parse ``schedule`` (the default schedule for ``gamma``), ``n^xi``, ``C*n^xi`` or a plain number.

        :raises TuningError: for anything that is not a monomial in ``n``.
        """
        if isinstance(text, (int, float)):
            return cls(0.0, float(text))

        text = str(text).strip()
        if text.lower() == SCHEDULE_KEYWORD:
            if gamma is None:
                raise TuningError('The default schedule needs gamma')
            return cls.default(gamma)

        try:
            return cls(0.0, float(text))
        except ValueError:
            pass

        match = _MONOMIAL.match(text)
        if not match:
            raise TuningError('Unsupported lambda {!r}: only constants and monomials C*n^xi are supported'.format(
                text))
        try:
            exponent = float(match.group('exponent'))
            constant = float(match.group('constant')) if match.group('constant') else 1.0
        except ValueError:
            raise TuningError('Malformed lambda monomial {!r}'.format(text))

        return cls(exponent, constant)

    def describe(self) -> str:
        if self.exponent == 0:
            return '{:g}'.format(self.constant)
        prefix = '' if self.constant == 1 else '{:g}*'.format(self.constant)
        return '{}n^{:g}'.format(prefix, self.exponent)
