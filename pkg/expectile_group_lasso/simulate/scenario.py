"""
Scenario definitions: sizes, size formulas, error law, coefficients and tuning.
"""
import logging
import math

from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Tuple

import yaml

from expectile_group_lasso.simulate.base import BaseStructure, SizeRule
from expectile_group_lasso.simulate.errors import BUILTIN_ERRORS
from expectile_group_lasso.simulate.grouped import GroupedFixed, GroupedGrowing
from expectile_group_lasso.simulate.ungrouped import UngroupedFixed, UngroupedGrowing
from expectile_group_lasso.tuning import LambdaSchedule, TuningError

BUILTIN_STRUCTURES = {
    'ungrouped_fixed': UngroupedFixed,
    'ungrouped_growing': UngroupedGrowing,
    'grouped_fixed': GroupedFixed,
    'grouped_growing': GroupedGrowing,
}


def _log(n: int) -> float:
    if n < 2:
        raise ScenarioError('log-based size formulas need n >= 2')
    return math.log(n)


# integer arithmetic keeps the floors exact
P_RULES = {
    'floor(n/2)': lambda n: n // 2,
    'floor(n/5)': lambda n: n // 5,
    'floor(n/log(n))': lambda n: math.floor(n / _log(n)),
    'floor(n/(2*log(n)))': lambda n: math.floor(n / (2 * _log(n))),
}

P0_RULES = {
    '2*floor(sqrt(n))': lambda n: 2 * math.isqrt(n),
    '2*floor(n^(1/4))': lambda n: 2 * math.isqrt(math.isqrt(n)),
    '2*floor(sqrt(n)/5)': lambda n: 2 * (math.isqrt(n) // 5),
}

logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


def evaluate_rule(rule: SizeRule, n: int, rules: dict, what: str) -> int:
    """Evaluate an explicit size or a formula tag at ``n``."""
    if isinstance(rule, bool):
        raise ScenarioError('{} must be an integer or a formula, got {!r}'.format(what, rule))
    if isinstance(rule, int):
        return rule
    if isinstance(rule, str):
        tag = rule.replace(' ', '')
        if tag in rules:
            return int(rules[tag](n))
        try:
            return int(tag)
        except ValueError:
            pass
    raise ScenarioError('Unknown {} rule {!r}; supported formulas: {}'.format(what, rule, ', '.join(rules)))


@dataclass(frozen=True)
class ScenarioSpec:
    n: int
    structure: str = 'ungrouped_fixed'
    p: Optional[SizeRule] = None
    p0: Optional[SizeRule] = None
    error_dist: str = 'std_normal'
    beta: Optional[Tuple[float, ...]] = None
    gamma: float = 0.625
    seed: int = 0
    tau: Optional[float] = None
    q: float = 2.0
    lam: str = 'schedule'
    lambda_constant: float = 1.0
    name: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 2:
            raise ScenarioError('n must be an integer >= 2, got {!r}'.format(self.n))
        if self.structure not in BUILTIN_STRUCTURES:
            raise ScenarioError('Unknown structure {!r}, expected one of {}'.format(
                self.structure, ', '.join(BUILTIN_STRUCTURES)))
        if self.error_dist not in BUILTIN_ERRORS:
            raise ScenarioError('Unknown error distribution {!r}, expected one of {}'.format(
                self.error_dist, ', '.join(BUILTIN_ERRORS)))
        if not self.gamma > 0:
            raise ScenarioError('gamma must be positive, got {}'.format(self.gamma))
        if not self.q > 1:
            raise ScenarioError('q must be greater than 1, got {}'.format(self.q))
        if self.tau is not None and not 0 < self.tau < 1:
            raise ScenarioError('tau must lie in (0, 1), got {}'.format(self.tau))
        if not self.lambda_constant > 0:
            raise ScenarioError('lambda_constant must be positive, got {}'.format(self.lambda_constant))
        if self.beta is not None:
            try:
                object.__setattr__(self, 'beta', tuple(float(b) for b in self.beta))
            except (TypeError, ValueError):
                raise ScenarioError('beta must be a list of numbers, got {!r}'.format(self.beta))
        try:
            object.__setattr__(self, 'seed', int(self.seed))
        except (TypeError, ValueError):
            raise ScenarioError('seed must be an integer, got {!r}'.format(self.seed))
        if self.seed < 0:
            raise ScenarioError('seed must be non-negative, got {}'.format(self.seed))
        self.schedule()
        self.sizes()

    @property
    def model(self) -> BaseStructure:
        return BUILTIN_STRUCTURES[self.structure]()

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        p, _ = self.sizes()
        return '{}-{}-n{}-p{}'.format(self.structure, self.error_dist, self.n, p)

    def sizes(self) -> Tuple[int, int]:
        """Number of groups ``p`` and of active groups ``p0``."""
        model = self.model
        p_rule = model.default_p if self.p is None else self.p
        p0_rule = model.default_p0 if self.p0 is None else self.p0

        p = evaluate_rule(p_rule, self.n, P_RULES, 'p')
        p0 = evaluate_rule(p0_rule, self.n, P0_RULES, 'p0')

        if p < 1:
            raise ScenarioError('p must be positive, got {} for n={}'.format(p, self.n))
        if not 0 <= p0 <= p:
            raise ScenarioError('p0={} must lie in [0, p={}] for n={}'.format(p0, p, self.n))
        return p, p0

    def schedule(self) -> LambdaSchedule:
        try:
            schedule = LambdaSchedule.parse(self.lam, gamma=self.gamma)
        except TuningError as error:
            raise ScenarioError(str(error))
        return LambdaSchedule(schedule.exponent, schedule.constant * self.lambda_constant)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['lambda'] = data.pop('lam')
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioSpec':
        if not isinstance(data, dict):
            raise ScenarioError('A scenario must be a mapping, got {!r}'.format(type(data).__name__))
        data = dict(data)
        if 'lambda' in data:
            data['lam'] = data.pop('lambda')
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ScenarioError('Unknown scenario keys: {}'.format(', '.join(sorted(unknown))))
        if 'n' not in data:
            raise ScenarioError('A scenario needs n')
        if isinstance(data.get('lam'), (int, float)):
            data['lam'] = str(data['lam'])
        return cls(**data)


def load_scenarios(path) -> List[ScenarioSpec]:
    """
    Load scenarios from a JSON or YAML file: one scenario mapping, or ``{"scenarios": [...]}`` with an optional
    ``defaults`` mapping merged into each entry.

    :raises ScenarioError: on unreadable or malformed files.
    """
    try:
        with open(path) as fd:
            document = yaml.safe_load(fd)
    except (OSError, yaml.YAMLError) as error:
        raise ScenarioError('Cannot read scenario file {}: {}'.format(path, error))

    if not isinstance(document, dict):
        raise ScenarioError('Scenario file {} must hold a mapping'.format(path))

    if 'scenarios' not in document:
        return [ScenarioSpec.from_dict(document)]

    defaults = document.get('defaults') or {}
    entries = document['scenarios']
    if not isinstance(entries, list) or not entries:
        raise ScenarioError('"scenarios" in {} must be a non-empty list'.format(path))
    if not isinstance(defaults, dict):
        raise ScenarioError('"defaults" in {} must be a mapping'.format(path))

    scenarios = [ScenarioSpec.from_dict(dict(defaults, **entry)) if isinstance(entry, dict)
                 else ScenarioSpec.from_dict(entry) for entry in entries]
    logger.info('Loaded %d scenarios from %s', len(scenarios), path)
    return scenarios
