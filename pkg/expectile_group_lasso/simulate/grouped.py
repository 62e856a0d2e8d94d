import numpy as np

from expectile_group_lasso.simulate.base import BaseStructure
from expectile_group_lasso.simulate.ungrouped import RANDOM_VARIANCE

GROUP_SIZE = 5

FIXED_BLOCKS = (
    (0.5, 1.0, 1.5, 1.0, 0.5),
    (1.0, 1.0, 1.0, 1.0, 1.0),
    (-1.0, 0.0, 1.0, 2.0, 1.5),
    (-1.5, 1.0, 0.5, 0.5, 0.5),
)


class _Grouped(BaseStructure):
    group_size = GROUP_SIZE
    fixed_tau = 0.5

    def _checked(self, p0, active):
        if len(active) != p0 * self.group_size:
            raise ValueError('Expected {} active coefficients, got {}'.format(p0 * self.group_size, len(active)))
        return active


class GroupedFixed(_Grouped):
    """Groups of 5 columns, ``p`` fixed, four active blocks."""
    default_p = 10
    default_p0 = len(FIXED_BLOCKS)

    @property
    def name(self):
        return 'grouped_fixed'

    def true_beta(self, p, p0, rng, active=None):
        if active is None:
            if p0 != len(FIXED_BLOCKS):
                raise ValueError('The fixed blocks have {} active groups, p0 is {}'.format(len(FIXED_BLOCKS), p0))
            active = np.concatenate(FIXED_BLOCKS)
        return self._embed(p, self._checked(p0, active))


class GroupedGrowing(_Grouped):
    """Groups of 5 columns with ``p`` growing in ``n``; active blocks drawn from N(0, 2 I) per replication."""
    default_p = 'floor(n/5)'
    default_p0 = '2*floor(sqrt(n)/5)'

    @property
    def name(self):
        return 'grouped_growing'

    def true_beta(self, p, p0, rng, active=None):
        if active is None:
            active = rng.normal(0.0, np.sqrt(RANDOM_VARIANCE), p0 * self.group_size)
        return self._embed(p, self._checked(p0, active))
