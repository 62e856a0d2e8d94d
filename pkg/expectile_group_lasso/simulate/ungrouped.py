import numpy as np

from expectile_group_lasso.simulate.base import BaseStructure

FIXED_BETA = (1.0, -2.0, 0.5, 4.0, -6.0)

RANDOM_VARIANCE = 2.0


class UngroupedFixed(BaseStructure):
    """Singleton groups, ``p`` fixed, ``beta0 = (1, -2, 0.5, 4, -6, 0, ...)``."""
    default_p = 10
    default_p0 = len(FIXED_BETA)

    @property
    def name(self):
        return 'ungrouped_fixed'

    def true_beta(self, p, p0, rng, active=None):
        if active is None:
            if p0 != len(FIXED_BETA):
                raise ValueError('The fixed coefficients have {} non-zeros, p0 is {}'.format(len(FIXED_BETA), p0))
            active = FIXED_BETA
        elif len(active) != p0:
            raise ValueError('Expected {} active coefficients, got {}'.format(p0, len(active)))
        return self._embed(p, active)


class UngroupedGrowing(BaseStructure):
    """Singleton groups with ``p`` growing in ``n``; active coefficients drawn from N(0, 2) per replication."""
    default_p = 'floor(n/2)'
    default_p0 = '2*floor(sqrt(n))'

    @property
    def name(self):
        return 'ungrouped_growing'

    def true_beta(self, p, p0, rng, active=None):
        if active is None:
            active = rng.normal(0.0, np.sqrt(RANDOM_VARIANCE), p0)
        elif len(active) != p0:
            raise ValueError('Expected {} active coefficients, got {}'.format(p0, len(active)))
        return self._embed(p, active)
