"""
Base simulation structure.
"""
from typing import Optional, Sequence, Union

import numpy as np

from expectile_group_lasso.design import GroupSpec

SizeRule = Union[int, str]


class BaseStructure:
    """
    Layout of a simulated model: group sizes, default ``p`` / ``p0`` rules and the true coefficients.

    Subclasses set ``group_size`` and the defaults and implement :meth:`true_beta`.
    """
    group_size = 1
    default_p: Optional[SizeRule] = None
    default_p0: Optional[SizeRule] = None
    # expectile index imposed by the design, None when it is estimated from the errors
    fixed_tau: Optional[float] = None

    @property
    def name(self):
        raise NotImplementedError()

    @property
    def grouped(self) -> bool:
        return self.group_size > 1

    def groups(self, p: int) -> GroupSpec:
        return GroupSpec.uniform(p, self.group_size)

    def true_beta(self, p: int, p0: int, rng: np.random.Generator,
                  active: Optional[Sequence[float]] = None) -> np.ndarray:
        """
        Full coefficient vector of length ``p * group_size``: the first ``p0`` groups carry the signal.

        :param active: Explicit coefficients of the first ``p0`` groups, flattened.
        """
        raise NotImplementedError()

    def _embed(self, p: int, active: Sequence[float]) -> np.ndarray:
        beta = np.zeros(p * self.group_size)
        active = np.asarray(active, dtype=float).ravel()
        if active.size > beta.size:
            raise ValueError('{} active coefficients do not fit {} columns'.format(active.size, beta.size))
        beta[:active.size] = active
        return beta
