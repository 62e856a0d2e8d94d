"""
Grouped design matrices, grouped coefficient vectors and design diagnostics.

Groups are indexed from 0 in code; reports print group names.
"""
import logging

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

DEFAULT_ZERO_THRESHOLD = 1e-8
DEGENERATE_EIGEN = 1e-10

logger = logging.getLogger(__name__)


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class GroupSpec:
    """Partition of ``r`` columns into ``p`` consecutive groups of sizes ``d_1..d_p``."""
    sizes: Tuple[int, ...]
    names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        sizes = tuple(int(d) for d in self.sizes)
        if not sizes:
            raise DesignError('At least one group is required')
        if any(d < 1 for d in sizes):
            raise DesignError('Group sizes must be positive, got {}'.format(sizes))
        object.__setattr__(self, 'sizes', sizes)

        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != len(sizes):
                raise DesignError('Expected {} group names, got {}'.format(len(sizes), len(names)))
            object.__setattr__(self, 'names', names)

    @classmethod
    def ungrouped(cls, p: int) -> 'GroupSpec':
        return cls((1,) * p)

    @classmethod
    def uniform(cls, p: int, d: int) -> 'GroupSpec':
        return cls((d,) * p)

    @property
    def p(self) -> int:
        return len(self.sizes)

    @property
    def r(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> Tuple[int, ...]:
        """Prefix sums ``(0, d_1, d_1 + d_2, ..., r)``."""
        return tuple(int(o) for o in np.concatenate(([0], np.cumsum(self.sizes))))

    @property
    def slices(self) -> List[slice]:
        offsets = self.offsets
        return [slice(offsets[j], offsets[j + 1]) for j in range(self.p)]

    def label(self, j: int) -> str:
        return self.names[j] if self.names else 'g{}'.format(j + 1)

    def split(self, beta: np.ndarray) -> List[np.ndarray]:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.r,):
            raise DesignError('Expected a vector of length {}, got shape {}'.format(self.r, beta.shape))
        return [beta[s] for s in self.slices]

    def flatten(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        if len(blocks) != self.p:
            raise DesignError('Expected {} blocks, got {}'.format(self.p, len(blocks)))
        for block, d in zip(blocks, self.sizes):
            if np.size(block) != d:
                raise DesignError('Block of size {} does not match group size {}'.format(np.size(block), d))
        return np.concatenate([np.ravel(b).astype(float) for b in blocks])

    def norms(self, beta: np.ndarray) -> np.ndarray:
        return np.array([np.linalg.norm(block) for block in self.split(beta)])

    def columns(self, indices) -> np.ndarray:
        """Column indices covered by the given group indices, in group order."""
        slices = self.slices
        cols = [np.arange(slices[j].start, slices[j].stop) for j in sorted(indices)]
        return np.concatenate(cols) if cols else np.array([], dtype=int)

    def permuted(self, order: Sequence[int]) -> 'GroupSpec':
        names = tuple(self.names[j] for j in order) if self.names else None
        return GroupSpec(tuple(self.sizes[j] for j in order), names)


@dataclass(frozen=True, eq=False)
class GroupedDesign:
    """Immutable ``n x r`` covariate matrix partitioned by ``groups``."""
    X: np.ndarray
    groups: GroupSpec
    column_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise DesignError('Design must be a 2-d matrix, got {} dimensions'.format(X.ndim))
        if X.shape[0] < 1:
            raise DesignError('Design needs at least one row')
        if X.shape[1] != self.groups.r:
            raise DesignError('Design has {} columns but groups cover {}'.format(X.shape[1], self.groups.r))
        if not np.all(np.isfinite(X)):
            raise DesignError('Design entries must be finite')
        X.flags.writeable = False
        object.__setattr__(self, 'X', X)

        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != X.shape[1]:
                raise DesignError('Expected {} column names, got {}'.format(X.shape[1], len(names)))
            object.__setattr__(self, 'column_names', names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def r(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.groups.p

    def column_label(self, k: int) -> str:
        return self.column_names[k] if self.column_names else 'x{}'.format(k + 1)

    def permuted(self, order: Sequence[int]) -> 'GroupedDesign':
        """Design with its groups reordered by ``order``."""
        cols = np.concatenate([np.arange(s.start, s.stop) for s in (self.groups.slices[j] for j in order)])
        names = tuple(self.column_names[k] for k in cols) if self.column_names else None
        return GroupedDesign(self.X[:, cols], self.groups.permuted(order), names)

    def rows(self, index) -> 'GroupedDesign':
        return GroupedDesign(self.X[index], self.groups, self.column_names)


@dataclass(frozen=True, eq=False)
class GroupedCoefficients:
    beta: np.ndarray
    groups: GroupSpec

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).ravel()
        if beta.shape != (self.groups.r,):
            raise DesignError('Coefficient length {} does not match {} columns'.format(beta.size, self.groups.r))
        beta.flags.writeable = False
        object.__setattr__(self, 'beta', beta)

    @classmethod
    def zeros(cls, groups: GroupSpec) -> 'GroupedCoefficients':
        return cls(np.zeros(groups.r), groups)

    def blocks(self) -> List[np.ndarray]:
        return self.groups.split(self.beta)

    def group_norm(self, j: int) -> float:
        return float(np.linalg.norm(self.beta[self.groups.slices[j]]))

    def norms(self) -> np.ndarray:
        return self.groups.norms(self.beta)


@dataclass(frozen=True)
class ActiveSet:
    """Sorted group indices with a block norm above the zero threshold."""
    indices: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'indices', tuple(sorted(int(j) for j in set(self.indices))))

    def __contains__(self, j) -> bool:
        return j in self.indices

    def __iter__(self):
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def mask(self, p: int) -> np.ndarray:
        mask = np.zeros(p, dtype=bool)
        mask[list(self.indices)] = True
        return mask


@dataclass(frozen=True)
class AssumptionReport:
    max_inf_norm: float
    min_eigen: float
    max_eigen: float
    tl_statistic: float
    degenerate: bool
    eigen_failed: bool = False

    def to_dict(self) -> dict:
        return {
            'max_inf_norm': self.max_inf_norm,
            'min_eigen': self.min_eigen,
            'max_eigen': self.max_eigen,
            'tl_statistic': self.tl_statistic,
            'degenerate': self.degenerate,
            'eigen_failed': self.eigen_failed,
        }


def gram(design: GroupedDesign) -> np.ndarray:
    """Return ``U_n = X'X / n`` symmetrised."""
    U = design.X.T @ design.X / design.n
    return (U + U.T) / 2


def assumption_report(design: GroupedDesign) -> AssumptionReport:
    """
    Informational design diagnostics: bounded covariates, Gram eigenvalue range and the
    ``sqrt(p / n) * max_i ||X_i||_2`` statistic. Never raises on eigen-solver failure.
    """
    X = design.X
    max_inf_norm = float(np.max(np.abs(X)))
    tl_statistic = float(np.sqrt(design.p / design.n) * np.max(np.linalg.norm(X, axis=1)))

    try:
        eigenvalues = scipy.linalg.eigvalsh(gram(design))
        min_eigen, max_eigen, failed = float(eigenvalues[0]), float(eigenvalues[-1]), False
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
        logger.exception('Eigenvalue computation failed for a %dx%d design', design.n, design.r)
        min_eigen, max_eigen, failed = float('nan'), float('nan'), True

    degenerate = failed or min_eigen <= DEGENERATE_EIGEN

    return AssumptionReport(
        max_inf_norm=max_inf_norm,
        min_eigen=min_eigen,
        max_eigen=max_eigen,
        tl_statistic=tl_statistic,
        degenerate=degenerate,
        eigen_failed=failed,
    )


def active_set(beta: GroupedCoefficients, threshold: float = DEFAULT_ZERO_THRESHOLD) -> ActiveSet:
    if threshold < 0:
        raise DesignError('threshold must be non-negative, got {}'.format(threshold))
    norms = beta.norms()
    return ActiveSet(tuple(int(j) for j in np.flatnonzero(norms > threshold)))


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Column centering and scaling with the inverse map for fitted coefficients."""
    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> 'Standardizer':
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        # constant columns are only centered
        scales = np.where(scales > 0, scales, 1.0)
        return cls(means, scales)

    def transform(self, design: GroupedDesign) -> GroupedDesign:
        return GroupedDesign((design.X - self.means) / self.scales, design.groups, design.column_names)

    def back_transform(self, beta: np.ndarray, intercept: float = 0.0) -> Tuple[np.ndarray, float]:
        """Map coefficients fitted on standardized columns to the raw column scale."""
        raw = np.asarray(beta, dtype=float) / self.scales
        return raw, float(intercept - np.dot(self.means, raw))


def standardize(design: GroupedDesign) -> Tuple[GroupedDesign, Standardizer]:
    standardizer = Standardizer.fit(design.X)
    return standardizer.transform(design), standardizer
