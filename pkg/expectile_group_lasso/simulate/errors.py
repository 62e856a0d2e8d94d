"""
Model error distributions of the simulation study.
"""
import numpy as np


def std_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.standard_normal(size)


def shifted_chi2(rng: np.random.Generator, size: int) -> np.ndarray:
    """N(-1.2, 0.4^2) + chi^2(1)."""
    return rng.normal(-1.2, 0.4, size) + rng.chisquare(1, size)


def shifted_exp(rng: np.random.Generator, size: int) -> np.ndarray:
    """Exponential with rate 1, shifted by -1 (zero mean)."""
    return rng.exponential(1.0, size) - 1.0


def cauchy(rng: np.random.Generator, size: int) -> np.ndarray:
    """Cauchy with location 0 and scale 0.1."""
    return 0.1 * rng.standard_cauchy(size)


BUILTIN_ERRORS = {
    'std_normal': std_normal,
    'shifted_chi2': shifted_chi2,
    'shifted_exp': shifted_exp,
    'cauchy': cauchy,
}

SYMMETRIC_ERRORS = frozenset(('std_normal', 'cauchy'))
