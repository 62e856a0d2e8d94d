import numpy as np
import pandas as pd
import pytest

from expectile_group_lasso.design import GroupedDesign, GroupSpec
from expectile_group_lasso.loss import LossSpec

SEED = 20241017

TAUS = (0.3, 0.5, 0.7)
QS = (1.5, 2.0, 3.0)

BASELINE = {
    'n': 200,
    'structure': 'ungrouped_fixed',
    'p': 10,
    'p0': 5,
    'gamma': 0.625,
    'seed': 11,
}

# schedule multiplier matching the target selection rates (about 5 true, 0.1 false non-zeros)
TARGET_LAMBDA_CONSTANT = 5.0


def make_instance(seed, n=60, sizes=(1, 2, 1), tau=0.5, q=2.0, noise=1.0, beta=None):
    """Random standard normal design with ``y = X beta + noise * eps``."""
    rng = np.random.default_rng(seed)
    groups = GroupSpec(tuple(sizes))
    design = GroupedDesign(rng.standard_normal((n, groups.r)), groups)
    if beta is None:
        beta = rng.normal(0.0, 1.0, groups.r)
    y = design.X @ np.asarray(beta, dtype=float) + noise * rng.standard_normal(n)
    return design, y, LossSpec(tau, q)


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture
def instance():
    return make_instance(SEED)


@pytest.fixture
def sparse_instance():
    """Two signal groups and two noise groups."""
    return make_instance(SEED + 1, n=200, sizes=(2, 1, 2, 1), tau=0.7, beta=(1.5, -1.0, 2.0, 0.0, 0.0, 0.0))


@pytest.fixture
def data_frame():
    """Covariates a, b, c, d with y depending on a and b only."""
    rng = np.random.default_rng(SEED + 2)
    n = 150
    frame = pd.DataFrame(rng.standard_normal((n, 4)) * [1.0, 2.0, 0.5, 3.0] + [0.0, 1.0, -2.0, 5.0],
                         columns=['a', 'b', 'c', 'd'])
    frame['y'] = 1.0 + 2.0 * frame['a'] - 1.5 * frame['b'] + 0.3 * rng.standard_normal(n)
    return frame[['y', 'a', 'b', 'c', 'd']]


@pytest.fixture
def data_csv(tmp_path, data_frame):
    path = tmp_path / 'data.csv'
    data_frame.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def groups_json(tmp_path):
    path = tmp_path / 'groups.json'
    path.write_text('{"signal": ["a", "b"], "noise": ["c"], "other": ["d"]}')
    return str(path)
