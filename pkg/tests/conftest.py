import numpy as np
import pytest
from scipy.optimize import linprog

from smoothaw.measure import DiscreteMeasure


def random_measure(rng, n, T, d=1, lattice=None, uniform=False):
    """Random discrete measure; ``lattice`` draws integer coordinates in ``[-lattice, lattice]``."""
    if lattice is None:
        paths = rng.normal(size=(n, T, d))
    else:
        paths = rng.integers(-lattice, lattice + 1, size=(n, T, d)).astype(float)
    if uniform:
        return DiscreteMeasure(paths)
    w = rng.uniform(0.2, 1.0, size=n)
    return DiscreteMeasure(paths, w / w.sum())


def lp_transport_value(a, b, C):
    """Optimal transport objective by HiGHS on the dense transportation LP."""
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(
        C.reshape(-1),
        A_eq=A_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    assert res.status == 0
    return res.fun


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_point():
    return DiscreteMeasure(np.array([[[0.0], [1.0]], [[0.0], [-1.0]]]), [0.5, 0.5])
