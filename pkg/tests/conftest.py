import numpy as np
import pytest

from relu_lab.arrangements import enumerate_masks
from relu_lab.convex import build_primal, solve_primal
from relu_lab.datasets import builtin_dataset


@pytest.fixture(scope="session")
def notebook_ds():
    return builtin_dataset("notebook")


@pytest.fixture(scope="session")
def notebook_masks(notebook_ds):
    return enumerate_masks(notebook_ds.X)


@pytest.fixture(scope="session")
def notebook_solved(notebook_ds, notebook_masks):
    """(problem, solution, dual, report) of the notebook primal at 1e-8."""
    problem = build_primal(notebook_ds.X, notebook_ds.y, notebook_masks)
    sol, dual, report = solve_primal(problem)
    assert report.status == "optimal"
    return problem, sol, dual, report


@pytest.fixture(scope="session")
def ortho_ds():
    return builtin_dataset("appendix-ortho")


@pytest.fixture(scope="session")
def nonspikefree_ds():
    return builtin_dataset("appendix-nonspikefree")


def random_orthogonal_separable(rng: np.random.Generator, n_pos: int,
                                n_neg: int):
    """Binary dataset with same-label dots > 0 and cross-label dots <= 0:
    positives in a narrow cone around +v, negatives around -v."""
    theta = rng.uniform(0, 2 * np.pi)
    v = np.array([np.cos(theta), np.sin(theta)])
    perp = np.array([-v[1], v[0]])
    X, y = [], []
    for sign, count in ((1, n_pos), (-1, n_neg)):
        for _ in range(count):
            a = rng.uniform(0.5, 2.0)
            b = rng.uniform(-0.3, 0.3) * a
            X.append(sign * (a * v + b * perp))
            y.append(sign)
    X = np.array(X)
    y = np.array(y)
    G = X @ X.T
    same = y[:, None] == y[None, :]
    assert np.all(G[same] > 0) and np.all(G[~same] <= 0)
    return X, y.astype(float)
