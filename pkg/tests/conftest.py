import numpy as np
import pytest

from tangentclust import Grassmannian, Sphere, Spd


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


MANIFOLDS = {
    "sphere": Sphere(2),
    "sphere5": Sphere(5),
    "grassmann": Grassmannian(6, 2),
    "grassmann43": Grassmannian(4, 3),
    "spd": Spd(3),
}


@pytest.fixture(params=sorted(MANIFOLDS))
def manifold(request):
    return MANIFOLDS[request.param]


def random_pairs(manifold, rng, n):
    """``n`` pairs closer than the injectivity radius (and off the cut locus)."""
    inj = manifold.injectivity_radius()
    pairs = []
    while len(pairs) < n:
        x = manifold.random_point(rng)
        y = manifold.random_point(rng)
        if manifold.dist(x, y) < 0.95 * min(inj, 50.0):
            pairs.append((x, y))
    return pairs


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Append ``(criterion, passed, detail)`` rows printed at the end of the run."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(ACCEPTANCE_KEY, [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(rows, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
