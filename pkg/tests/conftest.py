import numpy as np
import pytest

from cvtnet.congraph import ConfusionGraph

CIFAR10 = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")
# Five confusable pairs grouped into an animal block and a vehicle block.
CIFAR_PAIRS = ((3, 5), (4, 7), (2, 6), (1, 9), (0, 8))
CIFAR_BLOCKS = ((3, 5, 4, 7, 2, 6), (1, 9, 0, 8))


def cifar_weights(pair=3.0, block=1.0, cross=0.05):
    w = np.full((10, 10), cross)
    for members in CIFAR_BLOCKS:
        for i in members:
            for j in members:
                w[i, j] = block
    for i, j in CIFAR_PAIRS:
        w[i, j] = w[j, i] = pair
    np.fill_diagonal(w, 0.0)
    return w


def cifar_graph():
    return ConfusionGraph(cifar_weights(), CIFAR10)


def graph(w, names=()):
    return ConfusionGraph(np.asarray(w, dtype=float), names)


def triangle():
    return graph([[0, 1, 1], [1, 0, 1], [1, 1, 0]])


def two_triangles():
    w = np.zeros((6, 6))
    for a, b in ((0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)):
        w[a, b] = w[b, a] = 1.0
    return graph(w)


def random_graph(rng, n, density=0.6):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    w = w + w.T
    if not w.any():
        w[0, 1] = w[1, 0] = 1.0
    return graph(w)


def graph_suite(seed=2024, count=100, sizes=(5, 8)):
    """The fixed seeded suite of random weighted graphs."""
    rng = np.random.default_rng(seed)
    return [random_graph(rng, int(rng.integers(sizes[0], sizes[1] + 1))) for _ in range(count)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def planted_graph(truth, rng, ratio=0.4, noise=0.2):
    """Confusion graph of a planted tree: weight decays by ``ratio`` per level
    between a pair's deepest common ancestor and the leaves."""
    p = truth.paths
    c = len(p)
    shared = (p[:, None, :-1] == p[None, :, :-1]).sum(axis=2)
    w = ratio ** (p.shape[1] - 1 - shared) * (1 + noise * rng.random((c, c)))
    w = np.triu(w, 1)
    return ConfusionGraph(w + w.T, truth.names)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
