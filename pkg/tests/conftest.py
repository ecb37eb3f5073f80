import numpy as np
import pytest

from ccnf.graph import CausalGraph


def randomize(model, scale=0.3, seed=0):
    """Overwrite every parameter with masked Gaussian noise (a non-trivial flow)."""
    rng = np.random.default_rng(seed)
    for p, m in zip(model.params(), model.param_masks()):
        p[...] = rng.normal(0.0, scale, p.shape) * m
    return model


def numerical_jacobian(fn, x, rel=1e-5):
    """Five-point-stencil Jacobian of ``fn`` at the single point ``x``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = rel * max(1.0, abs(x[j]))
        f = lambda k: fn(x + k * e)
        J[:, j] = (8 * (f(1) - f(-1)) - (f(2) - f(-2))) / (12 * e[j])
    return J


COLLIDER_CHAIN = CausalGraph.from_edges(["1", "2", "3", "4"], [("1", "3"), ("2", "3"), ("3", "4")])


@pytest.fixture
def collider_chain():
    return COLLIDER_CHAIN


def trained(name, n=10_000, epochs=1000, hidden=(32, 32), k=2):
    from ccnf.datasets import get_dataset
    from ccnf.flow import build_model
    from ccnf.scm import scm_sample
    from ccnf.training import TrainConfig, train

    spec = get_dataset(name)
    model, report = train(build_model(spec.graph, hidden, k, seed=0), scm_sample(spec, n, 0),
                     TrainConfig(max_epochs=epochs, patience=50, seed=0))
    return spec, model, report


@pytest.fixture(scope="session")
def chain4_model():
    return trained("chain4", epochs=300)


@pytest.fixture(scope="session")
def simpson_model():
    return trained("nlin-simpson")


@pytest.fixture(scope="session")
def triangle_model():
    return trained("nlin-triangle")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
