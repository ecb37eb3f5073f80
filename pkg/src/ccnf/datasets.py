"""Registry of synthetic SCMs.

Seven benchmark systems with standard-normal noise, plus a linear-Gaussian
factory and a small credit-scoring SCM used for fairness checks.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, logit

from .errors import UnknownDataset
from .graph import CausalGraph
from .primitives import softplus, softplus_inv, softplus_inv_grad, softsign, softsign_inv, softsign_inv_grad
from .scm import Equation, ScmSpec


def _names(d):
    return [f"X{i}" for i in range(d)]


def _graph(d, edges):
    return CausalGraph.from_edges(_names(d), edges)


def _ones(X):
    return np.ones(X.shape[0])


def root(i, shift=0.0):
    return Equation(
        generate=lambda X, u: u + shift,
        abduct=lambda X: X[:, i] - shift,
        dudx=_ones,
    )


def nlin_triangle() -> ScmSpec:
    def x1_inner(X):
        return 2.0 * X[:, 0] ** 2 - X[:, 1]  # = Softsign(X0 + U1)

    eqs = [
        root(0, 1.0),
        Equation(
            generate=lambda X, u: 2.0 * X[:, 0] ** 2 - softsign(X[:, 0] + u),
            abduct=lambda X: softsign_inv(x1_inner(X)) - X[:, 0],
            dudx=lambda X: -softsign_inv_grad(x1_inner(X)),
            support=lambda X: np.abs(x1_inner(X)) < 1.0,
        ),
        Equation(
            generate=lambda X, u: 20.0 / (1.0 + np.exp(-X[:, 1] ** 2 + X[:, 0])) + u,
            abduct=lambda X: X[:, 2] - 20.0 * expit(X[:, 1] ** 2 - X[:, 0]),
            dudx=_ones,
        ),
    ]
    return ScmSpec("nlin-triangle", _graph(3, [(0, 1), (0, 2), (1, 2)]), eqs)


def nlin_simpson() -> ScmSpec:
    s1 = np.sqrt(3.0 / 20.0)
    s3 = 1.0 / np.sqrt(10.0)

    def x2_inner(X):
        return X[:, 2] - softsign(2.0 * X[:, 1]) - 1.5 * X[:, 0] + 1.0  # = Softsign(U2)

    eqs = [
        root(0),
        Equation(
            generate=lambda X, u: softsign(X[:, 0]) + s1 * u,
            abduct=lambda X: (X[:, 1] - softsign(X[:, 0])) / s1,
            dudx=lambda X: np.full(X.shape[0], 1.0 / s1),
        ),
        Equation(
            generate=lambda X, u: softsign(2.0 * X[:, 1]) + 1.5 * X[:, 0] - 1.0 + softsign(u),
            abduct=lambda X: softsign_inv(x2_inner(X)),
            dudx=lambda X: softsign_inv_grad(x2_inner(X)),
            support=lambda X: np.abs(x2_inner(X)) < 1.0,
        ),
        Equation(
            generate=lambda X, u: (X[:, 2] - 4.0) / 5.0 + 3.0 + s3 * u,
            abduct=lambda X: (X[:, 3] - (X[:, 2] - 4.0) / 5.0 - 3.0) / s3,
            dudx=lambda X: np.full(X.shape[0], 1.0 / s3),
        ),
    ]
    return ScmSpec("nlin-simpson", _graph(4, [(0, 1), (0, 2), (1, 2), (2, 3)]), eqs)


def linear_scm(name, names, weights, noise_scales=None, intercepts=None) -> ScmSpec:
    """Linear SCM ``X_i = b_i + sum_j w_ij X_j + s_i U_i``.

    ``weights`` maps ``(parent, child)`` label pairs to coefficients.
    """
    d = len(names)
    scales = np.ones(d) if noise_scales is None else np.asarray(noise_scales, dtype=float)
    bias = np.zeros(d) if intercepts is None else np.asarray(intercepts, dtype=float)
    if np.any(scales == 0):
        raise ValueError("noise scales must be non-zero")
    coef = [[(p, float(w)) for (p, c), w in sorted(weights.items()) if c == i] for i in range(d)]

    def mean(X, i):
        m = np.full(X.shape[0], bias[i])
        for p, w in coef[i]:
            m = m + w * X[:, p]
        return m

    def make(i):
        return Equation(
            generate=lambda X, u: mean(X, i) + scales[i] * u,
            abduct=lambda X: (X[:, i] - mean(X, i)) / scales[i],
            dudx=lambda X: np.full(X.shape[0], 1.0 / scales[i]),
        )

    graph = CausalGraph.from_edges(names, list(weights))
    return ScmSpec(name, graph, [make(i) for i in range(d)])


def chain4() -> ScmSpec:
    return linear_scm(
        "chain4", _names(4),
        {(0, 1): 5.0, (1, 2): -0.5, (2, 3): 1.0},
        noise_scales=[1.0, -1.0, -1.5, 1.0],
    )


def m_graph() -> ScmSpec:
    def k3(X):
        return X[:, 1] ** 2 + 0.5 * X[:, 0] ** 2 + 1.0

    def k4(X):
        return -1.5 * X[:, 1] ** 2 - 1.0

    eqs = [
        root(0),
        root(1),
        Equation(
            generate=lambda X, u: softsign(np.exp(X[:, 0]) + u),
            abduct=lambda X: softsign_inv(X[:, 2]) - np.exp(X[:, 0]),
            dudx=lambda X: softsign_inv_grad(X[:, 2]),
            support=lambda X: np.abs(X[:, 2]) < 1.0,
        ),
        # |k3|, |k4| >= 1 so the division is always safe
        Equation(generate=lambda X, u: k3(X) * u, abduct=lambda X: X[:, 3] / k3(X),
                 dudx=lambda X: 1.0 / k3(X)),
        Equation(generate=lambda X, u: k4(X) * u, abduct=lambda X: X[:, 4] / k4(X),
                 dudx=lambda X: 1.0 / k4(X)),
    ]
    return ScmSpec("m-graph", _graph(5, [(0, 2), (0, 3), (1, 3), (1, 4)]), eqs)


def _softplus_eq(i, lin):
    """``X_i = Softplus(lin(X) + U_i)``."""
    return Equation(
        generate=lambda X, u: softplus(lin(X) + u),
        abduct=lambda X: softplus_inv(X[:, i]) - lin(X),
        dudx=lambda X: softplus_inv_grad(X[:, i]),
        support=lambda X: X[:, i] > 0.0,
    )


def _scaled_sigmoid_eq(i, lin):
    """``X_i = 10 (Sigmoid(lin(X) + U_i) - 0.5)``."""

    def p(X):
        return X[:, i] / 10.0 + 0.5

    return Equation(
        generate=lambda X, u: 10.0 * (expit(lin(X) + u) - 0.5),
        abduct=lambda X: logit(p(X)) - lin(X),
        dudx=lambda X: 0.1 / (p(X) * (1.0 - p(X))),
        support=lambda X: np.abs(X[:, i]) < 5.0,
    )


def network() -> ScmSpec:
    eqs = [
        root(0),
        _softplus_eq(1, lambda X: 2.0 * X[:, 0] + 1.0),
        _softplus_eq(2, lambda X: -1.5 * X[:, 0] - 1.0),
        _softplus_eq(3, lambda X: 2.0 * X[:, 1] - 2.5 * X[:, 2]),
        _softplus_eq(4, lambda X: 0.5 * X[:, 1] - 3.5 * X[:, 2]),
        _scaled_sigmoid_eq(5, lambda X: 0.5 * X[:, 3] - 1.5 * X[:, 4]),
    ]
    edges = [(0, 1), (0, 2), (1, 3), (2, 3), (1, 4), (2, 4), (3, 5), (4, 5)]
    return ScmSpec("network", _graph(6, edges), eqs)


def backdoor() -> ScmSpec:
    eqs = [
        root(0),
        _softplus_eq(1, lambda X: X[:, 0]),
        _softplus_eq(2, lambda X: X[:, 1] + 2.0),
        _softplus_eq(3, lambda X: -X[:, 0]),
        _softplus_eq(4, lambda X: X[:, 2] - 1.0),
        _softplus_eq(5, lambda X: X[:, 3] + 1.0),
        _scaled_sigmoid_eq(6, lambda X: X[:, 4] / 3.0 - X[:, 5] / 3.0),
    ]
    edges = [(0, 1), (0, 3), (1, 2), (2, 4), (3, 5), (4, 6), (5, 6)]
    return ScmSpec("backdoor", _graph(7, edges), eqs)


def chain8() -> ScmSpec:
    def link(i):
        # X_i = X_{i-1} + Softsign(exp(X_{i-1}) U_i)
        def inner(X):
            return X[:, i] - X[:, i - 1]

        return Equation(
            generate=lambda X, u: X[:, i - 1] + softsign(np.exp(X[:, i - 1]) * u),
            abduct=lambda X: softsign_inv(inner(X)) * np.exp(-X[:, i - 1]),
            dudx=lambda X: softsign_inv_grad(inner(X)) * np.exp(-X[:, i - 1]),
            support=lambda X: np.abs(inner(X)) < 1.0,
        )

    def log_x1(X):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(X[:, 1])

    eqs = [
        root(0),
        # X1 = exp(Softsign(X0 + U1)), valid for X1 in (1/e, e)
        Equation(
            generate=lambda X, u: np.exp(softsign(X[:, 0] + u)),
            abduct=lambda X: softsign_inv(log_x1(X)) - X[:, 0],
            dudx=lambda X: softsign_inv_grad(log_x1(X)) / X[:, 1],
            support=lambda X: (X[:, 1] > np.exp(-1.0)) & (X[:, 1] < np.e),
        ),
    ] + [link(i) for i in range(2, 8)]
    return ScmSpec("chain8", _graph(8, [(i, i + 1) for i in range(7)]), eqs)


def synthetic_credit() -> ScmSpec:
    """Credit-scoring SCM where ``sex`` is not an ancestor of ``risk``.

    ``sex`` and ``risk`` are binary (sign thresholds), so those two equations
    cannot be abducted; the SCM is for data generation only.
    """
    names = ["sex", "age", "savings", "amount", "duration", "risk"]
    edges = [(0, 2), (1, 2), (1, 3), (1, 4), (3, 4), (3, 5), (4, 5)]
    eqs = [
        Equation(generate=lambda X, u: (np.sign(u) + 1.0) / 2.0),
        root(1),
        Equation(
            generate=lambda X, u: 0.8 * X[:, 0] + 0.5 * X[:, 1] + 0.5 * u,
            abduct=lambda X: (X[:, 2] - 0.8 * X[:, 0] - 0.5 * X[:, 1]) / 0.5,
            dudx=lambda X: np.full(X.shape[0], 2.0),
        ),
        Equation(
            generate=lambda X, u: softplus(0.7 * X[:, 1] + u),
            abduct=lambda X: softplus_inv(X[:, 3]) - 0.7 * X[:, 1],
            dudx=lambda X: softplus_inv_grad(X[:, 3]),
            support=lambda X: X[:, 3] > 0.0,
        ),
        Equation(
            generate=lambda X, u: 0.5 * X[:, 3] - 0.3 * X[:, 1] + 0.5 * u,
            abduct=lambda X: (X[:, 4] - 0.5 * X[:, 3] + 0.3 * X[:, 1]) / 0.5,
            dudx=lambda X: np.full(X.shape[0], 2.0),
        ),
        Equation(generate=lambda X, u: (np.sign(X[:, 3] - X[:, 4] - 0.5 + 0.5 * u) + 1.0) / 2.0),
    ]
    return ScmSpec("synthetic-credit", CausalGraph.from_edges(names, edges), eqs)


REGISTRY = {
    "nlin-triangle": nlin_triangle,
    "nlin-simpson": nlin_simpson,
    "chain4": chain4,
    "m-graph": m_graph,
    "network": network,
    "backdoor": backdoor,
    "chain8": chain8,
}

EXTRA = {"synthetic-credit": synthetic_credit}


def get_dataset(name: str) -> ScmSpec:
    factory = REGISTRY.get(name) or EXTRA.get(name)
    if factory is None:
        raise UnknownDataset(f"unknown dataset {name!r}; choose from {sorted(REGISTRY)}")
    return factory()
