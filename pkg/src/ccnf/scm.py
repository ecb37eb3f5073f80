"""Executable ground-truth structural causal models.

An :class:`ScmSpec` pairs a :class:`~ccnf.graph.CausalGraph` with one
:class:`Equation` per node. Equations read the full ``(n, d)`` data matrix
and index their parents by label, so they can be written as plain lambdas.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .errors import OutOfSupport, UnknownNode
from .graph import CausalGraph, descendants, topological_batching, validate_dag


def _anywhere(X):
    return np.ones(X.shape[0], dtype=bool)


@dataclass(frozen=True)
class Equation:
    """Structural equation ``X_i = generate(X, U_i)`` and its inverse.

    ``abduct(X)`` recovers ``U_i`` from column ``i`` and the parent columns,
    ``dudx(X)`` is the partial derivative of that inverse with respect to
    ``X_i`` and ``support(X)`` flags rows where the inverse is defined.
    ``abduct=None`` marks a non-invertible equation.
    """

    generate: Callable
    abduct: Callable | None = None
    dudx: Callable | None = None
    support: Callable = _anywhere


@dataclass(frozen=True)
class ScmSpec:
    name: str
    graph: CausalGraph
    equations: tuple
    noise: tuple = field(default=None)

    def __post_init__(self):
        validate_dag(self.graph)
        if len(self.equations) != self.graph.d:
            raise ValueError("need one equation per node")
        if self.noise is None:
            object.__setattr__(self, "noise", tuple(stats.norm(0.0, 1.0) for _ in self.equations))
        object.__setattr__(self, "equations", tuple(self.equations))
        object.__setattr__(self, "_order", [i for b in topological_batching(self.graph) for i in b])

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def names(self) -> tuple:
        return self.graph.names

    @property
    def order(self) -> list:
        """Labels in batch order (parents always precede children)."""
        return self._order


def _interventions(spec, node, value) -> dict:
    """Normalize ``node``/``value`` (scalars or parallel sequences) to a dict."""
    nodes = [node] if np.isscalar(node) else list(node)
    values = [value] * len(nodes) if np.isscalar(value) else list(value)
    if len(values) != len(nodes):
        raise ValueError("need one value per intervened node")
    out = {}
    for n, v in zip(nodes, values):
        i = spec.graph.index(n) if not isinstance(n, (int, np.integer)) else int(n)
        if not 0 <= i < spec.d:
            raise UnknownNode(n)
        out[i] = float(v)
    return out


def sample_noise(spec: ScmSpec, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    U = np.empty((n, spec.d))
    for i, dist in enumerate(spec.noise):
        U[:, i] = dist.rvs(size=n, random_state=rng)
    return U


def scm_generate(spec: ScmSpec, U: np.ndarray, do: dict | None = None) -> np.ndarray:
    """Push noise through the (optionally mutilated) structural equations."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    do = do or {}
    X = np.zeros_like(U)
    for i in spec.order:
        if i in do:
            X[:, i] = do[i]
        else:
            X[:, i] = spec.equations[i].generate(X, U[:, i])
    return X


def scm_sample(spec: ScmSpec, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. observations; deterministic given ``seed``."""
    return scm_generate(spec, sample_noise(spec, n, seed))


def _check_support(spec, X):
    for i in spec.order:
        eq = spec.equations[i]
        if eq.abduct is None:
            raise OutOfSupport(i, f"equation of node {i} has no inverse")
        ok = eq.support(X)
        if not np.all(ok):
            row = int(np.flatnonzero(~ok)[0])
            raise OutOfSupport(i, f"row {row} outside abduction domain of node {i}")


def scm_abduct(spec: ScmSpec, x) -> np.ndarray:
    """Recover the exogenous noise that produced ``x`` (vector or matrix)."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    _check_support(spec, X)
    U = np.column_stack([spec.equations[i].abduct(X) for i in range(spec.d)]) if spec.d else X.copy()
    return U.reshape(x.shape)


def scm_log_density(spec: ScmSpec, x) -> np.ndarray:
    """Exact log-density of the observational distribution."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    U = np.atleast_2d(scm_abduct(spec, X))
    logp = np.zeros(X.shape[0])
    for i, eq in enumerate(spec.equations):
        logp += spec.noise[i].logpdf(U[:, i]) + np.log(np.abs(eq.dudx(X)))
    return logp if x.ndim > 1 else logp[0]


def scm_do_sample(spec: ScmSpec, node, value, n: int, seed) -> np.ndarray:
    """Sample the SCM with ``node`` forced to ``value``.

    Uses the same noise stream as :func:`scm_sample` for equal seeds.
    """
    return scm_generate(spec, sample_noise(spec, n, seed), _interventions(spec, node, value))


def scm_counterfactual(spec: ScmSpec, x, node, value) -> np.ndarray:
    """Abduct, intervene, regenerate. Non-descendants are copied from ``x``."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    do = _interventions(spec, node, value)
    U = np.atleast_2d(scm_abduct(spec, X))
    affected = set(do)
    for i in do:
        affected |= descendants(spec.graph, i)
    out = X.copy()
    for i in spec.order:
        if i in do:
            out[:, i] = do[i]
        elif i in affected:
            out[:, i] = spec.equations[i].generate(out, U[:, i])
    return out.reshape(x.shape)
