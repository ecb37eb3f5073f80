"""Observations, interventions and counterfactuals on a trained CCNF."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteValue, UnknownNode
from .flow import CcnfModel, _as_batch
from .graph import descendants


@dataclass(frozen=True)
class Intervention:
    """``Do(X_node = value)`` with ``value`` in raw data units."""

    node: int
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NonFiniteValue(f"intervention value {self.value} is not finite")


def resolve_node(model, node) -> int:
    names = list(model.names)
    if isinstance(node, (int, np.integer)) and not isinstance(node, bool):
        if 0 <= int(node) < len(names):
            return int(node)
    elif str(node) in names:
        return names.index(str(node))
    raise UnknownNode(f"unknown node {node!r}")


def _normalize(model, interventions) -> list:
    if isinstance(interventions, Intervention):
        interventions = [interventions]
    out = [Intervention(resolve_node(model, iv.node), float(iv.value)) for iv in interventions]
    if len({iv.node for iv in out}) != len(out):
        raise ValueError("each node may be intervened on at most once")
    return out


def observations_sample(model: CcnfModel, n: int, seed) -> np.ndarray:
    """Draw ``n`` rows: ``u ~ N(0, I)``, ``x = forward(u)``."""
    u = np.random.default_rng(seed).standard_normal((n, model.d))
    if n == 0:
        return u
    return model.forward(u)


def _stack_inverse(model, j, i, x_std, a_std):
    """Latent value of node ``i`` whose batch-``j`` stack yields ``a_std``.

    The stack is inverted at coordinate ``i`` only, with the parent values
    taken from ``x_std``.
    """
    z = x_std.copy()
    z[:, i] = a_std
    for layer in reversed(model.batch_layers(j)):
        z, _ = layer.inverse(z, nodes={i})
    return z[:, i]


def do_on_model(model: CcnfModel, x, interventions) -> np.ndarray:
    """Apply ``Do`` to each row of ``x``.

    The factual noise is abducted with the inverse flow, the intervened
    coordinate's noise is replaced by the batch-stack inverse of the target
    value given its parents, and the flow is run forward again over the
    intervened nodes and their descendants. All other columns are returned
    untouched.
    """
    x, vec = _as_batch(x, model.d)
    ivs = _normalize(model, interventions)
    targets = {iv.node: (iv.value - model.mean[iv.node]) / model.scale[iv.node] for iv in ivs}
    affected = set(targets)
    for i in targets:
        affected |= descendants(model.graph, i)

    x_std = model.standardize(x)
    u, _ = model.inverse_std(x_std)
    z = x_std.copy()
    cols = sorted(affected)
    z[:, cols] = u[:, cols]
    for j, batch in enumerate(model.batches):
        for i in batch:
            if i in targets:
                # parents of i are already final in z
                z[:, i] = _stack_inverse(model, j, i, z, targets[i])
        moving = affected.intersection(batch)
        if moving:
            for layer in model.batch_layers(j):
                z = layer.forward(z, nodes=moving)
    out = x.copy()
    out[:, cols] = model.destandardize(z)[:, cols]
    for iv in ivs:
        out[:, iv.node] = iv.value
    return out[0] if vec else out


def interventions_sample(model: CcnfModel, interventions, n: int, seed) -> np.ndarray:
    """Samples from ``P(X | Do(...))``: observational draws pushed through Do."""
    obs = observations_sample(model, n, seed)
    if n == 0:
        return obs
    return do_on_model(model, obs, interventions)


def counterfactual(model: CcnfModel, x, interventions) -> np.ndarray:
    """Counterfactual of each factual row in ``x`` under the interventions."""
    return do_on_model(model, x, interventions)


def predict_node(model: CcnfModel, x, node, latent=0.0) -> np.ndarray:
    """Value of ``node`` generated from its parents in ``x`` with its noise fixed.

    With ``latent=0`` this is the mean-latent predictor used as a classifier.
    """
    x, vec = _as_batch(x, model.d)
    i = resolve_node(model, node)
    z = model.standardize(x)
    z[:, i] = latent
    for layer in model.batch_layers(model.batch_of(i)):
        z = layer.forward(z, nodes={i})
    out = z[:, i] * model.scale[i] + model.mean[i]
    return out[0] if vec else out
