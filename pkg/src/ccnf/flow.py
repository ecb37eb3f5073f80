"""Causally consistent normalizing flow: masked conditioners and affine layers.

The flow maps latent noise ``u`` to standardized data through one stack of
:class:`PartialCausalLayer` per topological batch. A layer over label set
``L`` rewrites only the coordinates in ``L``::

    x_i = u_i * exp(s_i) + t_i      (i in L)
    x_i = u_i                       (otherwise)

where ``(s_i, t_i)`` come from a masked MLP that reads only the parents of
``i``. Gradients for training are computed by explicit reverse-mode passes
(:meth:`PartialCausalLayer.backward`), so the package needs only numpy.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, NonFiniteValue, VersionMismatch
from .graph import (
    CausalGraph,
    expand_blocks,
    min_depth,
    parse_graph_document,
    topological_batching,
    validate_dag,
)

MODEL_VERSION = "ccnf-model/1"
HIDDEN_GRID = ((8, 8), (16, 16), (32, 32), (64, 64))
MAX_LAYERS_PER_BATCH = 5
LOG_2PI = math.log(2.0 * math.pi)


def soft_clamp(x, slope=3.0):
    """Smoothly squash ``x`` into ``(-slope, slope)``: ``x / (1 + |x / slope|)``."""
    if slope <= 0:
        raise InvalidConfig("slope must be positive")
    return x / (1.0 + np.abs(x / slope))


def soft_clamp_grad(x, slope=3.0):
    return 1.0 / (1.0 + np.abs(x / slope)) ** 2


def std_normal_logpdf(u):
    return -0.5 * (u * u + LOG_2PI)


class MaskedConditioner:
    """ReLU MLP producing ``(s_i, t_i)`` for each target node from its parents.

    Every target owns ``hidden[k]`` units in hidden layer ``k``. A unit
    inherits the parent set of its target; it may read an input ``j`` only if
    ``j`` is in that set and may feed a later unit or output only if its
    parent set is contained in the receiver's. Any path from input ``j`` to the
    outputs of node ``i`` therefore requires ``j`` in ``pa_i``.
    """

    def __init__(self, graph: CausalGraph, targets, hidden, rng=None, direct=True):
        self.targets = tuple(targets)
        self.direct = bool(direct)
        self.hidden = tuple(int(h) for h in hidden)
        d = graph.d
        pa = [set(graph.parents[i]) for i in self.targets]

        unit_owner = [np.repeat(np.arange(len(self.targets)), h) for h in self.hidden]
        # parent-set membership matrices, one row per unit / output
        in_sets = np.zeros((len(self.targets), d), dtype=bool)
        for k, p in enumerate(pa):
            in_sets[k, list(p)] = True

        def subset(a_owner, b_owner):
            # allowed[a, b] iff pa(owner a) is a subset of pa(owner b)
            A = in_sets[a_owner].astype(int)
            B = in_sets[b_owner].astype(int)
            return (A @ (1 - B).T) == 0

        out_owner = np.concatenate([np.arange(len(self.targets))] * 2)
        masks = []
        if self.hidden:
            masks.append(in_sets[unit_owner[0]].T.copy())
            for a, b in zip(unit_owner[:-1], unit_owner[1:]):
                masks.append(subset(a, b))
            masks.append(subset(unit_owner[-1], out_owner))
        else:
            masks.append(in_sets[out_owner].T.copy())
        if self.direct and self.hidden:
            # masked linear path straight from the parents to the outputs
            masks.append(in_sets[out_owner].T.copy())
        self.masks = [m.astype(float) for m in masks]

        rng = np.random.default_rng(rng)
        self.weights, self.biases = [], []
        for k, m in enumerate(self.masks):
            if k >= len(self.hidden):
                # zero output layer: the flow starts as the identity map
                W = np.zeros(m.shape)
            else:
                fan_in = np.maximum(m.sum(axis=0), 1.0)
                W = rng.standard_normal(m.shape) * np.sqrt(2.0 / fan_in) * m
            self.weights.append(W)
            self.biases.append(np.zeros(m.shape[1]))

    @property
    def n_targets(self):
        return len(self.targets)

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def param_masks(self):
        out = []
        for m, b in zip(self.masks, self.biases):
            out.extend([m, np.ones_like(b)])
        return out

    def __call__(self, z, cache=False):
        h = z
        acts = [h]
        pre = []
        depth = len(self.hidden)
        for k in range(depth + 1):
            a = h @ (self.weights[k] * self.masks[k]) + self.biases[k]
            if k < depth:
                pre.append(a)
                h = np.maximum(a, 0.0)
                acts.append(h)
            else:
                h = a
        if len(self.weights) > depth + 1:
            h = h + z @ (self.weights[-1] * self.masks[-1]) + self.biases[-1]
        n = self.n_targets
        s_pre, t = h[:, :n], h[:, n:]
        if cache:
            return s_pre, t, (acts, pre)
        return s_pre, t

    def backward(self, cache, g_out):
        """Return ``(param_grads, input_grad)`` for upstream gradient ``g_out``."""
        acts, pre = cache
        grads = [None] * (2 * len(self.weights))
        depth = len(self.hidden)
        g_direct = 0.0
        if len(self.weights) > depth + 1:
            m = self.masks[-1]
            grads[-2] = (acts[0].T @ g_out) * m
            grads[-1] = g_out.sum(axis=0)
            g_direct = g_out @ (self.weights[-1] * m).T
        g = g_out
        for k in range(depth, -1, -1):
            m = self.masks[k]
            grads[2 * k] = (acts[k].T @ g) * m
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ (self.weights[k] * m).T
            if k > 0:
                g = g * (pre[k - 1] > 0.0)
        return grads, g + g_direct


class PartialCausalLayer:
    """Affine transform of the coordinates in ``labels``; identity elsewhere."""

    def __init__(self, graph, labels, hidden, slope=3.0, rng=None):
        self.labels = tuple(labels)
        self.slope = float(slope)
        self.conditioner = MaskedConditioner(graph, self.labels, hidden, rng)
        self._pos = {lab: k for k, lab in enumerate(self.labels)}

    def params(self):
        return self.conditioner.params()

    def param_masks(self):
        return self.conditioner.param_masks()

    def _select(self, nodes):
        if nodes is None:
            return list(self.labels), slice(None)
        nodes = [n for n in self.labels if n in nodes]
        return nodes, [self._pos[n] for n in nodes]

    def scale_shift(self, z):
        s_pre, t = self.conditioner(z)
        return soft_clamp(s_pre, self.slope), t

    def forward(self, z, nodes=None):
        """Latent side to data side. ``nodes`` restricts which labels move."""
        cols, sel = self._select(nodes)
        out = z.copy()
        if not cols:
            return out
        s, t = self.scale_shift(z)
        out[:, cols] = z[:, cols] * np.exp(s[:, sel]) + t[:, sel]
        return out

    def inverse(self, y, nodes=None):
        """Data side to latent side; returns ``(z, log|det dz/dy|)`` per row."""
        cols, sel = self._select(nodes)
        out = y.copy()
        if not cols:
            return out, np.zeros(y.shape[0])
        s, t = self.scale_shift(y)
        s, t = s[:, sel], t[:, sel]
        out[:, cols] = (y[:, cols] - t) * np.exp(-s)
        return out, -s.sum(axis=1)

    def inverse_cached(self, y):
        s_pre, t, ccache = self.conditioner(y, cache=True)
        s = soft_clamp(s_pre, self.slope)
        z = y.copy()
        z[:, list(self.labels)] = (y[:, list(self.labels)] - t) * np.exp(-s)
        return z, s, (s_pre, s, z, ccache)

    def backward(self, cache, g_z, g_s_direct):
        """Backprop through :meth:`inverse_cached`.

        ``g_z`` is dL/dz, ``g_s_direct`` the loss gradient that reaches ``s``
        directly (through the log-determinant). Returns param grads and dL/dy.
        """
        s_pre, s, z, ccache = cache
        cols = list(self.labels)
        e = np.exp(-s)
        gL = g_z[:, cols]
        g_y = g_z.copy()
        g_y[:, cols] = gL * e
        g_t = -gL * e
        g_s = -gL * z[:, cols] + g_s_direct
        g_out = np.concatenate([g_s * soft_clamp_grad(s_pre, self.slope), g_t], axis=1)
        grads, g_in = self.conditioner.backward(ccache, g_out)
        return grads, g_y + g_in


class CcnfModel:
    """Stack of partial causal layers in topological batch order."""

    version = MODEL_VERSION

    def __init__(self, graph, hidden=(32, 32), layers_per_batch=2, slope=3.0, seed=0):
        self.source_graph = validate_dag(graph)
        self.graph = expand_blocks(graph)
        self.batches = topological_batching(self.graph)
        self.hidden = tuple(int(h) for h in hidden)
        if self.hidden not in HIDDEN_GRID:
            raise InvalidConfig(f"hidden sizes {list(self.hidden)} not in {[list(h) for h in HIDDEN_GRID]}")
        if isinstance(layers_per_batch, (int, np.integer)):
            layers_per_batch = [int(layers_per_batch)] * len(self.batches)
        self.layers_per_batch = tuple(int(k) for k in layers_per_batch)
        if len(self.layers_per_batch) != len(self.batches):
            raise InvalidConfig("need one layer count per topological batch")
        if any(not 1 <= k <= MAX_LAYERS_PER_BATCH for k in self.layers_per_batch):
            raise InvalidConfig(f"layers per batch must lie in 1..{MAX_LAYERS_PER_BATCH}")
        if slope <= 0:
            raise InvalidConfig("slope must be positive")
        self.slope = float(slope)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.layers = []
        self.layer_batch = []
        for j, (batch, k) in enumerate(zip(self.batches, self.layers_per_batch)):
            for _ in range(k):
                self.layers.append(PartialCausalLayer(self.graph, batch, self.hidden, self.slope, rng))
                self.layer_batch.append(j)
        assert len(self.layers) >= min_depth(self.graph)
        self.mean = np.zeros(self.graph.d)
        self.scale = np.ones(self.graph.d)

    @property
    def d(self):
        return self.graph.d

    @property
    def names(self):
        return self.graph.names

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def param_masks(self):
        return [m for layer in self.layers for m in layer.param_masks()]

    def set_params(self, values):
        for dst, src in zip(self.params(), values):
            dst[...] = src

    def fit_standardizer(self, data):
        data = np.asarray(data, dtype=float)
        self.mean = data.mean(axis=0)
        scale = data.std(axis=0)
        self.scale = np.where(scale > 0, scale, 1.0)

    def standardize(self, x):
        return (x - self.mean) / self.scale

    def destandardize(self, z):
        return z * self.scale + self.mean

    # standardized-space maps -------------------------------------------------

    def forward_std(self, u, nodes=None):
        z = np.array(u, dtype=float, copy=True)
        for layer in self.layers:
            z = layer.forward(z, nodes)
        return z

    def inverse_std(self, x, nodes=None):
        z = np.array(x, dtype=float, copy=True)
        logdet = np.zeros(z.shape[0])
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z, nodes)
            logdet += ld
        return z, logdet

    def batch_layers(self, j):
        return [layer for layer, b in zip(self.layers, self.layer_batch) if b == j]

    def batch_of(self, i):
        for j, batch in enumerate(self.batches):
            if i in batch:
                return j
        raise KeyError(i)

    # data-space maps ---------------------------------------------------------

    def forward(self, u):
        """Map latent noise to data (vector or ``(n, d)`` batch)."""
        u, vec = _as_batch(u, self.d)
        x = self.destandardize(self.forward_std(u))
        return x[0] if vec else x

    def inverse(self, x):
        """Map data to latent noise (vector or ``(n, d)`` batch)."""
        x, vec = _as_batch(x, self.d)
        u, _ = self.inverse_std(self.standardize(x))
        return u[0] if vec else u

    def log_prob(self, x):
        x, vec = _as_batch(x, self.d)
        u, logdet = self.inverse_std(self.standardize(x))
        lp = std_normal_logpdf(u).sum(axis=1) + logdet - np.log(self.scale).sum()
        return lp[0] if vec else lp

    # serialization -----------------------------------------------------------

    def to_document(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "graph": self.source_graph.to_document(),
            "batches": [list(b) for b in self.batches],
            "config": {
                "hidden": list(self.hidden),
                "layers_per_batch": list(self.layers_per_batch),
                "slope": self.slope,
                "seed": self.seed,
            },
            "standardizer": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "layers": [
                {
                    "labels": list(layer.labels),
                    "params": [{"shape": list(p.shape), "data": p.ravel().tolist()} for p in layer.params()],
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CcnfModel":
        if doc.get("version") != MODEL_VERSION:
            raise VersionMismatch(f"model version {doc.get('version')!r}, expected {MODEL_VERSION!r}")
        cfg = doc["config"]
        model = cls(parse_graph_document(doc["graph"]), cfg["hidden"], cfg["layers_per_batch"],
                    cfg["slope"], cfg["seed"])
        if [list(b) for b in model.batches] != doc["batches"]:
            raise VersionMismatch("stored batches disagree with the graph")
        model.mean = np.array(doc["standardizer"]["mean"], dtype=float)
        model.scale = np.array(doc["standardizer"]["scale"], dtype=float)
        values = [np.array(p["data"], dtype=float).reshape(p["shape"])
                  for layer in doc["layers"] for p in layer["params"]]
        if [v.shape for v in values] != [p.shape for p in model.params()]:
            raise VersionMismatch("parameter shapes disagree with the architecture")
        model.set_params(values)
        return model

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_document(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CcnfModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_document(json.load(fh))


def _as_batch(a, d):
    a = np.asarray(a, dtype=float)
    vec = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != d:
        raise ValueError(f"expected {d} columns, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue("input contains non-finite values")
    return a, vec


def build_model(graph: CausalGraph, hidden=(32, 32), layers_per_batch=2, slope=3.0, seed=0) -> CcnfModel:
    """Untrained CCNF for ``graph``, initialised to the identity map."""
    return CcnfModel(graph, hidden, layers_per_batch, slope, seed)
