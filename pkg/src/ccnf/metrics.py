"""Evaluation metrics: consistency loss, KL, MMD, counterfactual RMSD, fairness, ATE.

Functions that take a ``model`` also accept an :class:`~ccnf.scm.ScmSpec`
in its place, which turns the ground-truth SCM into a perfect reference
model (useful for calibrating the estimators).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import inference
from .errors import DegenerateVariance, EmptySample, NonBinaryOutput, NonFiniteJacobian
from .graph import CausalGraph
from .scm import (
    ScmSpec,
    scm_abduct,
    scm_counterfactual,
    scm_do_sample,
    scm_log_density,
    scm_sample,
)

log = logging.getLogger(__name__)

MEDIAN_SAMPLE_CAP = 6000


# model / oracle dispatch -----------------------------------------------------

def _inverse_fn(model):
    if isinstance(model, ScmSpec):
        return lambda x: scm_abduct(model, x)
    if hasattr(model, "inverse"):
        return model.inverse
    return model


def _log_prob(model, x):
    if isinstance(model, ScmSpec):
        return scm_log_density(model, x)
    return model.log_prob(x)


def _do_sample(model, node, value, n, seed):
    if isinstance(model, ScmSpec):
        return scm_do_sample(model, node, value, n, seed)
    return inference.interventions_sample(model, inference.Intervention(node, value), n, seed)


def _counterfactual(model, x, node, value):
    if isinstance(model, ScmSpec):
        return scm_counterfactual(model, x, node, value)
    return inference.counterfactual(model, x, inference.Intervention(node, value))


def _observations(model, n, seed):
    if isinstance(model, ScmSpec):
        return scm_sample(model, n, seed)
    return inference.observations_sample(model, n, seed)


# causal consistency ------------------------------------------------------------

def jacobian_fd(fn, x, rel_step=1e-4):
    """Central-difference Jacobian ``J[n, i, j] = d fn(x)_i / d x_j`` per row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    J = np.empty((n, d, d))
    for j in range(d):
        h = rel_step * np.maximum(1.0, np.abs(x[:, j]))
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        J[:, :, j] = (np.atleast_2d(fn(xp)) - np.atleast_2d(fn(xm))) / (2.0 * h)[:, None]
    return J


def consistency_loss(model, samples, graph: CausalGraph) -> float:
    """Mean Frobenius norm of the inverse-map Jacobian outside ``I + G``.

    ``model`` may be a CCNF, an SCM (its abduction map is used) or any
    callable mapping data rows to noise rows.
    """
    J = jacobian_fd(_inverse_fn(model), samples)
    if not np.all(np.isfinite(J)):
        raise NonFiniteJacobian("finite-difference Jacobian is not finite")
    off = 1.0 - np.eye(graph.d) - graph.adjacency()
    return float(np.sqrt(((J * off) ** 2).sum(axis=(1, 2))).mean())


# KL divergences ----------------------------------------------------------------

def gaussian_kl(m, v):
    """``KL(N(m, v) || N(0, 1))`` summed over dimensions."""
    m, v = np.asarray(m, dtype=float), np.asarray(v, dtype=float)
    if np.any(v < 1e-12):
        raise DegenerateVariance(f"latent variance {v.min()} too small")
    return float(0.5 * (v + m * m - 1.0 - np.log(v)).sum())


def kl_latent(model, data) -> float:
    """Gaussian-moment KL between the pushed-back latents and ``N(0, I)``."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] < 100:
        raise ValueError("kl_latent needs at least 100 rows")
    u = np.atleast_2d(_inverse_fn(model)(data))
    return gaussian_kl(u.mean(axis=0), u.var(axis=0))


def kl_data(model, spec: ScmSpec, n: int, seed) -> float:
    """Monte Carlo ``KL(p_scm || p_model)``; may come out slightly negative."""
    x = scm_sample(spec, n, seed)
    return float(np.mean(scm_log_density(spec, x) - _log_prob(model, x)))


# MMD ---------------------------------------------------------------------------

def _canonical(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == 0:
        raise EmptySample("MMD needs non-empty samples")
    return a[np.lexsort(a.T[::-1])] if a.shape[0] > 1 else a


def _sq_dists(a, b):
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def median_bandwidth(pooled) -> float:
    """Median pairwise Euclidean distance (random subsample above the cap)."""
    if pooled.shape[0] > MEDIAN_SAMPLE_CAP:
        idx = np.random.default_rng(0).choice(pooled.shape[0], MEDIAN_SAMPLE_CAP, replace=False)
        pooled = pooled[np.sort(idx)]
    d2 = _sq_dists(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    med = float(np.sqrt(np.median(d2[iu])))
    return med if med > 0 else 1.0


def _kernel_sum(a, b, gamma, drop_diag=False, chunk=1024):
    total = 0.0
    for s in range(0, a.shape[0], chunk):
        K = np.exp(-gamma * _sq_dists(a[s:s + chunk], b))
        if drop_diag:
            r = np.arange(K.shape[0])
            K[r, r + s] = 0.0
        total += K.sum()
    return total


def mmd_raw(a, b) -> float:
    """Unbiased squared MMD, Gaussian kernel with median-heuristic bandwidth.

    Rows are put in a canonical order first, so the result is invariant to
    row shuffles and symmetric in its arguments bit for bit.
    """
    a, b = _canonical(a), _canonical(b)
    if (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes()):
        a, b = b, a
    n, m = a.shape[0], b.shape[0]
    if n < 2 or m < 2:
        raise EmptySample("unbiased MMD needs at least two rows per sample")
    sigma = median_bandwidth(np.concatenate([a, b]))
    gamma = 0.5 / sigma ** 2
    kxx = _kernel_sum(a, a, gamma, drop_diag=True) / (n * (n - 1))
    kyy = _kernel_sum(b, b, gamma, drop_diag=True) / (m * (m - 1))
    kxy = _kernel_sum(a, b, gamma) / (n * m)
    return float(kxx + kyy - 2.0 * kxy)


def mmd(a, b) -> float:
    """:func:`mmd_raw` clipped at zero (clipping is logged)."""
    raw = mmd_raw(a, b)
    if raw < 0:
        log.debug("negative MMD estimate %.3g clipped to 0", raw)
        return 0.0
    return raw


def default_grid(graph: CausalGraph, values=(-1.0, 0.0, 1.0)) -> list:
    """Every node with at least one child, crossed with ``values``."""
    children = graph.children()
    return [(i, float(v)) for i in range(graph.d) if children[i] for v in values]


def quantile_grid(graph: CausalGraph, data, qs=(0.25, 0.5, 0.75)) -> list:
    """Like :func:`default_grid` but with per-node quantiles of ``data``."""
    data = np.asarray(data, dtype=float)
    children = graph.children()
    return [(i, float(v)) for i in range(graph.d) if children[i] for v in np.quantile(data[:, i], qs)]


def max_intervention_mmd(model, spec: ScmSpec, grid, n: int, seed):
    """Largest MMD between model and SCM interventional samples over ``grid``.

    Returns ``(max_mmd, table)`` with one dict per grid cell.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("intervention grid is empty")
    table = []
    for k, (node, value) in enumerate(grid):
        xm = _do_sample(model, node, value, n, [seed, k, 0])
        xo = scm_do_sample(spec, node, value, n, [seed, k, 1])
        raw = mmd_raw(xm, xo)
        table.append({"node": int(node), "value": float(value), "mmd": max(raw, 0.0), "mmd_raw": raw})
    return max(row["mmd"] for row in table), table


def rmsd(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmsd_counterfactual(model, spec: ScmSpec, n: int, grid, seed):
    """Counterfactual RMSD against the SCM oracle, max over ``grid`` cells."""
    grid = list(grid)
    if not grid:
        raise ValueError("counterfactual grid is empty")
    factual = scm_sample(spec, n, seed)
    table = []
    for node, value in grid:
        truth = scm_counterfactual(spec, factual, node, value)
        pred = _counterfactual(model, factual, node, value)
        table.append({"node": int(node), "value": float(value), "rmsd": rmsd(pred, truth)})
    return max(row["rmsd"] for row in table), table


# fairness and treatment effects --------------------------------------------------

def mean_latent_classifier(model, target, threshold=0.5):
    """Binary predictor: generate ``target`` from its parents with noise 0."""

    def predict(x):
        return (inference.predict_node(model, x, target, 0.0) > threshold).astype(int)

    return predict


def _binary(pred):
    pred = np.asarray(pred)
    if not np.all((pred == 0) | (pred == 1)):
        raise NonBinaryOutput("predictor must return 0/1 labels")
    return pred.astype(int)


def individual_fairness(predict, data, sensitive: int, classes=(0, 1), model=None) -> dict:
    """Fraction of rows whose predicted class changes with the sensitive attribute.

    ``attribute_flip`` overwrites the raw column; ``counterfactual`` (only when
    ``model`` is given) regenerates the sensitive node's descendants through
    the model's counterfactual operator.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lo, hi = classes
    x0, x1 = data.copy(), data.copy()
    x0[:, sensitive] = lo
    x1[:, sensitive] = hi
    out = {"attribute_flip": float(np.mean(np.abs(_binary(predict(x1)) - _binary(predict(x0)))))}
    if model is not None:
        c0 = _counterfactual(model, data, sensitive, lo)
        c1 = _counterfactual(model, data, sensitive, hi)
        out["counterfactual"] = float(np.mean(np.abs(_binary(predict(c1)) - _binary(predict(c0)))))
    return out


def ate(model, treatment: int, outcome: int, n: int, seed, treated=1.0, control=0.0):
    """Average treatment effect and per-sample ITEs from paired counterfactuals."""
    x = _observations(model, n, seed)
    y1 = _counterfactual(model, x, treatment, treated)[:, outcome]
    y0 = _counterfactual(model, x, treatment, control)[:, outcome]
    ite = y1 - y0
    return float(ite.mean()), ite


# reporting ---------------------------------------------------------------------

@dataclass
class MetricsReport:
    dataset: str = ""
    model: str = ""
    seed: int = 0
    kl_latent: float | None = None
    kl_data: float | None = None
    consistency_loss: float | None = None
    max_mmd: float | None = None
    cf_rmsd: float | None = None
    fairness: dict | None = None
    ate: dict | None = None
    grid: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    SCALARS = ("kl_latent", "kl_data", "consistency_loss", "max_mmd", "cf_rmsd")

    def to_dict(self) -> dict:
        return asdict(self)

    def flat_row(self) -> dict:
        row = {"dataset": self.dataset, "model": self.model, "seed": self.seed}
        for k in self.SCALARS:
            v = getattr(self, k)
            if v is not None:
                row[k] = v
        for group in ("fairness", "ate"):
            for k, v in (getattr(self, group) or {}).items():
                row[f"{group}_{k}"] = v
        return row


def aggregate(values) -> tuple:
    """``(mean, max |value - mean|)`` across seeds."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    mean = float(v.mean())
    return mean, float(np.max(np.abs(v - mean)))
