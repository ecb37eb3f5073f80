"""Maximum-likelihood training with Adam and early stopping."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptySplit, InvalidConfig, NonFiniteLoss, SizeMismatch
from .flow import LOG_2PI, CcnfModel

log = logging.getLogger(__name__)

DEFAULT_SPLIT = (25000 / 30000, 2500 / 30000, 2500 / 30000)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 50
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    split: tuple = DEFAULT_SPLIT
    dequantize: tuple = ()
    dequantize_variance: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(self.split))
        object.__setattr__(self, "dequantize", tuple(self.dequantize))
        if self.max_epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidConfig("max_epochs, batch_size and lr must be positive")
        if not 0 < self.patience < self.max_epochs:
            raise InvalidConfig("patience must lie in (0, max_epochs)")
        if len(self.split) != 3 or any(f <= 0 for f in self.split):
            raise InvalidConfig("split needs three positive entries")


@dataclass
class TrainReport:
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    initial_val_nll: float = math.nan
    best_epoch: int = -1
    stop_epoch: int = -1
    test_nll: float = math.nan
    seed: int = 0
    wall_time: float = 0.0

    def to_dict(self, timing=True) -> dict:
        out = asdict(self)
        if not timing:
            out.pop("wall_time")
        return out


def nll_loss(model: CcnfModel, batch):
    """Mean negative log-likelihood of ``batch`` (raw units) and its gradients.

    Gradients are returned in the order of ``model.params()``.
    """
    x = model.standardize(np.atleast_2d(np.asarray(batch, dtype=float)))
    n = x.shape[0]
    caches = []
    y = x
    s_total = np.zeros(n)
    for layer in reversed(model.layers):
        y, s, cache = layer.inverse_cached(y)
        caches.append(cache)
        s_total += s.sum(axis=1)
    u = y
    row_nll = 0.5 * (u * u).sum(axis=1) + 0.5 * model.d * LOG_2PI + s_total + np.log(model.scale).sum()
    if not np.all(np.isfinite(row_nll)):
        raise NonFiniteLoss(int(np.flatnonzero(~np.isfinite(row_nll))[0]))
    loss = float(row_nll.mean())

    grads = []
    g = u / n
    # caches are stored last-layer-first; walk them back towards the data side
    for layer, cache in zip(model.layers, reversed(caches)):
        layer_grads, g = layer.backward(cache, g, 1.0 / n)
        grads.append(layer_grads)
    flat = [gr for layer_grads in grads for gr in layer_grads]
    return loss, flat


def mean_nll(model: CcnfModel, data, chunk=8192) -> float:
    data = np.asarray(data, dtype=float)
    total = 0.0
    for start in range(0, data.shape[0], chunk):
        total += -model.log_prob(data[start:start + chunk]).sum()
    return total / data.shape[0]


def dequantize(data, columns, variance=0.05, seed=0):
    """Add independent ``N(0, variance)`` noise to the listed columns only."""
    out = np.array(data, dtype=float, copy=True)
    cols = list(columns)
    if not cols:
        return out
    rng = np.random.default_rng(seed)
    out[:, cols] += rng.normal(0.0, math.sqrt(variance), size=(out.shape[0], len(cols)))
    return out


def split_sizes(n, split):
    if all(isinstance(s, (int, np.integer)) and not isinstance(s, bool) for s in split):
        sizes = [int(s) for s in split]
        if sum(sizes) != n:
            raise SizeMismatch(f"split counts {sizes} do not sum to {n}")
        return sizes
    total = float(sum(split))
    if not math.isclose(total, 1.0, rel_tol=1e-9):
        raise SizeMismatch(f"split fractions sum to {total}, not 1")
    n_val = int(round(n * split[1]))
    n_test = int(round(n * split[2]))
    return [n - n_val - n_test, n_val, n_test]


def split(data, config: TrainConfig):
    """Seeded random partition into train / validation / test."""
    data = np.asarray(data, dtype=float)
    n_train, n_val, _ = split_sizes(data.shape[0], config.split)
    perm = np.random.default_rng([config.seed, 1]).permutation(data.shape[0])
    return (data[perm[:n_train]], data[perm[n_train:n_train + n_val]],
            data[perm[n_train + n_val:]])


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model: CcnfModel, data, config: TrainConfig | None = None):
    """Fit ``model`` in place; returns it with the best-validation parameters.

    Stops once validation NLL has not improved for ``config.patience`` epochs.
    """
    config = config or TrainConfig()
    t0 = time.perf_counter()
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != model.d:
        raise SizeMismatch(f"data must have {model.d} columns")
    data = dequantize(data, config.dequantize, config.dequantize_variance, [config.seed, 2])
    tr, va, te = split(data, config)
    if min(len(tr), len(va), len(te)) == 0:
        raise EmptySplit(f"split sizes {len(tr)}/{len(va)}/{len(te)}")
    model.fit_standardizer(tr)

    params = model.params()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 3])
    report = TrainReport(seed=config.seed)
    report.initial_val_nll = mean_nll(model, va)
    best, best_params, wait = report.initial_val_nll, [p.copy() for p in params], 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(tr))
        total = 0.0
        for start in range(0, len(tr), config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = nll_loss(model, tr[idx])
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(int(idx[exc.row]), f"non-finite loss in epoch {epoch} at training row {idx[exc.row]}") from None
            opt.step(grads)
            total += loss * len(idx)
        report.train_nll.append(total / len(tr))
        val = mean_nll(model, va)
        if not math.isfinite(val):
            raise NonFiniteLoss(-1, f"non-finite validation loss in epoch {epoch}")
        report.val_nll.append(val)
        if val < best:
            best, wait = val, 0
            report.best_epoch = epoch
            best_params = [p.copy() for p in params]
        else:
            wait += 1
        log.debug("epoch %d train %.5f val %.5f", epoch, report.train_nll[-1], val)
        if wait >= config.patience:
            break
    report.stop_epoch = epoch
    model.set_params(best_params)
    report.test_nll = mean_nll(model, te)
    report.wall_time = time.perf_counter() - t0
    return model, report


ARCH_KEYS = {"hidden", "layers_per_batch", "slope"}
TRAIN_KEYS = {"max_epochs", "patience", "lr", "batch_size", "seed", "dequantize", "split"}


def config_from_document(doc: dict, names=None):
    """Split a config document into architecture kwargs and a TrainConfig.

    ``dequantize`` entries may be column names when ``names`` is given.
    """
    unknown = set(doc) - ARCH_KEYS - TRAIN_KEYS
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    arch = {k: doc[k] for k in ARCH_KEYS if k in doc}
    kw = {k: doc[k] for k in TRAIN_KEYS if k in doc}
    if "dequantize" in kw and names is not None:
        kw["dequantize"] = [names.index(c) if isinstance(c, str) else int(c) for c in kw["dequantize"]]
    return arch, TrainConfig(**kw)
