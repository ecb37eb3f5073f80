"""Scalar link functions used in structural equations, with inverses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit


def softsign(x):
    return x / (1.0 + np.abs(x))


def softsign_inv(y):
    return y / (1.0 - np.abs(y))


def softsign_inv_grad(y):
    return 1.0 / (1.0 - np.abs(y)) ** 2


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    # log(exp(y) - 1) without overflow for large y
    return y + np.log(-np.expm1(-y))


def softplus_inv_grad(y):
    return 1.0 / -np.expm1(-y)


@dataclass(frozen=True)
class PrimitiveFn:
    """A link function with its inverse, the inverse's derivative and domain."""

    tag: str
    f: Callable
    inv: Callable | None
    inv_grad: Callable | None
    in_domain: Callable

    def __call__(self, x):
        return self.f(x)


def _everywhere(y):
    return np.isfinite(y)


SOFTSIGN = PrimitiveFn("softsign", softsign, softsign_inv, softsign_inv_grad,
                       lambda y: np.abs(y) < 1.0)
SOFTPLUS = PrimitiveFn("softplus", softplus, softplus_inv, softplus_inv_grad,
                       lambda y: y > 0.0)
SIGMOID = PrimitiveFn("sigmoid", expit, logit, lambda y: 1.0 / (y * (1.0 - y)),
                      lambda y: (y > 0.0) & (y < 1.0))
EXP = PrimitiveFn("exp", np.exp, np.log, lambda y: 1.0 / y, lambda y: y > 0.0)
IDENTITY = PrimitiveFn("identity", lambda x: x, lambda y: y,
                       lambda y: np.ones_like(y), _everywhere)
# no inverse: sign collapses its input
SIGN = PrimitiveFn("sign", np.sign, None, None, lambda y: np.zeros_like(y, dtype=bool))


def affine(a: float, b: float) -> PrimitiveFn:
    if a == 0:
        raise ValueError("affine primitive needs a non-zero slope")
    return PrimitiveFn(f"affine({a},{b})", lambda x: a * x + b, lambda y: (y - b) / a,
                       lambda y: np.full_like(y, 1.0 / a), _everywhere)


PRIMITIVES = {p.tag: p for p in (SOFTSIGN, SOFTPLUS, SIGMOID, EXP, IDENTITY, SIGN)}
