"""Minimal forward-mode dual numbers for the smoothed clearing objective.

Carries a value array together with its Jacobian against the optimizer's
decision vector, so the objective code reads like plain numpy while its exact
gradient falls out of the chain rule. Values broadcast over a scenario axis;
the Jacobian adds one trailing axis of length ``n_z``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = ["Dual", "dsum", "dwsum", "dmin", "dpos", "sigmoid", "softplus_linear", "smooth_clamp"]


def _ex(v) -> np.ndarray:
    """Expand a value for broadcasting against a Jacobian's trailing axis."""
    return np.asarray(v, dtype=float)[..., None]


class Dual:
    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = np.asarray(v, dtype=float)
        self.g = np.asarray(g, dtype=float)

    @classmethod
    def seed(cls, value: float, index: int, n_z: int) -> "Dual":
        g = np.zeros(n_z)
        g[index] = 1.0
        return cls(np.asarray(value, dtype=float), g)

    @classmethod
    def const(cls, value, n_z: int) -> "Dual":
        v = np.asarray(value, dtype=float)
        return cls(v, np.zeros(v.shape + (n_z,)))

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual.const(other, self.g.shape[-1])

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.v + o.v, self.g + o.g)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.v - o.v, self.g - o.g)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual(o.v - self.v, o.g - self.g)

    def __neg__(self):
        return Dual(-self.v, -self.g)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(self.v * o.v, self.g * _ex(o.v) + _ex(self.v) * o.g)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        inv = 1.0 / o.v
        return Dual(self.v * inv, self.g * _ex(inv) - _ex(self.v * inv * inv) * o.g)

    def square(self):
        return Dual(self.v * self.v, 2.0 * _ex(self.v) * self.g)


def dsum(x: Dual) -> Dual:
    """Sum over all value axes, keeping the Jacobian axis."""
    return Dual(np.sum(x.v), np.sum(x.g.reshape(-1, x.g.shape[-1]), axis=0))


def dwsum(weights, x: Dual) -> Dual:
    """Weighted sum over the scenario axis."""
    w = np.asarray(weights, dtype=float)
    return Dual(np.dot(w, x.v), np.tensordot(w, x.g, axes=(0, 0)))


def dmin(a: Dual, b: Dual) -> Dual:
    """Elementwise min selected by value (a.e. differentiable)."""
    take_a = a.v <= b.v
    return Dual(np.where(take_a, a.v, b.v), np.where(_ex(take_a), a.g, b.g))


def dpos(x: Dual) -> Dual:
    """Exact positive part; subgradient 0 at the kink."""
    mask = x.v > 0
    return Dual(np.where(mask, x.v, 0.0), np.where(_ex(mask), x.g, 0.0))


def sigmoid(x: Dual, beta: float) -> Dual:
    s = expit(beta * x.v)
    return Dual(s, _ex(beta * s * (1.0 - s)) * x.g)


def softplus_linear(x: Dual, beta: float) -> Dual:
    """Smooth surrogate of the positive part: x * sigmoid(beta x)."""
    s = expit(beta * x.v)
    return Dual(x.v * s, _ex(s + beta * x.v * s * (1.0 - s)) * x.g)


def smooth_clamp(x: Dual, hi: Dual, beta: float) -> Dual:
    """Smooth surrogate of clip(x, 0, hi) built from two softplus shoulders."""
    return softplus_linear(x, beta) - softplus_linear(x - hi, beta)
