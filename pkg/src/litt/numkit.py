"""Small numeric kernel shared by the rest of the package.

Matrices are plain 2-D ``float64`` numpy arrays.  Moments use the population
(divide-by-n) convention throughout; the timing-attention thresholds in
:mod:`litt.attention` are calibrated against that convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class InsufficientSampleError(ValueError):
    """Too few observations for the requested statistic."""


class DegenerateDistributionError(ValueError):
    """The sample has zero variance."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite matrix product")
    return out


def sigmoid(x):
    """Logistic function, evaluated without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh_act(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MomentSummary:
    n: int
    mean: float
    variance: float
    mu4: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def central_moments(xs) -> MomentSummary:
    """Mean, population variance and fourth central moment (two passes)."""
    x = np.asarray(xs, dtype=np.float64).ravel()
    if x.size < 2:
        raise InsufficientSampleError(f"need at least 2 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    mean = float(np.mean(x))
    d = x - mean
    d2 = d * d
    var = float(np.mean(d2))
    mu4 = float(np.mean(d2 * d2))
    return MomentSummary(n=int(x.size), mean=mean, variance=var, mu4=mu4)


def excess_kurtosis(xs) -> float:
    """Population excess kurtosis ``mu4 / sigma^4 - 3``.

    Raises DegenerateDistributionError on a constant sample; callers decide how
    to treat perfect concentration.
    """
    m = central_moments(xs)
    # relative to the scale of the data, not absolute
    scale = max(abs(m.mean), 1.0)
    if m.variance <= (np.finfo(float).eps * scale) ** 2:
        raise DegenerateDistributionError("zero variance")
    return m.mu4 / (m.variance * m.variance) - 3.0


class Rng:
    """Seeded counter-based generator (Philox), reproducible across platforms.

    ``child(*key)`` derives an independent stream, so components can draw
    without perturbing each other's sequences.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self._key + tuple(int(k) for k in key))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def exponential(self, scale=1.0, size=None):
        return self.gen.exponential(scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def random(self, size=None):
        return self.gen.random(size)
