"""Random draws of the tensor ensemble ``M = sum_a tau_a Y_a Y_a^T``.

``Y_a = y_a^(1) (x) y_a^(2)`` with both factors uniform on the unit sphere
``S^{n-1}``.  Tensor entries follow the row convention ``(j, s) -> j*n + s``
(zero-based), i.e. ``Y[j*n + s] = y1[j] * y2[s]``, which is ``np.kron(y1, y2)``.

Randomness is counter based.  Sphere vector number ``k = 2*a + factor``
(``factor`` is 0 for ``y^(1)``, 1 for ``y^(2)``) reads the Philox block that
starts at counter ``k * ceil(n/4)``; Gaussian coordinates are obtained by
inverse-CDF transform of those raw words.  Any vector can therefore be
regenerated on its own (:func:`sphere_vector`) and a whole ensemble is one
bulk draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import SizeGuardError
from .measures import TauMeasure, TauSequence, sample_tau_sequence

__all__ = [
    "DENSE_MAX_N",
    "EnsembleConfig",
    "EnsembleSample",
    "SizeGuardError",
    "sample_sphere",
    "sphere_vector",
    "draw_ensemble",
    "tensor_vectors",
    "assemble_dense",
    "assemble_gram",
]

DENSE_MAX_N = 128
_U64 = 2**64


@dataclass(frozen=True)
class EnsembleConfig:
    n: int
    c: float
    measure: TauMeasure
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 0 <= int(self.seed) < _U64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.m < 1:
            raise ValueError(f"m = round(c n^2) must be >= 1 (c={self.c}, n={self.n})")

    @property
    def m(self) -> int:
        return int(round(self.c * self.n * self.n))


@dataclass(frozen=True, eq=False)
class EnsembleSample:
    """One draw: factor matrices (unit columns) plus the weight sequence."""

    F1: np.ndarray
    F2: np.ndarray
    taus: TauSequence
    config: EnsembleConfig

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def m(self) -> int:
        return self.F1.shape[1]

    def drop(self, alpha: int) -> "EnsembleSample":
        """The sample with term ``alpha`` removed (the matrix ``M^alpha``)."""
        keep = np.arange(self.m) != alpha
        taus = TauSequence(values=self.taus.values[keep], source=self.taus.source)
        return EnsembleSample(self.F1[:, keep], self.F2[:, keep], taus, self.config)

    def tensor_vector(self, alpha: int) -> np.ndarray:
        return np.kron(self.F1[:, alpha], self.F2[:, alpha])


def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on ``S^{n-1}``: a normalized standard Gaussian vector."""
    if n < 1:
        raise ValueError("n must be >= 1")
    while True:
        g = rng.standard_normal(n)
        norm = np.linalg.norm(g)
        if norm > 0:
            return g / norm


def _block(n: int) -> int:
    return -(-n // 4)


def _gaussians_from_raw(raw: np.ndarray) -> np.ndarray:
    # 53-bit mid-point uniforms: never 0 or 1, so ndtri stays finite
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _normalize_columns(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):  # pragma: no cover - needs every coordinate at the median
        raise FloatingPointError("zero Gaussian vector")
    return X / norms


def sphere_vector(seed: int, k: int, n: int) -> np.ndarray:
    """Sphere vector ``k`` of the counter-based stream keyed by ``seed``."""
    bg = np.random.Philox(key=int(seed), counter=int(k) * _block(n))
    g = _gaussians_from_raw(bg.random_raw(n))
    return _normalize_columns(g[:, None])[:, 0]


def draw_ensemble(config: EnsembleConfig) -> EnsembleSample:
    """Draw ``2m`` independent sphere vectors and the weight sequence."""
    n, m = config.n, config.m
    b = _block(n)
    raw = np.random.Philox(key=int(config.seed)).random_raw(2 * m * 4 * b)
    g = _gaussians_from_raw(raw).reshape(m, 2, 4 * b)[:, :, :n]
    F1 = _normalize_columns(np.ascontiguousarray(g[:, 0, :].T))
    F2 = _normalize_columns(np.ascontiguousarray(g[:, 1, :].T))
    taus = sample_tau_sequence(config.measure, m)
    return EnsembleSample(F1=F1, F2=F2, taus=taus, config=config)


def tensor_vectors(sample: EnsembleSample) -> np.ndarray:
    """The ``n^2 x m`` matrix whose columns are the ``Y_a``."""
    n, m = sample.n, sample.F1.shape[1]
    return (sample.F1[:, None, :] * sample.F2[None, :, :]).reshape(n * n, m)


def assemble_dense(sample: EnsembleSample) -> np.ndarray:
    if sample.n > DENSE_MAX_N:
        raise SizeGuardError(
            f"dense assembly needs n <= {DENSE_MAX_N} (got n={sample.n}); use the Gram path"
        )
    Y = tensor_vectors(sample)
    M = (Y * sample.taus.values) @ Y.T
    return 0.5 * (M + M.T)


def assemble_gram(sample: EnsembleSample) -> np.ndarray:
    """``D^{1/2} (G1 o G2) D^{1/2}`` with ``G_i = F_i^T F_i``; never forms ``n^2`` objects.

    Shares its nonzero spectrum with :func:`assemble_dense`.  The diagonal is
    set to the weights exactly, since every ``Y_a`` has unit norm.
    """
    s = np.sqrt(sample.taus.values)
    K = (sample.F1.T @ sample.F1) * (sample.F2.T @ sample.F2)
    K *= s[:, None]
    K *= s[None, :]
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, sample.taus.values)
    return K
