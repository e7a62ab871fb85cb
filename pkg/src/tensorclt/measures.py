"""Weight distributions for the tensor ensemble.

A :class:`TauMeasure` is a compactly supported probability measure on
``[0, T]``.  It supplies

* deterministic finite sequences ``tau_1, ..., tau_m`` whose counting measure
  approximates it at rate ``O(1/m)`` (largest-remainder apportionment for atoms,
  mid-point quantiles for densities), and
* a fixed quadrature rule ``(nodes, weights)`` used by every integral of the
  form ``int phi(tau) dsigma(tau)`` in the limit formulas.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import stats

from .errors import MeasureError

__all__ = [
    "MeasureError",
    "TauMeasure",
    "TauSequence",
    "integrate",
    "sample_tau_sequence",
    "DENSITIES",
]

QUADRATURE_NODES = 256
WEIGHT_TOL = 1e-12


def _uniform_pdf(x, T):
    return np.full_like(x, 1.0 / T, dtype=float)


def _uniform_ppf(u, T):
    return T * np.asarray(u, dtype=float)


def _beta_pdf(x, T, a, b):
    return stats.beta.pdf(x / T, a, b) / T


def _beta_ppf(u, T, a, b):
    return T * stats.beta.ppf(u, a, b)


# name -> (pdf(x, T, **params), ppf(u, T, **params))
DENSITIES: dict[str, tuple[Callable, Callable]] = {
    "uniform": (_uniform_pdf, _uniform_ppf),
    "beta": (_beta_pdf, _beta_ppf),
}


def _as_weight(w) -> float:
    if isinstance(w, str):
        return float(Fraction(w.strip()))
    return float(w)


@dataclass(frozen=True, eq=False)
class TauMeasure:
    """Probability measure ``sigma`` on ``[0, T]``.

    Use the constructors :meth:`point_mass`, :meth:`mixture` and
    :meth:`continuous` rather than the raw initializer.
    """

    kind: str
    T: float
    atoms: tuple[tuple[float, float], ...] = ()
    density: Callable | None = field(default=None, repr=False)
    ppf: Callable | None = field(default=None, repr=False)
    density_name: str | None = None
    params: dict = field(default_factory=dict)
    n_nodes: int = QUADRATURE_NODES

    def __post_init__(self):
        if self.kind not in ("point_mass", "discrete_mixture", "continuous_density"):
            raise MeasureError(f"unknown measure kind {self.kind!r}")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise MeasureError(f"support bound must be finite and nonnegative, got {self.T}")
        if self.kind == "continuous_density":
            if self.density is None:
                raise MeasureError("continuous measure needs a density")
            if self.T <= 0:
                raise MeasureError("continuous measure needs T > 0")
            return
        if not self.atoms:
            raise MeasureError("discrete measure needs at least one atom")
        locs = np.array([a[0] for a in self.atoms], dtype=float)
        wts = np.array([a[1] for a in self.atoms], dtype=float)
        if np.any(wts <= 0):
            raise MeasureError("atom weights must be positive")
        if abs(wts.sum() - 1.0) > WEIGHT_TOL:
            raise MeasureError(f"atom weights sum to {wts.sum()!r}, not 1")
        if np.any(locs < 0) or np.any(locs > self.T):
            raise MeasureError("atom locations must lie in [0, T]")
        if locs.max() != self.T:
            raise MeasureError("T must equal the largest atom location")

    # -- constructors -----------------------------------------------------
    @classmethod
    def point_mass(cls, t: float) -> "TauMeasure":
        t = float(t)
        return cls(kind="point_mass", T=t, atoms=((t, 1.0),))

    @classmethod
    def mixture(cls, atoms) -> "TauMeasure":
        """Finite mixture from ``[(location, weight), ...]``.

        Weights may be given as strings such as ``"1/3"``; they are parsed
        exactly and must sum to one within 1e-12.
        """
        atoms = tuple((float(t), _as_weight(w)) for t, w in atoms)
        if len(atoms) == 1:
            return cls.point_mass(atoms[0][0])
        T = max(t for t, _ in atoms)
        return cls(kind="discrete_mixture", T=T, atoms=atoms)

    @classmethod
    def continuous(cls, name: str, T: float = 1.0, **params) -> "TauMeasure":
        """Named density from :data:`DENSITIES`, rescaled to ``[0, T]``."""
        if name not in DENSITIES:
            raise MeasureError(f"unknown density {name!r}; known: {sorted(DENSITIES)}")
        pdf, ppf = DENSITIES[name]
        T = float(T)
        return cls(
            kind="continuous_density",
            T=T,
            density=lambda x: pdf(x, T, **params),
            ppf=lambda u: ppf(u, T, **params),
            density_name=name,
            params=dict(params),
        )

    @classmethod
    def from_density(cls, density: Callable, T: float) -> "TauMeasure":
        """Arbitrary density on ``[0, T]``; normalized numerically."""
        return cls(kind="continuous_density", T=float(T), density=density)

    # -- quadrature -------------------------------------------------------
    @cached_property
    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """``(nodes, weights)`` with weights summing to one."""
        if self.kind != "continuous_density":
            t = np.array([a[0] for a in self.atoms], dtype=float)
            w = np.array([a[1] for a in self.atoms], dtype=float)
            return t, w
        u, w = np.polynomial.legendre.leggauss(self.n_nodes)
        x = 0.5 * self.T * (u + 1.0)
        dens = np.asarray(self.density(x), dtype=float)
        if not np.all(np.isfinite(dens)) or np.any(dens < 0):
            raise MeasureError("density must be finite and nonnegative on the quadrature nodes")
        wts = 0.5 * self.T * w * dens
        mass = wts.sum()
        if mass <= 0:
            raise MeasureError("density has zero mass")
        return x, wts / mass

    @property
    def is_zero(self) -> bool:
        """True for the measure concentrated at ``tau = 0``."""
        return self.T == 0.0

    def moment(self, k: int) -> float:
        t, w = self.quadrature
        return float(np.sum(w * t**k))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind != "continuous_density":
            t, w = self.quadrature
            return (w[None, :] * (t[None, :] <= x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)
        grid, cum = self._cdf_table
        return np.interp(x, grid, cum, left=0.0, right=1.0)

    @cached_property
    def _cdf_table(self):
        grid = np.linspace(0.0, self.T, 8193)
        dens = np.asarray(self.density(grid), dtype=float)
        dens = np.where(np.isfinite(dens), dens, 0.0)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        return grid, cum / cum[-1]

    def quantile(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.ppf is not None:
            return np.clip(self.ppf(u), 0.0, self.T)
        grid, cum = self._cdf_table
        return np.interp(u, cum, grid)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        if self.kind == "point_mass":
            return {"kind": "point_mass", "location": self.T}
        if self.kind == "discrete_mixture":
            return {"kind": "discrete_mixture", "atoms": [[t, w] for t, w in self.atoms]}
        if self.density_name is None:
            raise MeasureError("a density given as a bare callable cannot be serialized")
        return {
            "kind": "continuous_density",
            "density": self.density_name,
            "T": self.T,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TauMeasure":
        kind = d.get("kind")
        if kind == "point_mass":
            return cls.point_mass(d["location"])
        if kind == "discrete_mixture":
            m = cls.mixture(d["atoms"])
            if "T" in d and float(d["T"]) != m.T:
                raise MeasureError(f"declared T={d['T']} differs from the largest atom {m.T}")
            return m
        if kind == "continuous_density":
            return cls.continuous(d["density"], d.get("T", 1.0), **d.get("params", {}))
        raise MeasureError(f"unknown measure kind {kind!r}")

    def __eq__(self, other):
        if not isinstance(other, TauMeasure):
            return NotImplemented
        if self.kind == "continuous_density" and self.density_name is None:
            return self is other
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


@dataclass(frozen=True, eq=False)
class TauSequence:
    """The weights ``tau_1 <= ... <= tau_m`` used in one ensemble."""

    values: np.ndarray
    source: TauMeasure

    @property
    def m(self) -> int:
        return len(self.values)

    def counting_measure(self) -> TauMeasure:
        """The normalized counting measure ``sigma_m`` as a discrete measure."""
        locs, counts = np.unique(self.values, return_counts=True)
        return TauMeasure.mixture([(t, str(Fraction(int(k), self.m))) for t, k in zip(locs, counts)])


def integrate(measure: TauMeasure, integrand: Callable) -> complex:
    """Integrate ``integrand`` against ``measure``.

    Atoms are summed exactly; densities use the fixed Gauss-Legendre rule.
    ``integrand`` is called once with the array of nodes and must return an
    array of matching shape (scalar-only callables are evaluated node by
    node).
    """
    t, w = measure.quadrature
    try:
        with np.errstate(all="ignore"):
            vals = np.asarray(integrand(t))
        if vals.shape != t.shape:
            vals = np.broadcast_to(vals, t.shape)
    except (TypeError, ValueError):
        vals = np.array([integrand(float(x)) for x in t])
    bad = ~np.isfinite(vals)
    if np.any(bad):
        node = float(t[np.argmax(bad)])
        raise MeasureError(f"integrand is not finite at tau={node!r}")
    return complex(np.sum(w * vals))


def _largest_remainder(weights: np.ndarray, m: int) -> np.ndarray:
    quotas = weights * m
    counts = np.floor(quotas).astype(np.int64)
    left = m - int(counts.sum())
    if left:
        frac = quotas - counts
        # stable sort keeps atom order among ties
        order = np.argsort(-frac, kind="stable")
        counts[order[:left]] += 1
    return counts


def sample_tau_sequence(measure: TauMeasure, m: int) -> TauSequence:
    """Deterministic weight sequence of length ``m`` approximating ``measure``.

    Atoms: largest-remainder apportionment, so every atom count differs from
    ``w_i * m`` by less than one.  Densities: ``F^{-1}((k - 1/2) / m)`` for
    ``k = 1..m``, which puts the two CDFs within ``1/(2m)`` of each other.
    The result is sorted ascending.
    """
    m = int(m)
    if m < 1:
        raise MeasureError(f"m must be positive, got {m}")
    if measure.kind == "continuous_density":
        u = (np.arange(1, m + 1) - 0.5) / m
        values = np.sort(measure.quantile(u))
    else:
        t, w = measure.quadrature
        counts = _largest_remainder(w, m)
        values = np.sort(np.repeat(t, counts))
    values = np.ascontiguousarray(values, dtype=float)
    values.setflags(write=False)
    return TauSequence(values=values, source=measure)
