"""Limit theory: the Stieltjes transform ``f`` and the covariance kernels.

``f`` is the solution of

    z f(z) = -1 + c - int c dsigma(tau) / (1 + tau f(z)),      Im f * Im z >= 0,

evaluated here in the equivalent form ``z f = -1 + c int tau f / (1 + tau f)``
(exactly ``-1/z`` when ``sigma`` sits at zero).  On top of ``f`` this module
evaluates the bilinear-form kernel ``K``, the resolvent-trace kernel ``C`` (a
mixed second derivative of an explicit potential, taken by Cauchy integrals
on circles) and the 2x2 covariance matrix of ``(Re gamma, Im gamma)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchError, ConsistencyError, ConvergenceError, DomainError, PrecisionWarning
from .measures import TauMeasure

__all__ = [
    "LimitParams",
    "StieltjesSolution",
    "KernelValues",
    "SigmaResult",
    "solve_f",
    "solve_f_many",
    "f_prime",
    "mp_closed_form",
    "kernel_K",
    "kernel_C",
    "kernel_values",
    "kernel_C_diagonal_richardson",
    "covariance_matrix_sigma",
    "lemma_prediction_g1",
    "lemma_prediction_g2",
    "limiting_density",
]

RESIDUAL_TOL = 1e-12
CONTOUR_NODES = 32
RICHARDSON_SEPARATIONS = (1e-2, 5e-3, 2.5e-3)
RICHARDSON_RTOL = 1e-6
SIGMA_IMAG_TOL = 1e-8


@dataclass(frozen=True)
class LimitParams:
    """Aspect ratio, weight measure and the imaginary-part threshold ``eta0``.

    ``eta0`` defaults to ``2 T (c + 1)``; passing a smaller value is an
    explicit override and is reported by :attr:`eta0_overridden`.
    """

    c: float
    measure: TauMeasure
    eta0: float | None = None

    def __post_init__(self):
        if not self.c > 0:
            raise DomainError(f"c must be positive, got {self.c}")
        if self.eta0 is None:
            object.__setattr__(self, "eta0", self.default_eta0)
        elif not self.eta0 >= 0:
            raise DomainError(f"eta0 must be nonnegative, got {self.eta0}")

    @property
    def T(self) -> float:
        return self.measure.T

    @property
    def default_eta0(self) -> float:
        return 2.0 * self.measure.T * (self.c + 1.0)

    @property
    def eta0_overridden(self) -> bool:
        return self.eta0 < self.default_eta0


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    f: complex
    f_prime: complex
    residual: float
    iterations: int
    in_theorem_regime: bool = True


@dataclass(frozen=True)
class KernelValues:
    z1: complex
    z2: complex
    K: complex
    C: complex
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class SigmaResult:
    """Limiting covariance of ``(Re gamma, Im gamma)`` at ``z``."""

    z: complex
    matrix: np.ndarray = field(repr=False)
    V: float
    C_zz: complex
    C_zzbar: complex
    C_zbarzbar: complex
    warnings: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# the functional equation


def _nodes(params: LimitParams):
    return params.measure.quadrature


def _h(z, f, params):
    """Residual ``z f + 1 - c int tau f/(1+tau f)`` and its f-derivative."""
    t, w = _nodes(params)
    c = params.c
    tf = t[:, None] * f[None, :]
    s1 = (w[:, None] * tf / (1.0 + tf)).sum(axis=0)
    s2 = (w[:, None] * t[:, None] / (1.0 + tf) ** 2).sum(axis=0)
    return z * f + 1.0 - c * s1, z - c * s2


def _phi(z, f, params):
    t, w = _nodes(params)
    tf = t[:, None] * f[None, :]
    return (-1.0 + params.c * (w[:, None] * tf / (1.0 + tf)).sum(axis=0)) / z


def _fprime_raw(z, f, params):
    t, w = _nodes(params)
    tf = t[:, None] * np.atleast_1d(f)[None, :]
    denom = params.c * (w[:, None] * t[:, None] / (1.0 + tf) ** 2).sum(axis=0) - z
    return np.atleast_1d(f) / denom, denom


def _fixed_point(z, params, max_iter):
    """Contraction iteration from ``-1/z`` (valid for ``|Im z| >= eta0``)."""
    f = -1.0 / z
    if params.measure.is_zero:
        return f, np.zeros(len(z), dtype=int)
    iters = np.zeros(len(z), dtype=int)
    active = np.ones(len(z), dtype=bool)
    for k in range(max_iter):
        if not active.any():
            break
        new = _phi(z[active], f[active], params)
        step = np.abs(new - f[active])
        f[active] = new
        iters[active] += 1
        done = step <= 1e-15 * np.maximum(np.abs(new), 1e-300)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    # two Newton polishing steps pin the residual at roundoff level
    for _ in range(2):
        h, dh = _h(z, f, params)
        f = f - h / dh
    return f, iters


def _newton(z, f0, params, max_iter=50):
    f = f0
    za = np.array([z])
    for k in range(max_iter):
        h, dh = _h(za, np.array([f]), params)
        res = abs(h[0])
        # converged to roundoff: the step test alone can cycle at the last ulp
        if k > 0 and res <= 4e-16 * (1.0 + abs(z * f)):
            return f, k, res
        step = h[0] / dh[0]
        f = f - step
        if abs(step) <= 1e-15 * max(abs(f), 1e-300):
            h, _ = _h(za, np.array([f]), params)
            return f, k + 1, abs(h[0])
    h, _ = _h(za, np.array([f]), params)
    return f, max_iter, abs(h[0])


def _continuation(z, params, max_steps=20000):
    """Newton continuation down a vertical path from a high anchor."""
    xi, eta = z.real, z.imag
    anchor = max(params.default_eta0, 4.0 * eta, 1.0)
    za = np.array([complex(xi, anchor)])
    f, iters = _fixed_point(za, params, 500)
    f = complex(f[0])
    total = int(iters[0])
    cur = anchor
    ratio = 0.7
    steps = 0
    while cur > eta:
        nxt = max(eta, cur * ratio)
        cand, k, res = _newton(complex(xi, nxt), f, params)
        total += k
        steps += 1
        if steps > max_steps:
            raise ConvergenceError(f"continuation to z={z} did not finish", res)
        ok = k < 50 and math.isfinite(cand.real) and cand.imag > 0 and abs(cand - f) < 0.5 * abs(f) + 1.0 / nxt
        if not ok:
            ratio = math.sqrt(ratio)
            if ratio > 0.999999:
                raise ConvergenceError(f"continuation step size collapsed near z={complex(xi, nxt)}", res)
            continue
        f, cur = cand, nxt
        ratio = max(0.5, ratio * ratio)
    return f, total


def solve_f_many(zs, params: LimitParams, max_iter: int = 500) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized solver: ``(f, residual, iterations)`` for an array of points."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    if np.any(zs.imag == 0):
        raise DomainError("the functional equation is solved off the real axis only")
    if params.measure.is_zero:
        f = -1.0 / zs
        return f, np.abs(zs * f + 1.0), np.zeros(len(zs), dtype=int)
    lower = zs.imag < 0
    zu = np.where(lower, zs.conj(), zs)
    f = np.empty(len(zu), dtype=complex)
    iters = np.zeros(len(zu), dtype=int)
    high = (zu.imag >= params.default_eta0) | params.measure.is_zero
    if high.any():
        f[high], iters[high] = _fixed_point(zu[high], params, max_iter)
    for i in np.flatnonzero(~high):
        f[i], iters[i] = _continuation(zu[i], params)
    res = np.abs(_h(zu, f, params)[0])
    if np.any(~np.isfinite(f)):
        raise ConvergenceError("solver produced a non-finite value", float("nan"))
    bad = res > RESIDUAL_TOL
    if bad.any():
        i = int(np.argmax(res))
        raise ConvergenceError(
            f"residual {res[i]:.3e} above {RESIDUAL_TOL:.0e} at z={zs[i]}", float(res[i])
        )
    if np.any(f.imag < 0):
        i = int(np.argmin(f.imag))
        raise BranchError(f"solution at z={zs[i]} has Im f < 0 (wrong branch)")
    f = np.where(lower, f.conj(), f)
    return f, res, iters


def solve_f(z: complex, params: LimitParams) -> StieltjesSolution:
    """Stieltjes transform of the limiting spectral measure at ``z``.

    For ``|Im z| >= 2T(c+1)`` the fixed-point map is a contraction and is
    iterated from ``-1/z``; closer to the axis the solution is continued by
    Newton steps down from that region.  The returned residual is at most
    1e-12 and ``Im f * Im z >= 0`` holds.
    """
    z = complex(z)
    f, res, it = solve_f_many([z], params)
    fp, _ = _fprime_raw(np.array([z]), f, params)
    return StieltjesSolution(
        z=z,
        f=complex(f[0]),
        f_prime=complex(fp[0]),
        residual=float(res[0]),
        iterations=int(it[0]),
        in_theorem_regime=abs(z.imag) >= params.eta0,
    )


def f_prime(z: complex, f: complex, params: LimitParams) -> complex:
    """``f' = f / (int c tau dsigma / (1 + tau f)^2 - z)`` (implicit differentiation)."""
    fp, denom = _fprime_raw(np.array([complex(z)]), np.array([complex(f)]), params)
    if abs(denom[0]) < params.eta0 / 4:
        raise DomainError(
            f"|int c tau/(1+tau f)^2 - z| = {abs(denom[0]):.3e} is below eta0/4 at z={z}"
        )
    return complex(fp[0])


def mp_closed_form(z: complex, c: float, t0: float) -> complex:
    """Root of ``z t0 f^2 + (z + t0 - c t0) f + 1 = 0`` in the Stieltjes class.

    This is the functional equation with all weights equal to ``t0``.
    """
    z = complex(z)
    if t0 <= 0:
        raise DomainError("closed form needs t0 > 0")
    if z.imag == 0:
        raise DomainError("closed form needs Im z != 0")
    a = z * t0
    b = z + t0 - c * t0
    d = np.sqrt(b * b - 4.0 * a)
    if (b.conjugate() * d).real < 0:
        d = -d
    q = -0.5 * (b + d)
    roots = [q / a, 1.0 / q]
    good = [r for r in roots if r.imag * z.imag >= 0 and abs(r) <= 1.0 / abs(z.imag) * (1 + 1e-12)]
    if not good:
        raise BranchError(f"no root of the quadratic is a Stieltjes transform at z={z}")
    return complex(min(good, key=lambda r: abs(r + 1.0 / z)))


# ---------------------------------------------------------------------------
# kernels


def _f_pair(z1, z2, params):
    f, _, _ = solve_f_many([z1, z2], params)
    return complex(f[0]), complex(f[1])


def kernel_K(z1: complex, z2: complex, params: LimitParams, tau_power: int = 4) -> complex:
    """Limit of ``n^2 Cov{(G Y, Y)(z1), (G Y, Y)(z2)}``.

    ``-2 f1 f2 + 2 (f1 - f2)/(z1 - z2) + int 6 c tau^p f1^2 f2^2 dsigma / ((1 + tau f1)(1 + tau f2))``
    with ``p = tau_power`` (4 as printed in the source formula).  The
    difference quotient becomes ``f'(z1)`` when ``|z1 - z2| < 1e-8``.
    """
    z1, z2 = complex(z1), complex(z2)
    if z1.imag == 0 or z2.imag == 0:
        raise DomainError("kernel_K needs non-real arguments")
    if params.measure.is_zero:
        return 0j
    f1, f2 = _f_pair(z1, z2, params)
    if abs(z1 - z2) < 1e-8:
        dq = complex(_fprime_raw(np.array([z1]), np.array([f1]), params)[0][0])
    else:
        dq = (f1 - f2) / (z1 - z2)
    t, w = _nodes(params)
    c = params.c
    integral = np.sum(w * 6 * c * t**tau_power * f1**2 * f2**2 / ((1 + t * f1) * (1 + t * f2)))
    return complex(-2 * f1 * f2 + 2 * dq + integral)


def _potential(w1, w2, f1, f2, q_ref, params):
    """``2 log(df/dz) + 2 f1 f2 dz/df + 3 int c^2 tau^4 f1^2 f2^2 / ((1+tau f1)^2 (1+tau f2)^2)``.

    Evaluated on the grid ``w1[:, None] x w2[None, :]``.  The logarithm is
    taken relative to ``q_ref``; a constant shift has no mixed derivative.
    """
    q = (f1[:, None] - f2[None, :]) / (w1[:, None] - w2[None, :])
    ratio = q / q_ref
    if np.max(np.abs(np.angle(ratio))) > 0.75 * np.pi:
        raise _BranchCrossing()
    t, w = _nodes(params)
    c = params.c
    u1 = f1[None, :] ** 2 / (1 + t[:, None] * f1[None, :]) ** 2
    u2 = f2[None, :] ** 2 / (1 + t[:, None] * f2[None, :]) ** 2
    integral = np.einsum("k,ki,kj->ij", w * c * c * t**4, u1, u2)
    return 2 * np.log(ratio) + 2 * f1[:, None] * f2[None, :] / q + 3 * integral


class _BranchCrossing(Exception):
    pass


def _contour_radii(z1, z2):
    rho = min(abs(z1.imag), abs(z2.imag))
    d = abs(z1 - z2)
    if d >= rho / 8:
        r = min(rho / 4, d / 4)
        return r, r
    # nested circles around nearly coincident centres; nodes stay rho/12 apart
    r1 = rho / 3
    return r1, r1 - d - rho / 12


def _mixed_partial_contour(z1, z2, params, r1, r2, N):
    k = np.arange(N)
    e = np.exp(2j * np.pi * k / N)
    w1 = z1 + r1 * e
    w2 = z2 + r2 * e
    f, _, _ = solve_f_many(np.concatenate([w1, w2]), params)
    f1, f2 = f[:N], f[N:]
    fc, _, _ = solve_f_many([z1, z2], params)
    if abs(z1 - z2) > 0:
        q_ref = (fc[0] - fc[1]) / (z1 - z2)
    else:
        q_ref = _fprime_raw(np.array([z1]), fc[:1], params)[0][0]
    F = _potential(w1, w2, f1, f2, q_ref, params)
    return complex(np.einsum("ij,i,j->", F, 1 / e, 1 / e) / (N * N * r1 * r2))


def _contour(z1, z2, params, N, radii=None):
    r1, r2 = radii if radii is not None else _contour_radii(z1, z2)
    for _ in range(4):
        try:
            return _mixed_partial_contour(z1, z2, params, r1, r2, N)
        except _BranchCrossing:
            r1, r2 = r1 / 2, r2 / 2
    raise DomainError(f"log branch of the potential could not be tracked near ({z1}, {z2})")


def _finite_difference(z1, z2, params):
    rho = min(abs(z1.imag), abs(z2.imag))
    h = 1e-3 * rho
    if abs(z1 - z2) < 8 * h:
        raise DomainError("finite-difference kernel needs well separated arguments")
    w1 = np.array([z1 + h, z1 - h])
    w2 = np.array([z2 + h, z2 - h])
    f, _, _ = solve_f_many(np.concatenate([w1, w2]), params)
    q_ref = (f[0] - f[2]) / (w1[0] - w2[0])
    F = _potential(w1, w2, f[:2], f[2:], q_ref, params)
    return complex((F[0, 0] - F[0, 1] - F[1, 0] + F[1, 1]) / (4 * h * h))


def kernel_C_diagonal_richardson(z: complex, params: LimitParams, separations=RICHARDSON_SEPARATIONS,
                                 radii: str = "nested"):
    """``C(z, z)`` as the limit of ``C(z, z + i s delta)`` over three separations.

    Returns ``(value, relative_spread)``: the extrapolant (error ``O(h^3)``)
    and its relative disagreement with the direct nested-contour diagonal.
    The spread is therefore a cross-check of two independent evaluations;
    the gap between the first- and second-order extrapolants would instead
    measure the ``O(h^2)`` error of the weaker one.  ``radii="disjoint"``
    evaluates every separated point on two disjoint circles of radius
    ``delta/4``, ``"nested"`` uses the default contour layout.
    """
    z = complex(z)
    s = 1.0 if z.imag > 0 else -1.0
    h = np.asarray(separations, dtype=float)
    if len(h) != 3 or not (np.allclose(h[1] / h[0], 0.5) and np.allclose(h[2] / h[1], 0.5)):
        raise ValueError("Richardson extrapolation expects three halving separations")
    vals = []
    for d in h:
        z2 = z + 1j * s * d
        rr = (d / 4, d / 4) if radii == "disjoint" else None
        vals.append(_contour(z, z2, params, CONTOUR_NODES, rr))
    v0, v1, v2 = vals
    r1a, r1b = 2 * v1 - v0, 2 * v2 - v1
    r2 = (4 * r1b - r1a) / 3
    direct = _contour(z, z, params, CONTOUR_NODES, None)
    spread = abs(r2 - direct) / max(abs(r2), 1e-300)
    return complex(r2), float(spread)


def kernel_C(z1: complex, z2: complex, params: LimitParams, method: str = "contour",
             nodes: int = CONTOUR_NODES) -> complex:
    """Limiting bilinear covariance of the resolvent traces at ``z1``, ``z2``.

    The mixed derivative ``d^2/dz1 dz2`` of the potential (see
    :func:`_potential`) is taken by the trapezoid rule on two circles,
    ``nodes`` points each.  Well separated arguments use circles of radius
    ``min(rho/4, |z1 - z2|/4)`` with ``rho = min |Im z_i|``.  Nearly equal
    arguments (including the diagonal) use nested circles of radii ``rho/3``
    and ``rho/3 - |z1 - z2| - rho/12``: the potential is analytic across
    ``z1 = z2`` and the nodes never meet.

    ``method="richardson"`` instead takes near-diagonal values as the limit
    over separations ``1e-2, 5e-3, 2.5e-3`` and warns with
    :class:`PrecisionWarning` if the extrapolation spread exceeds 1e-6.
    ``method="finite_difference"`` is a second-order cross-check for
    separated arguments.
    """
    z1, z2 = complex(z1), complex(z2)
    if z1.imag == 0 or z2.imag == 0:
        raise DomainError("contour around a real point would cross the real axis")
    if params.measure.is_zero:
        return 0j
    # the potential is symmetric; a canonical order makes C exactly symmetric
    if (z2.real, z2.imag) < (z1.real, z1.imag):
        z1, z2 = z2, z1
    if method == "contour":
        return _contour(z1, z2, params, nodes)
    if method == "finite_difference":
        return _finite_difference(z1, z2, params)
    if method == "richardson":
        rho = min(abs(z1.imag), abs(z2.imag))
        if abs(z1 - z2) >= rho / 8:
            return _contour(z1, z2, params, nodes)
        if abs(z1 - z2) > 0:
            raise DomainError("Richardson mode evaluates the exact diagonal only")
        value, spread = kernel_C_diagonal_richardson(z1, params)
        if spread > RICHARDSON_RTOL:
            warnings.warn(
                f"diagonal C({z1}) extrapolation spread {spread:.2e} exceeds {RICHARDSON_RTOL:.0e}",
                PrecisionWarning,
                stacklevel=2,
            )
        return value
    raise ValueError(f"unknown method {method!r}")


def _collect(fn, *args, **kwargs):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PrecisionWarning)
        value = fn(*args, **kwargs)
    return value, tuple(str(w.message) for w in caught if issubclass(w.category, PrecisionWarning))


def kernel_values(z1: complex, z2: complex, params: LimitParams, method: str = "contour") -> KernelValues:
    C, notes = _collect(kernel_C, z1, z2, params, method=method)
    return KernelValues(complex(z1), complex(z2), kernel_K(z1, z2, params), C, notes)


def covariance_matrix_sigma(z: complex, params: LimitParams, allow_small_eta: bool = False,
                            method: str = "contour") -> SigmaResult:
    """2x2 covariance of the limit of ``(Re gamma, Im gamma)`` and ``V(z) = Sigma_22``."""
    z = complex(z)
    if abs(z.imag) < params.eta0 and not allow_small_eta:
        raise DomainError(f"|Im z| = {abs(z.imag)} is below eta0 = {params.eta0}")
    zb = z.conjugate()
    notes = []
    Czz, w1 = _collect(kernel_C, z, z, params, method=method)
    Czb, w2 = _collect(kernel_C, z, zb, params, method=method)
    Cbb, w3 = _collect(kernel_C, zb, zb, params, method=method)
    notes.extend(w1 + w2 + w3)
    s11 = 0.25 * (2 * Czb + Czz + Cbb)
    s12 = (Czz - Cbb) / 4j
    s22 = 0.25 * (2 * Czb - Czz - Cbb)
    for name, v in (("Sigma_11", s11), ("Sigma_12", s12), ("Sigma_22", s22)):
        if abs(v.imag) > SIGMA_IMAG_TOL:
            raise ConsistencyError(f"{name} has imaginary residue {v.imag:.3e}")
    S = np.array([[s11.real, s12.real], [s12.real, s22.real]])
    return SigmaResult(z, S, float(s22.real), Czz, Czb, Cbb, tuple(notes))


# ---------------------------------------------------------------------------
# finite-n predictions and densities


def _lemma_integral(z1, z2, params):
    f1, f2 = _f_pair(z1, z2, params)
    t, w = _nodes(params)
    I = np.sum(w * params.c * t**2 * f1**2 * f2**2 / ((1 + t * f1) * (1 + t * f2)))
    return f1, f2, complex(I)


def lemma_prediction_g1(z1, z2, params: LimitParams, n: int) -> complex:
    """``f1 f2 + (1/n) int c tau^2 f1^2 f2^2 / ((1+tau f1)(1+tau f2))``."""
    f1, f2, I = _lemma_integral(complex(z1), complex(z2), params)
    return f1 * f2 + I / n


def lemma_prediction_g2(z1, z2, params: LimitParams) -> complex:
    """``f1 f2 + int c tau^2 f1^2 f2^2 / ((1+tau f1)(1+tau f2))``."""
    f1, f2, I = _lemma_integral(complex(z1), complex(z2), params)
    return f1 * f2 + I


def limiting_density(x, params: LimitParams, eta: float = 1e-9) -> np.ndarray:
    """``Im f(x + i eta) / pi``: the absolutely continuous part of the limit law.

    Point-mass measures use :func:`mp_closed_form`; others use continuation.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if params.measure.kind == "point_mass" and params.T > 0:
        vals = np.array([mp_closed_form(complex(xi, eta), params.c, params.T) for xi in x])
    else:
        vals, _, _ = solve_f_many(x + 1j * eta, params)
    return vals.imag / np.pi
