"""Spectra, resolvent traces and index contractions for the tensor ensemble.

Two spectral paths are provided: the dense ``n^2 x n^2`` matrix and the
``m x m`` Gram dual.  Both return a :class:`SpectralSample` with the ``n^2``
eigenvalues of ``M``.

Resolvent matrices are ``n^2 x n^2`` arrays in the ``(j, s) -> j*n + s`` row
convention of :mod:`tensorclt.sampler`.  Viewed as a four-index tensor
``G[j, s, p, q]`` the two auxiliary sums reduce to partial traces and a
partial transpose, which costs ``O(n^4)`` instead of a naive loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConsistencyError, DomainError
from .sampler import EnsembleSample

__all__ = [
    "RESOLVENT_MAX_N",
    "ConsistencyError",
    "SpectralSample",
    "ResolventMatrix",
    "eigenvalues_dense",
    "eigenvalues_dual",
    "spectrum_of",
    "gamma",
    "g_n",
    "esd_histogram",
    "resolvent_dense",
    "resolvent_from_eigh",
    "partial_trace",
    "g1",
    "g2",
    "quadratic_forms",
    "cov_quadratic_forms",
    "var_quadratic_form_predicted",
]

RESOLVENT_MAX_N = 32
ZERO_EIG_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class SpectralSample:
    eigenvalues: np.ndarray
    n: int
    path: str
    m: int | None = None
    c: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if len(self.eigenvalues) != self.n * self.n:
            raise ConsistencyError(
                f"expected {self.n * self.n} eigenvalues, got {len(self.eigenvalues)}"
            )


@dataclass(frozen=True, eq=False)
class ResolventMatrix:
    """``G(z) = (M - z)^{-1}``, read-only."""

    z: complex
    entries: np.ndarray = field(repr=False)
    n: int

    def __post_init__(self):
        if self.entries.shape != (self.n * self.n, self.n * self.n):
            raise ValueError("resolvent has the wrong shape for n")
        self.entries.setflags(write=False)

    def tensor(self) -> np.ndarray:
        """View as ``G[j, s, p, q]``."""
        return self.entries.reshape(self.n, self.n, self.n, self.n)


def _provenance(sample: EnsembleSample | None) -> dict:
    if sample is None:
        return {}
    cfg = sample.config
    return {"m": sample.m, "c": cfg.c, "seed": int(cfg.seed)}


def _side(dim: int) -> int:
    n = int(round(np.sqrt(dim)))
    if n * n != dim:
        raise ValueError(f"matrix dimension {dim} is not a perfect square")
    return n


def eigenvalues_dense(M: np.ndarray, sample: EnsembleSample | None = None) -> SpectralSample:
    n = _side(M.shape[0])
    try:
        w = linalg.eigvalsh(M)
    except linalg.LinAlgError as exc:
        raise ConsistencyError(f"dense eigensolve failed for n={n}: {exc}") from exc
    return SpectralSample(np.sort(w), n, "dense", **_provenance(sample))


def eigenvalues_dual(K: np.ndarray, n: int, sample: EnsembleSample | None = None) -> SpectralSample:
    """Spectrum of ``M`` from its Gram dual ``K``.

    When ``m <= n^2`` the missing ``n^2 - m`` eigenvalues are zeros; when
    ``m > n^2`` the ``m - n^2`` eigenvalues of smallest modulus are dropped
    after checking they are zero to ``1e-8 * ||K||``.
    """
    m = K.shape[0]
    N = n * n
    try:
        w = linalg.eigvalsh(K)
    except linalg.LinAlgError as exc:
        raise ConsistencyError(f"Gram eigensolve failed for m={m}: {exc}") from exc
    if m <= N:
        w = np.concatenate([w, np.zeros(N - m)])
    else:
        extra = m - N
        order = np.argsort(np.abs(w), kind="stable")
        scale = np.max(np.abs(w)) if m else 0.0
        worst = abs(w[order[extra - 1]])
        if worst > ZERO_EIG_RTOL * scale:
            raise ConsistencyError(
                f"Gram matrix has fewer than {extra} null eigenvalues "
                f"(|lambda|={worst:.3e} > {ZERO_EIG_RTOL:.0e}*{scale:.3e})"
            )
        w = w[np.sort(order[extra:])]
    return SpectralSample(np.sort(w), n, "gram_dual", **_provenance(sample))


def spectrum_of(sample: EnsembleSample, path: str = "gram_dual") -> SpectralSample:
    from .sampler import assemble_dense, assemble_gram

    if path == "dense":
        return eigenvalues_dense(assemble_dense(sample), sample)
    if path == "gram_dual":
        return eigenvalues_dual(assemble_gram(sample), sample.n, sample)
    raise ValueError(f"unknown spectral path {path!r}")


def _gamma_upper(lam: np.ndarray, z: np.ndarray) -> np.ndarray:
    zero = lam == 0.0
    nz = lam[~zero]
    out = np.sum(1.0 / (nz[None, :] - z[:, None]), axis=1) if nz.size else np.zeros(len(z), complex)
    n0 = int(zero.sum())
    if n0:
        out = out + n0 * (-1.0 / z)
    return out


def gamma(spectrum: SpectralSample | np.ndarray, z) -> complex | np.ndarray:
    """Resolvent trace ``sum_j 1 / (lambda_j - z)``; ``z`` may be an array.

    Lower half-plane values are conjugates of the upper ones, so that
    ``gamma(conj z) == conj(gamma(z))`` holds bit for bit.
    """
    lam = spectrum.eigenvalues if isinstance(spectrum, SpectralSample) else np.asarray(spectrum)
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(zs.imag == 0):
        raise ValueError("gamma needs Im z != 0")
    lower = zs.imag < 0
    out = _gamma_upper(lam, np.where(lower, zs.conj(), zs))
    out = np.where(lower, out.conj(), out)
    return out[0] if np.ndim(z) == 0 else out


def g_n(spectrum: SpectralSample, z):
    """Normalized trace ``gamma / n^2`` (the empirical Stieltjes transform)."""
    return gamma(spectrum, z) / spectrum.n**2


def esd_histogram(spectrum: SpectralSample, edges) -> np.ndarray:
    """Mass of the normalized eigenvalue counting measure in each bin."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(spectrum.eigenvalues, bins=edges)
    return counts / spectrum.n**2


def resolvent_dense(M: np.ndarray, z: complex) -> ResolventMatrix:
    """``(M - z)^{-1}`` by a complex symmetric factorization."""
    n = _side(M.shape[0])
    if n > RESOLVENT_MAX_N:
        raise DomainError(f"dense resolvent needs n <= {RESOLVENT_MAX_N}, got n={n}")
    z = complex(z)
    if z.imag == 0:
        raise ValueError("resolvent needs Im z != 0")
    A = M.astype(complex) - z * np.eye(n * n)
    G = linalg.solve(A, np.eye(n * n, dtype=complex), assume_a="sym")
    return ResolventMatrix(z, 0.5 * (G + G.T), n)


def resolvent_from_eigh(w: np.ndarray, U: np.ndarray, z: complex) -> ResolventMatrix:
    """Resolvent from an eigendecomposition ``M = U diag(w) U^T``."""
    n = _side(len(w))
    z = complex(z)
    return ResolventMatrix(z, (U / (w - z)) @ U.T, n)


def _as_tensor(G) -> tuple[np.ndarray, int]:
    if isinstance(G, ResolventMatrix):
        return G.tensor(), G.n
    G = np.asarray(G)
    n = _side(G.shape[0])
    return G.reshape(n, n, n, n), n


def partial_trace(G, factor: int = 2) -> np.ndarray:
    """``n x n`` partial trace over tensor factor 1 or 2.

    ``factor=2`` gives ``T[j, p] = sum_s G[(j,s),(p,s)]``; ``factor=1`` gives
    ``T[s, q] = sum_j G[(j,s),(j,q)]``.
    """
    A, _ = _as_tensor(G)
    if factor == 2:
        return np.einsum("jsps->jp", A)
    if factor == 1:
        return np.einsum("jsjq->sq", A)
    raise ValueError("factor must be 1 or 2")


def _sum1(A, B, mirrored=False) -> complex:
    f = 1 if mirrored else 2
    return complex(np.sum(partial_trace(A, f) * partial_trace(B, f)))


def _sum2(A, B) -> complex:
    # sum_{j,s,p,q} A[j,s,p,q] * B[p,s,j,q]
    a, _ = _as_tensor(A)
    b, _ = _as_tensor(B)
    return complex(np.sum(a * b.transpose(2, 1, 0, 3)))


def _check_pair(Ga, Gb) -> int:
    na = Ga.n if isinstance(Ga, ResolventMatrix) else _side(np.shape(Ga)[0])
    nb = Gb.n if isinstance(Gb, ResolventMatrix) else _side(np.shape(Gb)[0])
    if na != nb:
        raise ValueError(f"dimension mismatch: n={na} vs n={nb}")
    return na


def g1(Ga, Gb, mirrored: bool = False) -> complex:
    """``n^{-3} sum G_{js,ps}(z1) G_{jq,pq}(z2)``.

    ``mirrored=True`` traces over the other factor,
    ``n^{-3} sum G_{sj,sp}(z1) G_{qj,qp}(z2)``.
    """
    n = _check_pair(Ga, Gb)
    return _sum1(Ga, Gb, mirrored) / n**3


def g2(Ga, Gb) -> complex:
    """``n^{-2} sum G_{js,pq}(z1) G_{ps,jq}(z2)`` via a partial transpose of ``Gb``."""
    n = _check_pair(Ga, Gb)
    return _sum2(Ga, Gb) / n**2


def quadratic_forms(Galpha, Y: np.ndarray, tau: float) -> tuple[complex, complex]:
    """``A = 1 + tau (G Y, Y)`` and ``B = tau (G^2 Y, Y)`` (bilinear, no conjugation)."""
    G = Galpha.entries if isinstance(Galpha, ResolventMatrix) else np.asarray(Galpha)
    GY = G @ Y
    A = 1.0 + tau * complex(GY @ Y)
    B = tau * complex(GY @ GY)
    return A, B


def _a22(n: int) -> float:
    return 1.0 / (n * n * (n + 2) ** 2)


def _sym(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + H.T)


def cov_quadratic_forms(H1, H2, variant: str = "symmetrized") -> complex:
    """Exact ``Cov{(H1 Y, Y), (H2 Y, Y)}`` (bilinear) for one tensor vector ``Y``.

    Only the symmetric parts of ``H1``, ``H2`` matter.  The fourth-moment
    expansion produces two partial-trace sums, one per tensor factor;
    ``variant`` chooses how they enter:

    ``"symmetrized"``
        both, with weight 2 each (exact for every ``H``);
    ``"paper"``
        the factor-2 trace with weight 4;
    ``"mirrored"``
        the factor-1 trace with weight 4.

    The last two coincide with the first when ``H`` is symmetric under
    swapping the tensor factors, and are asymptotically equal for resolvents.
    """
    H1 = _sym(np.asarray(H1.entries if isinstance(H1, ResolventMatrix) else H1))
    H2 = _sym(np.asarray(H2.entries if isinstance(H2, ResolventMatrix) else H2))
    n = _check_pair(H1, H2)
    a = _a22(n)
    tr = np.trace(H1) * np.trace(H2)
    trp = np.sum(H1 * H2.T)
    if variant == "symmetrized":
        pt = 2.0 * (_sum1(H1, H2) + _sum1(H1, H2, mirrored=True))
    elif variant == "paper":
        pt = 4.0 * _sum1(H1, H2)
    elif variant == "mirrored":
        pt = 4.0 * _sum1(H1, H2, mirrored=True)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return complex((a - float(n) ** -4) * tr + 2 * a * trp + a * pt + 2 * a * _sum2(H1, H2))


def var_quadratic_form_predicted(H, variant: str = "symmetrized") -> float:
    """``E |(H Y, Y) - E (H Y, Y)|^2`` from the fourth-moment identity."""
    H = np.asarray(H.entries if isinstance(H, ResolventMatrix) else H)
    v = cov_quadratic_forms(H, H.conj(), variant).real
    # the exact form is a variance; only roundoff can push it below zero
    return max(v, 0.0) if variant == "symmetrized" else v
