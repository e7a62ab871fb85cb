"""Monte Carlo laboratory: replica runs and finite-n vs. limit comparisons.

Every replica is an independent ensemble whose seed is derived from
``(master_seed, n, replica index)`` only, so any subset of replicas (a shard,
a prefix, a run with a different worker count) reproduces the same numbers.

Covariances of complex statistics are *bilinear*, ``E[A° B°]`` without
conjugation; ``Cov(gamma(z), gamma(conj z))`` is then the ordinary variance.
Standard errors are leave-one-replica-out jackknife errors throughout.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DomainError
from .limit import (
    LimitParams,
    covariance_matrix_sigma,
    kernel_C,
    kernel_K,
    lemma_prediction_g1,
    lemma_prediction_g2,
    solve_f,
)
from .measures import TauMeasure
from .resolvent import (
    cov_quadratic_forms,
    eigenvalues_dual,
    g1,
    g2,
    gamma,
    resolvent_from_eigh,
)
from .sampler import EnsembleConfig, assemble_dense, assemble_gram, draw_ensemble

__all__ = [
    "G_MAX_N",
    "KN_MAX_N",
    "ExperimentConfig",
    "ReplicaSet",
    "QuadFormSet",
    "Comparison",
    "CltReport",
    "replica_seed",
    "run_replicas",
    "run_quadform_replicas",
    "bilinear_cov",
    "estimate_bilinear_cov",
    "empirical_sigma",
    "empirical_char_function",
    "standardized_moments",
    "clt_report",
    "lemma_checks",
    "variance_scaling_study",
    "kernel_Kn_estimate",
    "higher_moment_diagnostic",
]

G_MAX_N = 16
KN_MAX_N = 16
DEFAULT_X_GRID = tuple(float(x) for x in np.arange(-3.0, 3.0 + 0.25, 0.5))


# ---------------------------------------------------------------------------
# configuration and seeding


@dataclass(frozen=True)
class ExperimentConfig:
    """Replica experiment over several factor dimensions.

    ``R`` replicas are drawn for every ``n`` unless ``R_overrides`` (pairs
    ``(n, R)``) says otherwise.  ``z_points`` must satisfy ``|Im z| >= eta0``
    unless ``allow_small_eta`` is set.
    """

    c: float
    measure: TauMeasure
    n_list: tuple[int, ...]
    R: int
    z_points: tuple[complex, ...]
    x_grid: tuple[float, ...] = DEFAULT_X_GRID
    master_seed: int = 0
    allow_small_eta: bool = False
    R_overrides: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "z_points", tuple(complex(z) for z in self.z_points))
        object.__setattr__(self, "x_grid", tuple(float(x) for x in self.x_grid))
        object.__setattr__(self, "R_overrides", tuple((int(n), int(r)) for n, r in self.R_overrides))
        if self.R < 2 or any(r < 2 for _, r in self.R_overrides):
            raise DomainError("an experiment needs at least R = 2 replicas")
        if any(n < 1 for n in self.n_list):
            raise DomainError("factor dimensions must be positive")
        if not 0 <= int(self.master_seed) < 2**64:
            raise DomainError("master_seed must be a 64-bit unsigned integer")
        for z in self.z_points:
            if z.imag == 0:
                raise DomainError(f"z = {z} is real")
            if abs(z.imag) < self.params.eta0 and not self.allow_small_eta:
                raise DomainError(
                    f"|Im z| = {abs(z.imag)} < eta0 = {self.params.eta0} for z = {z}; "
                    "set allow_small_eta to leave the theorem's regime"
                )

    @property
    def params(self) -> LimitParams:
        return LimitParams(self.c, self.measure)

    def replicas_for(self, n: int) -> int:
        return dict(self.R_overrides).get(int(n), self.R)

    def ensemble(self, n: int, seed: int = 0) -> EnsembleConfig:
        return EnsembleConfig(n=n, c=self.c, measure=self.measure, seed=seed)


def replica_seed(master_seed: int, n: int, r: int) -> int:
    """64-bit seed of replica ``r`` at dimension ``n``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(n), int(r)))
    return int(ss.generate_state(1, np.uint64)[0])


def _workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("TENSORCLT_THREADS", "1"))
    return max(1, int(threads))


def _map_chunks(fn, args_list, threads):
    """Apply ``fn`` to every argument tuple; results come back in input order."""
    k = _workers(threads)
    if k == 1 or len(args_list) < 2:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, *zip(*args_list)))


def _chunks(start, stop, size):
    return [(a, min(a + size, stop)) for a in range(start, stop, size)]


# ---------------------------------------------------------------------------
# replica sets


@dataclass(frozen=True, eq=False)
class ReplicaSet:
    """Resolvent traces of ``R`` replicas at a fixed list of points.

    ``gamma_values[r, k]`` is ``gamma_n(z_k)`` in replica ``start + r``;
    ``g1_values[r, k, l]`` / ``g2_values[r, k, l]`` hold the index sums at
    ``(z_k, z_l)`` when they were computed (``n <= 16``).
    """

    n: int
    c: float
    measure: TauMeasure
    z_points: tuple[complex, ...]
    seeds: np.ndarray
    gamma_values: np.ndarray
    g1_values: np.ndarray | None = None
    g2_values: np.ndarray | None = None
    start: int = 0
    master_seed: int = 0

    @property
    def R(self) -> int:
        return self.gamma_values.shape[0]

    @property
    def g_values(self) -> np.ndarray:
        return self.gamma_values / (self.n * self.n)

    def head(self, R: int) -> "ReplicaSet":
        """The first ``R`` replicas."""
        if R > self.R:
            raise DomainError(f"requested {R} replicas, only {self.R} available")
        cut = lambda a: None if a is None else a[:R]
        return ReplicaSet(self.n, self.c, self.measure, self.z_points, self.seeds[:R],
                          self.gamma_values[:R], cut(self.g1_values), cut(self.g2_values),
                          self.start, self.master_seed)

    @classmethod
    def concat(cls, parts) -> "ReplicaSet":
        """Join shards ``[a, b), [b, c), ...`` in replica order."""
        parts = sorted(parts, key=lambda p: p.start)
        first = parts[0]
        for a, b in zip(parts, parts[1:]):
            if b.start != a.start + a.R:
                raise DomainError(f"shards are not contiguous: {a.start}+{a.R} != {b.start}")
            if (b.n, b.c, b.z_points, b.master_seed) != (a.n, a.c, a.z_points, a.master_seed):
                raise DomainError("shards come from different experiments")
        cat = lambda name: None if getattr(first, name) is None else np.concatenate([getattr(p, name) for p in parts])
        return cls(first.n, first.c, first.measure, first.z_points, cat("seeds"), cat("gamma_values"),
                   cat("g1_values"), cat("g2_values"), first.start, first.master_seed)

    # -- CSV ----------------------------------------------------------------
    def _meta(self):
        return {
            "kind": "gamma",
            "n": self.n,
            "c": self.c,
            "measure": self.measure.to_dict(),
            "z_points": [[z.real, z.imag] for z in self.z_points],
            "start": self.start,
            "master_seed": self.master_seed,
        }

    def to_csv(self, path) -> None:
        Z = len(self.z_points)
        header = ["replica", "seed"]
        header += [f"gamma_{p}_{k}" for k in range(Z) for p in ("re", "im")]
        blocks = [_ri(self.gamma_values)]
        for name, arr in (("g1", self.g1_values), ("g2", self.g2_values)):
            if arr is not None:
                header += [f"{name}_{p}_{k}_{l}" for k in range(Z) for l in range(Z) for p in ("re", "im")]
                blocks.append(_ri(arr.reshape(self.R, Z * Z)))
        _write_csv(path, self._meta(), header, self.start, self.seeds, np.hstack(blocks))

    @classmethod
    def from_csv(cls, path) -> "ReplicaSet":
        meta, header, idx, seeds, data = _read_csv(path)
        if meta.get("kind") != "gamma":
            raise DomainError(f"{path} is not a resolvent-trace replica file")
        zs = tuple(complex(a, b) for a, b in meta["z_points"])
        Z = len(zs)
        cols = {h: j for j, h in enumerate(header[2:])}
        gam = _from_ri(data, cols, [f"gamma_{{}}_{k}" for k in range(Z)])
        extra = {}
        for name in ("g1", "g2"):
            if f"{name}_re_0_0" in cols:
                names = [f"{name}_{{}}_{k}_{l}" for k in range(Z) for l in range(Z)]
                extra[name] = _from_ri(data, cols, names).reshape(-1, Z, Z)
        return cls(meta["n"], meta["c"], TauMeasure.from_dict(meta["measure"]), zs, seeds, gam,
                   extra.get("g1"), extra.get("g2"), meta["start"], meta["master_seed"])


@dataclass(frozen=True, eq=False)
class QuadFormSet:
    """Quadratic forms ``A(z_k) = (G^alpha(z_k) Y_alpha, Y_alpha)`` per replica.

    ``conditional[r, p]``, if present, is the exact covariance over
    ``Y_alpha`` given ``M^alpha`` for pair ``p`` (see
    :func:`kernel_Kn_estimate`), and ``traces[r, k]`` the matching
    ``Tr G^alpha(z_k) / n^2``.
    """

    n: int
    c: float
    measure: TauMeasure
    z_points: tuple[complex, ...]
    seeds: np.ndarray
    values: np.ndarray
    pairs: tuple[tuple[complex, complex], ...] = ()
    conditional: np.ndarray | None = None
    traces: np.ndarray | None = None
    start: int = 0
    master_seed: int = 0

    @property
    def R(self) -> int:
        return self.values.shape[0]

    def column(self, z: complex) -> np.ndarray:
        """``A(z)`` for a stored point or its conjugate (``A(conj z) = conj A(z)``)."""
        return _pick(self.values, self.z_points, z)

    def trace_column(self, z: complex) -> np.ndarray:
        return _pick(self.traces, self.z_points, z)

    def _meta(self):
        return {
            "kind": "quadform",
            "n": self.n,
            "c": self.c,
            "measure": self.measure.to_dict(),
            "z_points": [[z.real, z.imag] for z in self.z_points],
            "pairs": [[[a.real, a.imag], [b.real, b.imag]] for a, b in self.pairs],
            "start": self.start,
            "master_seed": self.master_seed,
        }

    def to_csv(self, path) -> None:
        Z, P = len(self.z_points), len(self.pairs)
        header = ["replica", "seed"] + [f"A_{p}_{k}" for k in range(Z) for p in ("re", "im")]
        blocks = [_ri(self.values)]
        if self.conditional is not None:
            header += [f"cond_{p}_{k}" for k in range(P) for p in ("re", "im")]
            header += [f"trace_{p}_{k}" for k in range(Z) for p in ("re", "im")]
            blocks += [_ri(self.conditional), _ri(self.traces)]
        _write_csv(path, self._meta(), header, self.start, self.seeds, np.hstack(blocks))

    @classmethod
    def from_csv(cls, path) -> "QuadFormSet":
        meta, header, idx, seeds, data = _read_csv(path)
        if meta.get("kind") != "quadform":
            raise DomainError(f"{path} is not a quadratic-form replica file")
        zs = tuple(complex(a, b) for a, b in meta["z_points"])
        pairs = tuple((complex(*a), complex(*b)) for a, b in meta["pairs"])
        cols = {h: j for j, h in enumerate(header[2:])}
        vals = _from_ri(data, cols, [f"A_{{}}_{k}" for k in range(len(zs))])
        cond = traces = None
        if "trace_re_0" in cols:
            cond = _from_ri(data, cols, [f"cond_{{}}_{k}" for k in range(len(pairs))])
            traces = _from_ri(data, cols, [f"trace_{{}}_{k}" for k in range(len(zs))])
        return cls(meta["n"], meta["c"], TauMeasure.from_dict(meta["measure"]), zs, seeds, vals,
                   pairs, cond, traces, meta["start"], meta["master_seed"])


def _pick(arr, zs, z):
    z = complex(z)
    for k, w in enumerate(zs):
        if w == z:
            return arr[:, k]
        if w == z.conjugate():
            return arr[:, k].conj()
    raise DomainError(f"z = {z} (or its conjugate) was not simulated")


def _ri(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    out = np.empty((a.shape[0], 2 * a.shape[1]))
    out[:, 0::2] = a.real
    out[:, 1::2] = a.imag
    return out


def _from_ri(data, cols, names):
    re = np.stack([data[:, cols[n.format("re")]] for n in names], axis=1)
    im = np.stack([data[:, cols[n.format("im")]] for n in names], axis=1)
    return re + 1j * im


def _write_csv(path, meta, header, start, seeds, data):
    # repr(float) is the shortest string that round-trips exactly
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(data.shape[0]):
            w.writerow([start + r, int(seeds[r])] + [repr(float(x)) for x in data[r]])


def _read_csv(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"expected replica file {path}")
    with open(path, newline="", encoding="ascii") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise DomainError(f"{path} lacks the metadata line")
        meta = json.loads(first[2:])
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    idx = np.array([int(r[0]) for r in body], dtype=np.int64)
    seeds = np.array([int(r[1]) for r in body], dtype=np.uint64)
    data = np.array([[float(x) for x in r[2:]] for r in body]).reshape(len(body), len(header) - 2)
    return meta, header, idx, seeds, data


# ---------------------------------------------------------------------------
# replica workers (module level so that they pickle)


def _gamma_chunk(n, c, measure_dict, z_points, master_seed, lo, hi, with_g):
    measure = TauMeasure.from_dict(measure_dict)
    zs = np.asarray(z_points, dtype=complex)
    Z = len(zs)
    seeds = np.empty(hi - lo, dtype=np.uint64)
    gam = np.empty((hi - lo, Z), dtype=complex)
    G1 = np.empty((hi - lo, Z, Z), dtype=complex) if with_g else None
    G2 = np.empty((hi - lo, Z, Z), dtype=complex) if with_g else None
    for i, r in enumerate(range(lo, hi)):
        seed = replica_seed(master_seed, n, r)
        seeds[i] = seed
        try:
            sample = draw_ensemble(EnsembleConfig(n=n, c=c, measure=measure, seed=seed))
            spec = eigenvalues_dual(assemble_gram(sample), n, sample)
            gam[i] = gamma(spec, zs)
            if with_g:
                w, U = linalg.eigh(assemble_dense(sample))
                Gs = [resolvent_from_eigh(w, U, z) for z in zs]
                for k in range(Z):
                    for l in range(Z):
                        G1[i, k, l] = g1(Gs[k], Gs[l])
                        G2[i, k, l] = g2(Gs[k], Gs[l])
        except Exception as exc:
            raise RuntimeError(f"replica {r} (n={n}, seed={seed}) failed: {exc}") from exc
    return seeds, gam, G1, G2


def run_replicas(config: ExperimentConfig, n: int, R: int | None = None, start: int = 0,
                 threads: int | None = None, with_g: bool | None = None,
                 chunk: int = 50) -> ReplicaSet:
    """Replicas ``start, ..., start + R - 1`` at dimension ``n``.

    Each replica draws its ensemble, does one Gram-dual eigensolve and
    evaluates ``gamma_n`` at every z-point.  ``g1``/``g2`` (dense
    resolvents) are added for ``n <= 16`` unless ``with_g`` says otherwise.
    Replicas are spread over ``threads`` worker processes (default: the
    ``TENSORCLT_THREADS`` environment variable, else 1); results do not
    depend on the worker count.  Any failing replica aborts the run.
    """
    if n not in config.n_list:
        raise DomainError(f"n = {n} is not in the experiment's n_list {config.n_list}")
    R = config.replicas_for(n) if R is None else int(R)
    if with_g is None:
        with_g = n <= G_MAX_N
    elif with_g and n > G_MAX_N:
        raise DomainError(f"g1/g2 need dense resolvents, n <= {G_MAX_N}")
    args = [(n, config.c, config.measure.to_dict(), config.z_points, config.master_seed, lo, hi, with_g)
            for lo, hi in _chunks(start, start + R, chunk)]
    out = _map_chunks(_gamma_chunk, args, threads)
    seeds = np.concatenate([o[0] for o in out]) if out else np.empty(0, np.uint64)
    gam = np.concatenate([o[1] for o in out]) if out else np.empty((0, len(config.z_points)), complex)
    G1 = np.concatenate([o[2] for o in out]) if with_g and out else None
    G2 = np.concatenate([o[3] for o in out]) if with_g and out else None
    return ReplicaSet(n, config.c, config.measure, config.z_points, seeds, gam, G1, G2, start,
                      config.master_seed)


def _quadform_chunk(n, c, measure_dict, z_points, pairs, master_seed, lo, hi, conditional):
    measure = TauMeasure.from_dict(measure_dict)
    zs = np.asarray(z_points, dtype=complex)
    seeds = np.empty(hi - lo, dtype=np.uint64)
    A = np.empty((hi - lo, len(zs)), dtype=complex)
    cond = np.empty((hi - lo, len(pairs)), dtype=complex) if conditional else None
    tr = np.empty((hi - lo, len(zs)), dtype=complex) if conditional else None
    for i, r in enumerate(range(lo, hi)):
        seed = replica_seed(master_seed, n, r)
        seeds[i] = seed
        try:
            sample = draw_ensemble(EnsembleConfig(n=n, c=c, measure=measure, seed=seed))
            alpha = sample.m - 1
            Y = sample.tensor_vector(alpha)
            w, U = linalg.eigh(assemble_dense(sample.drop(alpha)))
            if measure.is_zero:
                # M^alpha = 0, so (G Y, Y) = -|Y|^2 / z with |Y| = 1 by construction
                A[i] = -1.0 / zs
            else:
                proj = (U.T @ Y) ** 2
                A[i] = (proj[None, :] / (w[None, :] - zs[:, None])).sum(axis=1)
            if conditional:
                Gs = {z: resolvent_from_eigh(w, U, z).entries for z in zs}
                full = lambda z: Gs[z] if z in Gs else Gs[z.conjugate()].conj()
                tr[i] = [np.trace(Gs[z]) / (n * n) for z in zs]
                cond[i] = [cov_quadratic_forms(full(a), full(b)) for a, b in pairs]
        except Exception as exc:
            raise RuntimeError(f"replica {r} (n={n}, seed={seed}) failed: {exc}") from exc
    return seeds, A, cond, tr


def run_quadform_replicas(config: ExperimentConfig, n: int, R: int, pairs=(), start: int = 0,
                          conditional: bool = False, threads: int | None = None,
                          chunk: int = 50) -> QuadFormSet:
    """Replicas of ``A = (G^alpha Y_alpha, Y_alpha)`` with ``alpha`` the last term.

    ``M^alpha`` (the ensemble without term ``alpha``) and ``Y_alpha`` are
    independent, so each replica is an independent draw of the pair.  The
    z-points are those of ``config`` (conjugates are free).  With
    ``conditional=True`` every replica also records the exact covariance over
    ``Y_alpha`` given ``M^alpha`` for each pair in ``pairs``.
    """
    if n > KN_MAX_N:
        raise DomainError(f"quadratic-form replicas need a dense resolvent, n <= {KN_MAX_N}")
    if int(round(config.c * n * n)) < 2:
        raise DomainError("need at least two terms to remove one")
    pairs = tuple((complex(a), complex(b)) for a, b in pairs)
    for a, b in pairs:
        for z in (a, b):
            if z not in config.z_points and z.conjugate() not in config.z_points:
                raise DomainError(f"pair point {z} is not among the z-points")
    args = [(n, config.c, config.measure.to_dict(), config.z_points, pairs, config.master_seed, lo, hi,
             conditional) for lo, hi in _chunks(start, start + R, chunk)]
    out = _map_chunks(_quadform_chunk, args, threads)
    seeds = np.concatenate([o[0] for o in out])
    A = np.concatenate([o[1] for o in out])
    cond = np.concatenate([o[2] for o in out]) if conditional else None
    tr = np.concatenate([o[3] for o in out]) if conditional else None
    return QuadFormSet(n, config.c, config.measure, config.z_points, seeds, A, pairs, cond, tr, start,
                       config.master_seed)


# ---------------------------------------------------------------------------
# estimators


def _jackknife_se(loo: np.ndarray) -> float:
    R = len(loo)
    if R < 3:
        return float("nan")
    d = loo - loo.mean()
    return float(np.sqrt((R - 1) / R * np.sum(np.abs(d) ** 2)))


def _shifted(a):
    # subtracting one sample keeps constant columns exactly zero
    a = np.asarray(a)
    return a - a[0]


def bilinear_cov(a, b) -> tuple[complex, float]:
    """``(1/(R-1)) sum (a - mean a)(b - mean b)`` and its jackknife SE."""
    a, b = _shifted(a), _shifted(b)
    R = len(a)
    if R < 2:
        raise DomainError("a covariance needs R >= 2")
    Sa, Sb, Sab = a.sum(), b.sum(), (a * b).sum()
    est = (Sab - Sa * Sb / R) / (R - 1)
    if R < 3:
        return complex(est), float("nan")
    loo = ((Sab - a * b) - (Sa - a) * (Sb - b) / (R - 1)) / (R - 2)
    return complex(est), _jackknife_se(loo)


def estimate_bilinear_cov(rs: ReplicaSet, i: int, j: int, conjugate_j: bool = False) -> tuple[complex, float]:
    """``Cov(gamma(z_i), gamma(z_j))`` (or with ``conj z_j``), bilinear, with jackknife SE."""
    a = rs.gamma_values[:, i]
    b = rs.gamma_values[:, j]
    if conjugate_j:
        b = b.conj()
    return bilinear_cov(a, b)


def _mean_se(x) -> tuple[complex, float]:
    x = np.asarray(x)
    R = len(x)
    s = _shifted(x)
    mean = x[0] + s.mean()
    se = float(np.sqrt(np.sum(np.abs(s - s.mean()) ** 2) / (R - 1) / R)) if R > 1 else float("nan")
    return mean, se


def empirical_sigma(rs: ReplicaSet, i: int) -> tuple[np.ndarray, np.ndarray]:
    """2x2 sample covariance of ``(Re gamma°, Im gamma°)`` at ``z_i`` and entrywise SEs."""
    x = rs.gamma_values[:, i]
    S = np.empty((2, 2))
    E = np.empty((2, 2))
    parts = (x.real, x.imag)
    for p in range(2):
        for q in range(2):
            v, se = bilinear_cov(parts[p], parts[q])
            S[p, q], E[p, q] = v.real, se
    return S, E


def sigma_from_covariances(C_zz: complex, C_zzbar: complex) -> np.ndarray:
    """``(Re, Im)`` covariance matrix from ``Cov(z, z)`` and ``Cov(z, conj z)``."""
    s11 = 0.5 * (C_zzbar.real + C_zz.real)
    s22 = 0.5 * (C_zzbar.real - C_zz.real)
    s12 = 0.5 * C_zz.imag
    return np.array([[s11, s12], [s12, s22]])


def empirical_char_function(rs: ReplicaSet, i: int, x_grid) -> tuple[np.ndarray, float]:
    """``Z(x) = mean exp(i x Im gamma°(z_i))`` and its per-point SE ``1/sqrt(R)``.

    ``gamma°`` is centred by the sample mean.
    """
    v = rs.gamma_values[:, i].imag
    s = _shifted(v)
    v0 = s - s.mean()
    x = np.asarray(x_grid, dtype=float)
    Z = np.exp(1j * x[:, None] * v0[None, :]).mean(axis=1)
    return Z, 1.0 / np.sqrt(rs.R)


def standardized_moments(x) -> dict:
    """Skewness and excess kurtosis with jackknife SEs."""
    x = np.asarray(x, dtype=float)
    R = len(x)
    s = _shifted(x)
    P = [np.sum(s**k) for k in range(1, 5)]
    loo_P = [P[k - 1] - s**k for k in range(1, 5)]

    def stats(N, p1, p2, p3, p4):
        m = p1 / N
        c2 = p2 / N - m * m
        c3 = p3 / N - 3 * m * p2 / N + 2 * m**3
        c4 = p4 / N - 4 * m * p3 / N + 6 * m * m * p2 / N - 3 * m**4
        with np.errstate(invalid="ignore", divide="ignore"):
            skew = np.where(c2 > 0, c3 / np.where(c2 > 0, c2, 1) ** 1.5, 0.0)
            kurt = np.where(c2 > 0, c4 / np.where(c2 > 0, c2, 1) ** 2 - 3.0, 0.0)
        return skew, kurt

    skew, kurt = stats(R, *P)
    lskew, lkurt = stats(R - 1, *loo_P)
    return {
        "skewness": float(skew),
        "skewness_se": _jackknife_se(np.asarray(lskew, dtype=float)),
        "excess_kurtosis": float(kurt),
        "excess_kurtosis_se": _jackknife_se(np.asarray(lkurt, dtype=float)),
    }


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class Comparison:
    """One estimate against its theoretical value."""

    name: str
    estimate: complex
    theory: complex
    se: float

    @property
    def deviation(self) -> float:
        return float(abs(complex(self.estimate) - complex(self.theory)))

    @property
    def zscore(self) -> float:
        d = self.deviation
        if d == 0:
            return 0.0
        if not self.se > 0:
            return float("inf")
        return d / self.se

    def within(self, k: float) -> bool:
        return self.zscore <= k

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "estimate": _jsonable(self.estimate),
            "theory": _jsonable(self.theory),
            "se": _jsonable(self.se),
            "zscore": _jsonable(self.zscore),
        }


def _jsonable(v):
    if isinstance(v, (complex, np.complexfloating)):
        v = complex(v)
        return {"re": _jsonable(v.real), "im": _jsonable(v.imag)}
    if isinstance(v, (np.ndarray, list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class CltReport:
    """Empirical CLT quantities at one z-point with their theoretical targets."""

    n: int
    R: int
    z: complex
    rows: list[Comparison] = field(default_factory=list)
    sigma_hat: np.ndarray | None = None
    sigma_se: np.ndarray | None = None
    sigma_theory: np.ndarray | None = None
    V: float = 0.0
    x_grid: tuple[float, ...] = ()
    Z_hat: np.ndarray | None = None
    Z_theory: np.ndarray | None = None
    Z_se: float = 0.0
    moments: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def row(self, name: str) -> Comparison:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def char_sup_deviation(self) -> float:
        return float(np.max(np.abs(self.Z_hat - self.Z_theory))) if len(self.x_grid) else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "R": self.R,
            "z": _jsonable(complex(self.z)),
            "rows": [r.to_dict() for r in self.rows],
            "sigma_hat": _jsonable(self.sigma_hat),
            "sigma_se": _jsonable(self.sigma_se),
            "sigma_theory": _jsonable(self.sigma_theory),
            "V": self.V,
            "x_grid": list(self.x_grid),
            "Z_hat": _jsonable(self.Z_hat),
            "Z_theory": _jsonable(self.Z_theory),
            "Z_se": self.Z_se,
            "char_sup_deviation": self.char_sup_deviation,
            "moments": _jsonable(self.moments),
            "notes": self.notes,
        }


def clt_report(rs: ReplicaSet, params: LimitParams, i: int = 0, x_grid=DEFAULT_X_GRID,
               allow_small_eta: bool = False, method: str = "contour") -> CltReport:
    """Compare replica statistics at ``z_i`` with the limiting Gaussian law.

    Rows: the mean of ``g_n`` against ``f``, the bilinear covariances
    against ``C`` at ``(z, z)``, ``(z, conj z)`` and every other simulated
    point, and the entries of the 2x2 covariance of ``(Re, Im)`` against
    ``Sigma``.  The characteristic function of ``Im gamma°`` is compared
    with ``exp(-x^2 V / 2)``.  Centering uses the sample mean.
    """
    z = rs.z_points[i]
    rep = CltReport(n=rs.n, R=rs.R, z=z)
    rep.notes.append("gamma is centred by the replica mean; the centering bias is O(1/R)")

    f = solve_f(z, params).f
    m, se = _mean_se(rs.g_values[:, i])
    rep.rows.append(Comparison("mean g_n", m, f, se))

    sig = covariance_matrix_sigma(z, params, allow_small_eta=allow_small_eta, method=method)
    rep.notes.extend(sig.warnings)
    for j, w in enumerate(rs.z_points):
        for conj in (False, True):
            if j < i:
                continue
            est, s = estimate_bilinear_cov(rs, i, j, conjugate_j=conj)
            w2 = w.conjugate() if conj else w
            theory = (sig.C_zzbar if conj else sig.C_zz) if j == i else kernel_C(z, w2, params, method=method)
            if j == i:
                name = "Cov(z, conj z)" if conj else "Cov(z, z)"
            else:
                name = f"Cov(gamma({_fmt(z)}), gamma({_fmt(w2)}))"
            rep.rows.append(Comparison(name, est, theory, s))

    S, E = empirical_sigma(rs, i)
    rep.sigma_hat, rep.sigma_se, rep.sigma_theory = S, E, sig.matrix
    for p, q, name in ((0, 0, "Sigma_11"), (0, 1, "Sigma_12"), (1, 1, "Sigma_22")):
        rep.rows.append(Comparison(name, S[p, q], sig.matrix[p, q], E[p, q]))
    rep.V = sig.V

    rep.x_grid = tuple(float(x) for x in x_grid)
    rep.Z_hat, rep.Z_se = empirical_char_function(rs, i, rep.x_grid)
    rep.Z_theory = np.exp(-np.asarray(rep.x_grid) ** 2 * sig.V / 2)

    for part, vals in (("Re", rs.gamma_values[:, i].real), ("Im", rs.gamma_values[:, i].imag)):
        mo = standardized_moments(vals)
        rep.moments[part] = mo
        rep.rows.append(Comparison(f"skewness {part} gamma", mo["skewness"], 0.0, mo["skewness_se"]))
        rep.rows.append(Comparison(f"excess kurtosis {part} gamma", mo["excess_kurtosis"], 0.0,
                                   mo["excess_kurtosis_se"]))
    return rep


def _fmt(z: complex) -> str:
    return f"{z.real:g}{z.imag:+g}i"


# ---------------------------------------------------------------------------
# studies over n


def _loglog_slope(ns, errs) -> float:
    ns, errs = np.asarray(ns, dtype=float), np.asarray(errs, dtype=float)
    ok = errs > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ns[ok]), np.log(errs[ok]), 1)[0])


def lemma_checks(sets: dict, params: LimitParams, i: int = 0, j: int | None = None) -> dict:
    """Convergence table for ``E g_n``, ``E g1`` and ``E g2`` against their predictions.

    ``sets`` maps ``n`` to a :class:`ReplicaSet`.  ``g1`` is compared with
    ``f f + I/n`` and with ``f f`` alone (the size of the ``1/n``
    correction), ``g2`` with ``f f + I``, all at the pair ``(z_i, z_j)``.
    """
    j = i if j is None else j
    rows = []
    for n in sorted(sets):
        rs = sets[n]
        z1, z2 = rs.z_points[i], rs.z_points[j]
        f = solve_f(z1, params).f
        m, se = _mean_se(rs.g_values[:, i])
        row = {"n": n, "R": rs.R, "mean_g": m, "f": f, "err_g": abs(m - f), "se_g": se}
        if rs.g1_values is not None:
            f2 = solve_f(z2, params).f
            m1, se1 = _mean_se(rs.g1_values[:, i, j])
            m2, se2 = _mean_se(rs.g2_values[:, i, j])
            p1 = lemma_prediction_g1(z1, z2, params, n)
            p2 = lemma_prediction_g2(z1, z2, params)
            row.update(
                mean_g1=m1, pred_g1=p1, err_g1=abs(m1 - p1), err_g1_leading=abs(m1 - f * f2), se_g1=se1,
                mean_g2=m2, pred_g2=p2, err_g2=abs(m2 - p2), se_g2=se2,
            )
        rows.append(row)
    slope = _loglog_slope([r["n"] for r in rows], [r["err_g"] for r in rows])
    return {"rows": rows, "slope_err_g": slope}


def variance_scaling_study(sets: dict, i: int = 0, ratio_bound: float = 1.5, k_se: float = 3.0) -> dict:
    """Variances of ``gamma_n(z_i)`` across ``n`` and their successive ratios.

    ``var`` is ``E|gamma°|^2 = Cov(gamma(z), gamma(conj z))``; ``var_re`` and
    ``var_im`` are the variances of the real and imaginary parts.  A ratio is
    flagged when it leaves ``[1/ratio_bound, ratio_bound]`` by more than
    ``k_se`` standard errors (delta method on jackknife SEs).
    """
    rows = []
    for n in sorted(sets):
        rs = sets[n]
        if rs.R < 100:
            raise DomainError(f"variance study needs R >= 100 (n={n} has R={rs.R})")
        v, sv = estimate_bilinear_cov(rs, i, i, conjugate_j=True)
        vr, svr = bilinear_cov(rs.gamma_values[:, i].real, rs.gamma_values[:, i].real)
        vi, svi = bilinear_cov(rs.gamma_values[:, i].imag, rs.gamma_values[:, i].imag)
        rows.append({"n": n, "R": rs.R, "var": v.real, "var_se": sv, "var_re": vr.real, "var_re_se": svr,
                     "var_im": vi.real, "var_im_se": svi})
    ratios = []
    for a, b in zip(rows, rows[1:]):
        if a["var"] == 0 and b["var"] == 0:
            ratios.append({"n_from": a["n"], "n_to": b["n"], "ratio": 1.0, "se": 0.0, "flag": False})
            continue
        r = b["var"] / a["var"]
        se = abs(r) * float(np.hypot(a["var_se"] / a["var"], b["var_se"] / b["var"]))
        flag = (r - k_se * se > ratio_bound) or (r + k_se * se < 1.0 / ratio_bound)
        ratios.append({"n_from": a["n"], "n_to": b["n"], "ratio": r, "se": se, "flag": bool(flag)})
    return {"rows": rows, "ratios": ratios}


def kernel_Kn_estimate(qs: QuadFormSet, params: LimitParams, pairs=None, tau_power: int = 4) -> list[dict]:
    """``n^2 Cov(A(z1), A(z2))`` per pair against ``K(z1, z2)``.

    When the set carries conditional covariances, a second estimator is
    reported: ``n^2 (mean_r Cov_Y[A | M^alpha] + Cov_r(Tr G^alpha / n^2))``,
    the law of total covariance with the inner term computed exactly.
    """
    pairs = qs.pairs if pairs is None else tuple((complex(a), complex(b)) for a, b in pairs)
    n2 = qs.n * qs.n
    out = []
    for p, (a, b) in enumerate(pairs):
        est, se = bilinear_cov(qs.column(a), qs.column(b))
        row = {"z1": a, "z2": b, "estimate": n2 * est, "se": n2 * se,
               "theory": kernel_K(a, b, params, tau_power=tau_power)}
        if qs.conditional is not None and p < qs.conditional.shape[1] and qs.pairs[p] == (a, b):
            inner, inner_se = _mean_se(qs.conditional[:, p])
            outer, outer_se = bilinear_cov(qs.trace_column(a), qs.trace_column(b))
            row["conditional_estimate"] = n2 * (inner + outer)
            row["conditional_se"] = n2 * float(np.hypot(inner_se, outer_se))
        out.append(row)
    return out


def higher_moment_diagnostic(rs: ReplicaSet, i: int = 0, powers=(2, 4, 6)) -> dict:
    """``mean |gamma°|^p`` for a few ``p`` (no pass/fail; bounded in ``n`` if the moments are O(1))."""
    x = _shifted(rs.gamma_values[:, i])
    x = x - x.mean()
    return {int(p): float(np.mean(np.abs(x) ** p)) for p in powers}

