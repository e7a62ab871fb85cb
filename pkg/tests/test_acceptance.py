"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict (repeated in the terminal
summary) before asserting.  The Monte Carlo criteria 6-10 share one set of
replica runs of the reference configuration; expect roughly a quarter of an
hour on a single core (set ``TENSORCLT_THREADS`` to use more).
"""
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from tensorclt.config import load_config
from tensorclt.limit import (
    LimitParams,
    covariance_matrix_sigma,
    kernel_C,
    kernel_K,
    mp_closed_form,
    solve_f,
)
from tensorclt.mc import (
    ExperimentConfig,
    ReplicaSet,
    bilinear_cov,
    clt_report,
    kernel_Kn_estimate,
    lemma_checks,
    run_quadform_replicas,
    run_replicas,
    variance_scaling_study,
)
from tensorclt.measures import TauMeasure
from tensorclt.resolvent import (
    g1,
    g2,
    gamma,
    resolvent_dense,
    spectrum_of,
    var_quadratic_form_predicted,
)
from tensorclt.sampler import EnsembleConfig, assemble_dense, draw_ensemble, tensor_vectors
from tensorclt.verification import (
    check_clt_covariance,
    check_gaussianity,
    check_kernel_K,
    check_mean_convergence,
    check_variance_scaling,
)

REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "reference.yaml"
DELTA1 = TauMeasure.point_mass(1.0)


def _verdict(record, number, passed, detail):
    record(number, bool(passed), detail)
    assert passed, f"criterion {number}: {detail}"


# -- 1: fixed point against the closed form ------------------------------------------


def test_criterion_01_fixed_point_vs_closed_form(acceptance_record):
    rng = np.random.default_rng(1)
    t = time.perf_counter()
    worst = 0.0
    for c in (0.5, 1.0, 2.0):
        p = LimitParams(c, DELTA1)
        eta = rng.uniform(p.eta0, 10 * p.eta0, 20)
        xi = rng.uniform(-5.0, 10.0, 20)
        for z in xi + 1j * eta:
            worst = max(worst, abs(solve_f(z, p).f - mp_closed_form(z, c, 1.0)))
    dt = time.perf_counter() - t
    _verdict(acceptance_record, 1, worst <= 1e-12 and dt < 1.0,
             f"max |f - closed form| = {worst:.2e} (<= 1e-12), {dt:.2f} s (< 1 s)")


# -- 2: dual-path spectra ----------------------------------------------------------------


def test_criterion_02_dual_path_spectra(acceptance_record):
    t = time.perf_counter()
    worst_eig = worst_gamma = 0.0
    zs = np.array([5j, 0.5 + 1j, -1 + 0.25j])
    for n, c, seed in itertools.product((4, 6, 8), (0.5, 1.0, 2.0), range(10)):
        s = draw_ensemble(EnsembleConfig(n, c, DELTA1, seed))
        d = spectrum_of(s, "dense").eigenvalues
        g = spectrum_of(s, "gram_dual").eigenvalues
        scale = np.abs(d).max()
        worst_eig = max(worst_eig, np.abs(d - g).max() / scale)
        gd, gg = gamma(d, zs), gamma(g, zs)
        worst_gamma = max(worst_gamma, float(np.max(np.abs(gd - gg) / np.abs(gd))))
    dt = time.perf_counter() - t
    ok = worst_eig <= 1e-9 and worst_gamma <= 1e-8 and dt < 30
    _verdict(acceptance_record, 2, ok,
             f"eigenvalues rel {worst_eig:.1e} (<= 1e-9), gamma rel {worst_gamma:.1e} (<= 1e-8), {dt:.1f} s")


# -- 3: exact variance identity ---------------------------------------------------------------


def test_criterion_03_variance_identity(acceptance_record):
    n, R = 3, 10**6
    rng = np.random.default_rng(3)
    t = time.perf_counter()
    zs = []
    for k in range(5):
        A = rng.standard_normal((n * n, n * n))
        H = A + A.T
        # 10^6 tensor vectors from the ensemble sampler itself
        s = draw_ensemble(EnsembleConfig(n, R / (n * n), DELTA1, 100 + k))
        Y = tensor_vectors(s)
        q = np.einsum("ir,ij,jr->r", Y, H, Y)
        d = (q - q.mean()) ** 2
        est = d.sum() / (R - 1)
        se = d.std(ddof=1) / np.sqrt(R)
        zs.append(abs(est - var_quadratic_form_predicted(H)) / se)
    dt = time.perf_counter() - t
    ok = max(zs) <= 3 and dt < 120
    _verdict(acceptance_record, 3, ok,
             f"z-scores {', '.join(f'{z:.2f}' for z in zs)} (<= 3), {dt:.1f} s")


# -- 4: contraction oracles -------------------------------------------------------------------


def _g1_loop(A, B, n):
    A, B = A.reshape(n, n, n, n), B.reshape(n, n, n, n)
    return sum(A[j, s, p, s] * B[j, q, p, q] for j, s, p, q in itertools.product(range(n), repeat=4)) / n**3


def _g2_loop(A, B, n):
    A, B = A.reshape(n, n, n, n), B.reshape(n, n, n, n)
    return sum(A[j, s, p, q] * B[p, s, j, q] for j, s, p, q in itertools.product(range(n), repeat=4)) / n**2


def test_criterion_04_contraction_oracles(acceptance_record):
    rng = np.random.default_rng(4)
    t = time.perf_counter()
    worst = 0.0
    for n in (2, 3):
        for k in range(20):
            s = draw_ensemble(EnsembleConfig(n, float(rng.choice([0.5, 1.0, 2.0])), DELTA1, 1000 * n + k))
            M = assemble_dense(s)
            z1 = complex(rng.uniform(-2, 2), rng.uniform(0.2, 3))
            z2 = complex(rng.uniform(-2, 2), rng.uniform(-3, 3) or 1.0)
            A, B = resolvent_dense(M, z1), resolvent_dense(M, z2)
            for fn, loop in ((g1, _g1_loop), (g2, _g2_loop)):
                ref = loop(A.entries, B.entries, n)
                worst = max(worst, abs(fn(A, B) - ref) / max(1.0, abs(ref)))
    dt = time.perf_counter() - t
    _verdict(acceptance_record, 4, worst <= 1e-12 and dt < 10,
             f"max deviation from four-index loops {worst:.1e} (<= 1e-12), {dt:.2f} s")


# -- 5: rank-one perturbation ---------------------------------------------------------------------


def test_criterion_05_rank_one_identity(acceptance_record):
    t = time.perf_counter()
    worst, bound_ok = 0.0, True
    mix = TauMeasure.mixture([(0.5, 0.5), (1.0, 0.5)])
    for seed in range(20):
        n = 2 + seed % 3
        s = draw_ensemble(EnsembleConfig(n, 1.5, mix, seed))
        alpha = (7 * seed) % s.m
        tau = s.taus.values[alpha]
        Y = s.tensor_vector(alpha)
        for z in (0.5 + 0.2j, -1 + 3j, 2 + 0.05j):
            G = resolvent_dense(assemble_dense(s), z).entries
            Ga = resolvent_dense(assemble_dense(s.drop(alpha)), z).entries
            GY = Ga @ Y
            rhs = -tau * np.outer(GY, GY) / (1 + tau * (GY @ Y))
            worst = max(worst, np.abs(G - Ga - rhs).max())
            bound_ok &= abs(np.trace(G) - np.trace(Ga)) <= 1 / z.imag
    dt = time.perf_counter() - t
    _verdict(acceptance_record, 5, worst <= 1e-9 and bound_ok and dt < 10,
             f"max entrywise residual {worst:.1e} (<= 1e-9), |gamma - gamma^a| <= 1/Im z: {bound_ok}, {dt:.2f} s")


# -- shared Monte Carlo runs (criteria 6-10) ------------------------------------------------------


@pytest.fixture(scope="module")
def reference():
    cfg = load_config(REFERENCE)
    ecfg = cfg.experiment_config()
    timings, sets = {}, {}
    for n in (8, 16, 24):
        t = time.perf_counter()
        sets[n] = run_replicas(ecfg, n, R=2000, with_g=False)
        timings[n] = time.perf_counter() - t
    # n = 32 in two halves so that the first 2000 replicas can be timed on their own
    t = time.perf_counter()
    first = run_replicas(ecfg, 32, R=2000, with_g=False)
    timings["32a"] = time.perf_counter() - t
    t = time.perf_counter()
    second = run_replicas(ecfg, 32, R=2000, start=2000, with_g=False)
    timings["32b"] = time.perf_counter() - t
    sets[32] = ReplicaSet.concat([first, second])
    return cfg, sets, timings


@pytest.fixture(scope="module")
def kernel_run():
    cfg = load_config(REFERENCE)
    kk = cfg.verify.kernel_K
    pts = (5j, 7j)
    qcfg = cfg.experiment_config(n_list=(16,), z_points=pts)
    t = time.perf_counter()
    qs = run_quadform_replicas(qcfg, 16, 5000, pairs=kk["pairs"], conditional=True)
    return cfg, qs, time.perf_counter() - t


def test_criterion_06_mean_convergence(reference, acceptance_record):
    cfg, sets, timings = reference
    t = time.perf_counter()
    table = lemma_checks({n: sets[n].head(2000) for n in (8, 16, 32)}, cfg.params, 0)
    res = check_mean_convergence(table, cfg.tolerances)
    dt = timings[8] + timings[16] + timings["32a"] + time.perf_counter() - t
    errs = ", ".join(f"n={r['n']}: {r['err_g']:.2e}" for r in table["rows"])
    last = table["rows"][-1]
    _verdict(acceptance_record, 6, res.passed and dt < 600,
             f"|E g_n - f| {errs}; bound at n=32 {res.details['final_bound']:.2e} "
             f"(SE {last['se_g']:.1e}); {dt:.0f} s")


def test_criterion_07_kernel_K(kernel_run, acceptance_record):
    cfg, qs, dt = kernel_run
    rows = kernel_Kn_estimate(qs, cfg.params, tau_power=cfg.limit.tau_power)
    res = check_kernel_K(rows, cfg.tolerances)
    parts = [
        f"({r['z1']}, {r['z2']}): n^2 K_n = {complex(r['estimate']):.4g} +- {r['se']:.1g} vs K = "
        f"{complex(r['theory']):.4g} (conditional {complex(r['conditional_estimate']):.4g}, "
        f"ratio {abs(complex(r['estimate'])) / abs(complex(r['theory'])):.3f})"
        for r in rows
    ]
    _verdict(acceptance_record, 7, res.passed and dt < 600, "; ".join(parts) + f"; {dt:.0f} s")


def test_criterion_08_clt_covariance(reference, acceptance_record):
    cfg, sets, timings = reference
    rep = clt_report(sets[32], cfg.params, 0, cfg.experiment.x_grid)
    res = check_clt_covariance(rep, cfg.tolerances)
    dt = timings["32a"] + timings["32b"]
    parts = [f"{c.name}: {complex(c.estimate).real:.3e} vs {complex(c.theory).real:.3e} "
             f"(z={c.zscore:.1f}, ratio {complex(c.estimate).real / complex(c.theory).real:.3f})"
             for c in res.rows]
    _verdict(acceptance_record, 8, res.passed and dt < 1800,
             "; ".join(parts) + f"; |Im Cov(z, conj z)| = {res.details['imag_cov_z_zbar']:.1e}; {dt:.0f} s")


def test_criterion_09_gaussianity(reference, acceptance_record):
    cfg, sets, _ = reference
    rep = clt_report(sets[32], cfg.params, 0, cfg.experiment.x_grid)
    res = check_gaussianity(rep, cfg.tolerances)
    mom = "; ".join(f"{c.name} {complex(c.estimate).real:+.3f} (z={c.zscore:.1f})" for c in res.rows)
    _verdict(acceptance_record, 9, res.passed,
             f"sup |Z - exp(-x^2 V/2)| = {res.details['sup_deviation']:.4f} (<= {res.details['bound']:.4f}); {mom}")


def test_criterion_10_variance_boundedness(reference, acceptance_record):
    cfg, sets, _ = reference
    study = variance_scaling_study({n: sets[n].head(2000) for n in (16, 24, 32)}, 0,
                                   cfg.tolerances.variance_ratio, cfg.tolerances.se_multiple)
    res = check_variance_scaling(study, cfg.tolerances)
    parts = [f"{r['n_from']}->{r['n_to']}: {r['ratio']:.3f} +- {r['se']:.3f}" for r in study["ratios"]]
    _verdict(acceptance_record, 10, res.passed, "variance ratios " + ", ".join(parts))


# -- 11: degenerate weights -----------------------------------------------------------------------


def test_criterion_11_zero_measure(acceptance_record):
    t = time.perf_counter()
    zero = TauMeasure.point_mass(0.0)
    p = LimitParams(1.0, zero)
    zs = [1j, 2 + 0.5j, -1 - 3j, 0.1j]
    f_exact = all(solve_f(z, p).f == -1 / z for z in zs)
    kernels_zero = all(
        kernel_K(a, b, p) == 0 and kernel_C(a, b, p) == 0 for a in zs for b in zs if a != b
    ) and all(np.all(covariance_matrix_sigma(z, p, allow_small_eta=True).matrix == 0) for z in zs)
    ecfg = ExperimentConfig(1.0, zero, (4,), 100, (1j,), allow_small_eta=True)
    rs = run_replicas(ecfg, 4, with_g=False)
    var, _ = bilinear_cov(rs.gamma_values[:, 0], rs.gamma_values[:, 0].conj())
    qs = run_quadform_replicas(ecfg, 4, 100, pairs=[(1j, -1j)])
    kn = kernel_Kn_estimate(qs, p)[0]["estimate"]
    sim_zero = var == 0 and kn == 0 and np.all(rs.gamma_values == 16 * (-1 / 1j))
    dt = time.perf_counter() - t
    ok = f_exact and kernels_zero and sim_zero and dt < 1.0
    _verdict(acceptance_record, 11, ok,
             f"f = -1/z exactly: {f_exact}; kernels zero: {kernels_zero}; empirical variance and "
             f"n^2 K_n zero: {sim_zero}; {dt:.2f} s")
