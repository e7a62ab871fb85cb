import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from tensorclt.errors import DomainError
from tensorclt.limit import LimitParams, kernel_K, solve_f
from tensorclt.mc import (
    Comparison,
    ExperimentConfig,
    QuadFormSet,
    ReplicaSet,
    bilinear_cov,
    clt_report,
    empirical_char_function,
    empirical_sigma,
    estimate_bilinear_cov,
    higher_moment_diagnostic,
    kernel_Kn_estimate,
    lemma_checks,
    replica_seed,
    run_quadform_replicas,
    run_replicas,
    sigma_from_covariances,
    standardized_moments,
    variance_scaling_study,
)


@pytest.fixture
def cfg(delta1):
    return ExperimentConfig(c=1.0, measure=delta1, n_list=(3, 4), R=40, z_points=(5j, 1 + 6j), master_seed=11)


@pytest.fixture
def zero_cfg(zero_measure):
    return ExperimentConfig(c=1.0, measure=zero_measure, n_list=(3, 4), R=120, z_points=(1j,), master_seed=2)


# -- configuration and seeds ------------------------------------------------------


def test_config_validation(delta1):
    with pytest.raises(DomainError):
        ExperimentConfig(1.0, delta1, (4,), 1, (5j,))
    with pytest.raises(DomainError):
        ExperimentConfig(1.0, delta1, (4,), 10, (5.0,))
    with pytest.raises(DomainError, match="eta0"):
        ExperimentConfig(1.0, delta1, (4,), 10, (1j,))
    ExperimentConfig(1.0, delta1, (4,), 10, (1j,), allow_small_eta=True)
    c = ExperimentConfig(1.0, delta1, (4, 8), 10, (5j,), R_overrides=((8, 30),))
    assert c.replicas_for(4) == 10 and c.replicas_for(8) == 30


def test_replica_seeds_distinct_and_stable():
    seeds = {replica_seed(7, n, r) for n in (4, 8) for r in range(500)}
    assert len(seeds) == 1000
    assert replica_seed(7, 4, 3) == replica_seed(7, 4, 3)
    assert replica_seed(7, 4, 3) != replica_seed(8, 4, 3)


# -- replica runs -----------------------------------------------------------------


def test_run_is_deterministic_and_thread_independent(cfg):
    a = run_replicas(cfg, 3, R=12, chunk=5)
    b = run_replicas(cfg, 3, R=12, chunk=5, threads=2)
    assert np.array_equal(a.gamma_values, b.gamma_values)
    assert np.array_equal(a.g1_values, b.g1_values)
    assert np.array_equal(a.seeds, b.seeds)


def test_shards_concatenate_to_full_run(cfg):
    full = run_replicas(cfg, 4, R=10, with_g=False)
    parts = [run_replicas(cfg, 4, R=4, start=6, with_g=False), run_replicas(cfg, 4, R=6, start=0, with_g=False)]
    cat = ReplicaSet.concat(parts)
    assert cat.start == 0 and cat.R == 10
    assert np.array_equal(cat.gamma_values, full.gamma_values)
    with pytest.raises(DomainError, match="contiguous"):
        ReplicaSet.concat([parts[1], run_replicas(cfg, 4, R=2, start=7, with_g=False)])


def test_head(cfg):
    rs = run_replicas(cfg, 3, R=6)
    h = rs.head(4)
    assert h.R == 4 and np.array_equal(h.g2_values, rs.g2_values[:4])
    with pytest.raises(DomainError):
        rs.head(7)


def test_single_factor_dimension_is_deterministic(delta1):
    # n = 1: every tensor vector is +-1, so M = sum tau = m and gamma = 1/(m - z)
    c = ExperimentConfig(c=3.0, measure=delta1, n_list=(1,), R=5, z_points=(9j, 2 + 9j))
    rs = run_replicas(c, 1)
    for k, z in enumerate(c.z_points):
        assert np.allclose(rs.gamma_values[:, k], 1 / (3 - z), rtol=1e-14, atol=0)


def test_g_values_are_normalized_traces(cfg):
    rs = run_replicas(cfg, 3, R=3)
    assert rs.g_values.shape == (3, 2)
    assert np.allclose(rs.g_values * 9, rs.gamma_values)


def test_with_g_guard(delta1):
    c = ExperimentConfig(1.0, delta1, (17,), 2, (5j,))
    with pytest.raises(DomainError):
        run_replicas(c, 17, with_g=True)
    with pytest.raises(DomainError):
        run_replicas(c, 16)


def test_zero_measure_gamma_is_exact(zero_cfg):
    rs = run_replicas(zero_cfg, 3, R=4)
    assert np.all(rs.gamma_values == 9 * (-1 / 1j))


def test_replica_csv_round_trip(cfg, tmp_path):
    rs = run_replicas(cfg, 3, R=5, start=3)
    p = tmp_path / "r.csv"
    rs.to_csv(p)
    back = ReplicaSet.from_csv(p)
    assert back.start == 3 and back.n == 3 and back.z_points == rs.z_points
    assert np.array_equal(back.gamma_values, rs.gamma_values)
    assert np.array_equal(back.g1_values, rs.g1_values)
    assert np.array_equal(back.seeds, rs.seeds)
    rs.to_csv(tmp_path / "again.csv")
    assert p.read_bytes() == (tmp_path / "again.csv").read_bytes()


def test_csv_errors(tmp_path, cfg):
    with pytest.raises(FileNotFoundError, match="missing.csv"):
        ReplicaSet.from_csv(tmp_path / "missing.csv")
    qs = run_quadform_replicas(cfg, 3, R=3)
    qs.to_csv(tmp_path / "q.csv")
    with pytest.raises(DomainError):
        ReplicaSet.from_csv(tmp_path / "q.csv")


def test_quadform_csv_round_trip(cfg, tmp_path):
    qs = run_quadform_replicas(cfg, 3, R=4, pairs=[(5j, -5j)], conditional=True)
    qs.to_csv(tmp_path / "q.csv")
    back = QuadFormSet.from_csv(tmp_path / "q.csv")
    assert back.pairs == qs.pairs
    assert np.array_equal(back.values, qs.values)
    assert np.array_equal(back.conditional, qs.conditional)
    assert np.array_equal(back.traces, qs.traces)


def test_quadform_conjugate_column(cfg):
    qs = run_quadform_replicas(cfg, 3, R=3)
    assert np.array_equal(qs.column(-5j), qs.values[:, 0].conj())
    with pytest.raises(DomainError):
        qs.column(7j)


def test_quadform_guards(cfg, delta1):
    with pytest.raises(DomainError):
        run_quadform_replicas(cfg, 3, R=3, pairs=[(5j, 7j)])
    big = ExperimentConfig(1.0, delta1, (17,), 2, (5j,))
    with pytest.raises(DomainError):
        run_quadform_replicas(big, 17, R=2)


def test_quadform_direct_check(cfg):
    # A = (G^alpha Y, Y) with G^alpha from the ensemble without its last term
    from scipy import linalg

    from tensorclt.sampler import EnsembleConfig, assemble_dense, draw_ensemble

    qs = run_quadform_replicas(cfg, 3, R=2)
    s = draw_ensemble(EnsembleConfig(3, 1.0, cfg.measure, int(qs.seeds[1])))
    a = s.m - 1
    M = assemble_dense(s.drop(a))
    Y = s.tensor_vector(a)
    G = linalg.inv(M - 5j * np.eye(9))
    assert qs.values[1, 0] == pytest.approx(Y @ G @ Y, rel=1e-12)


def test_quadform_zero_measure(zero_cfg):
    qs = run_quadform_replicas(zero_cfg, 3, R=4, pairs=[(1j, -1j)], conditional=True)
    assert np.all(qs.values == -1 / 1j)
    rows = kernel_Kn_estimate(qs, zero_cfg.params)
    assert rows[0]["estimate"] == 0
    # (G Y, Y) = -1/z is constant, so its covariance given M^alpha vanishes
    assert np.allclose(qs.conditional, 0, atol=1e-15)


# -- estimators -------------------------------------------------------------------

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(3, 30), elements=finite), st.data())
def test_bilinear_cov_against_numpy(a, data):
    b = data.draw(arrays(np.float64, len(a), elements=finite))
    est, se = bilinear_cov(a, b)
    ref = np.cov(a, b)[0, 1]
    assert est.real == pytest.approx(ref, rel=1e-9, abs=1e-9 * (1 + np.abs(a).max() * np.abs(b).max()))
    # closed-form leave-one-out against the explicit loop
    loo = np.array([np.cov(np.delete(a, r), np.delete(b, r))[0, 1] for r in range(len(a))])
    R = len(a)
    ref_se = np.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2))
    assert se == pytest.approx(ref_se, rel=1e-6, abs=1e-6 * (1 + np.abs(a).max() * np.abs(b).max()))


def test_bilinear_cov_is_bilinear_not_hermitian(rng):
    a = rng.normal(size=50) + 1j * rng.normal(size=50)
    est, _ = bilinear_cov(a, a)
    d = a - a.mean()
    assert est == pytest.approx(np.sum(d * d) / 49)
    herm, _ = bilinear_cov(a, a.conj())
    assert abs(herm.imag) <= 1e-15 * abs(herm) and herm.real > 0


def test_constant_columns_give_exact_zero():
    x = np.full(100, 0.1 + 0.7j)
    est, se = bilinear_cov(x, x)
    assert est == 0 and se == 0
    mo = standardized_moments(np.full(30, 0.3))
    assert mo["skewness"] == 0 and mo["excess_kurtosis"] == 0


def test_bilinear_cov_needs_two():
    with pytest.raises(DomainError):
        bilinear_cov([1.0], [2.0])


def test_moments_against_scipy(rng):
    x = rng.gamma(2.0, size=400)
    mo = standardized_moments(x)
    assert mo["skewness"] == pytest.approx(stats.skew(x), rel=1e-10)
    assert mo["excess_kurtosis"] == pytest.approx(stats.kurtosis(x), rel=1e-10)
    # gamma(2) has skewness sqrt(2) and excess kurtosis 3
    assert abs(mo["skewness"] - np.sqrt(2)) <= 4 * mo["skewness_se"]
    assert abs(mo["excess_kurtosis"] - 3) <= 4 * mo["excess_kurtosis_se"]


def test_sigma_reconstruction(cfg):
    rs = run_replicas(cfg, 4, R=40, with_g=False)
    S, E = empirical_sigma(rs, 0)
    czz, _ = estimate_bilinear_cov(rs, 0, 0)
    czb, _ = estimate_bilinear_cov(rs, 0, 0, conjugate_j=True)
    assert np.allclose(sigma_from_covariances(czz, czb), S, rtol=0, atol=1e-12 * np.abs(S).max())
    assert abs(czb.imag) <= 1e-15 * abs(czb) and czb.real >= 0
    assert np.all(E > 0) and S[0, 1] == S[1, 0]


def test_char_function_symmetries(cfg):
    rs = run_replicas(cfg, 3, R=30, with_g=False)
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    Z, se = empirical_char_function(rs, 0, x)
    assert Z[2] == 1
    assert np.allclose(Z[::-1], Z.conj(), rtol=0, atol=1e-15)
    assert se == pytest.approx(1 / np.sqrt(30))


def test_comparison_zscore():
    assert Comparison("a", 1.0, 1.0, 0.0).zscore == 0
    assert Comparison("a", 1.0, 2.0, 0.0).zscore == np.inf
    c = Comparison("a", 1.0 + 1j, 1.0, 0.5)
    assert c.zscore == pytest.approx(2.0) and c.within(2.0) and not c.within(1.9)


# -- reports and studies ------------------------------------------------------------


def test_clt_report_rows(cfg, p_mp):
    rs = run_replicas(cfg, 4, R=40, with_g=False)
    rep = clt_report(rs, p_mp, 0, x_grid=(-1.0, 0.0, 1.0))
    names = [r.name for r in rep.rows]
    for k in ("mean g_n", "Cov(z, z)", "Cov(z, conj z)", "Sigma_11", "Sigma_12", "Sigma_22",
              "skewness Im gamma", "excess kurtosis Re gamma"):
        assert k in names
    assert any(k.startswith("Cov(gamma(0+5i), gamma(1+6i))") for k in names)
    assert rep.row("mean g_n").theory == solve_f(5j, p_mp).f
    assert rep.Z_hat[1] == 1 and rep.Z_theory[1] == 1
    assert rep.sigma_theory[0, 0] + rep.sigma_theory[1, 1] == pytest.approx(rep.row("Cov(z, conj z)").theory.real)
    d = rep.to_dict()
    assert d["R"] == 40 and isinstance(d["rows"][0]["estimate"], dict)


def test_zero_measure_studies(zero_cfg):
    p = zero_cfg.params
    sets = {n: run_replicas(zero_cfg, n) for n in (3, 4)}
    rep = clt_report(sets[4], p, 0, x_grid=(-1.0, 1.0))
    assert all(r.deviation == 0 for r in rep.rows if r.name != "mean g_n")
    assert rep.row("mean g_n").deviation <= 1e-15
    assert rep.V == 0 and np.all(rep.Z_hat == 1)
    vs = variance_scaling_study(sets)
    assert vs["ratios"][0]["flag"] is False and vs["rows"][0]["var"] == 0
    lc = lemma_checks(sets, p)
    assert all(r["err_g"] <= 1e-15 and r["err_g1"] <= 1e-15 and r["err_g2"] <= 1e-15 for r in lc["rows"])
    assert higher_moment_diagnostic(sets[3]) == {2: 0.0, 4: 0.0, 6: 0.0}


def test_variance_study_needs_replicas(cfg):
    with pytest.raises(DomainError):
        variance_scaling_study({3: run_replicas(cfg, 3, R=10, with_g=False)})


def test_lemma_checks_shape(cfg, p_mp):
    sets = {n: run_replicas(cfg, n, R=20) for n in (3, 4)}
    lc = lemma_checks(sets, p_mp, 0, 1)
    assert [r["n"] for r in lc["rows"]] == [3, 4]
    r = lc["rows"][0]
    assert r["pred_g1"] != r["pred_g2"] and r["se_g1"] > 0
    assert np.isfinite(lc["slope_err_g"])


def test_kernel_Kn_rows(cfg, p_mp):
    qs = run_quadform_replicas(cfg, 3, R=30, pairs=[(5j, -5j)], conditional=True)
    (row,) = kernel_Kn_estimate(qs, p_mp)
    assert row["theory"] == kernel_K(5j, -5j, p_mp)
    assert row["se"] > 0 and "conditional_estimate" in row
    # Cov(A, conj A) = E|A - EA|^2 is real and nonnegative; so is its conditional version
    assert abs(row["estimate"].imag) <= 1e-12 * abs(row["estimate"]) and row["estimate"].real > 0
    assert abs(row["conditional_estimate"].imag) <= 1e-10 * abs(row["conditional_estimate"])
    (row2,) = kernel_Kn_estimate(qs, p_mp, pairs=[(5j, 1 + 6j)], tau_power=2)
    assert "conditional_estimate" not in row2


@pytest.mark.slow
def test_small_scale_statistics_are_sane(delta1):
    # a mild statistical smoke test: the mean of g_n is within a few SE plus an O(1/n) bias
    c = ExperimentConfig(1.0, delta1, (8,), 300, (5j,), master_seed=5)
    rs = run_replicas(c, 8, with_g=False)
    rep = clt_report(rs, LimitParams(1.0, delta1), 0)
    row = rep.row("mean g_n")
    assert row.deviation <= 4 * row.se + 1 / 64
    assert rep.row("Cov(z, conj z)").estimate.real > 0


def test_trace_square_variance_exact(delta1):
    # Var(Tr M^2) = 4 C(m, 2) (E u^2 E v^2 - n^-4) with u, v the squared factor overlaps;
    # the same pairwise independence gives Var((M^a Y, Y)) = (m - 1)(...)
    from tensorclt.sampler import EnsembleConfig, assemble_gram, draw_ensemble

    n, R = 4, 4000
    m = n * n
    d = 9 / (n * n * (n + 2) ** 2) - n**-4.0
    tr2, quad = np.empty(R), np.empty(R)
    for r in range(R):
        s = draw_ensemble(EnsembleConfig(n, 1.0, delta1, replica_seed(9, n, r)))
        K = assemble_gram(s)
        tr2[r] = np.sum(K * K)
        quad[r] = np.sum(K[-1, :-1] ** 2)
    for x, exact in ((tr2, 4 * m * (m - 1) / 2 * d), (quad, (m - 1) * d)):
        v, se = bilinear_cov(x, x)
        assert abs(v.real - exact) <= 4 * se
