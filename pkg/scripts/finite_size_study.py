"""Finite-n trend of the covariance comparisons and a 1/n extrapolation.

At desk-scale sizes the empirical ``Cov(gamma(z), gamma(conj z))`` and
``n^2 Cov(A(z1), A(z2))`` still carry visible ``O(1/n)`` corrections.  This
script estimates both over a range of ``n``, fits ``a + b/n`` by weighted
least squares and compares the intercept with the limit.

    python scripts/finite_size_study.py --n 8 12 16 24 --R 2000 --kn 6 8 12 16 --RK 4000
"""
import argparse

import numpy as np

from tensorclt.limit import LimitParams, kernel_C, kernel_K
from tensorclt.mc import ExperimentConfig, estimate_bilinear_cov, kernel_Kn_estimate, run_quadform_replicas, run_replicas
from tensorclt.measures import TauMeasure


def extrapolate(ns, est, se):
    """Weighted fit of ``est = a + b/n``; returns ``(a, se_a)``."""
    ns, est, se = map(np.asarray, (ns, est, se))
    X = np.column_stack([np.ones_like(ns, dtype=float), 1.0 / ns])
    W = 1.0 / se**2
    cov = np.linalg.inv(X.T @ (W[:, None] * X))
    coef = cov @ X.T @ (W * est)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--z", type=complex, default=5j)
    ap.add_argument("--n", type=int, nargs="+", default=[8, 12, 16, 24])
    ap.add_argument("--R", type=int, default=2000)
    ap.add_argument("--kn", type=int, nargs="+", default=[6, 8, 12, 16])
    ap.add_argument("--RK", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)

    measure = TauMeasure.point_mass(1.0)
    params = LimitParams(args.c, measure)
    z = args.z
    zb = z.conjugate()

    cfg = ExperimentConfig(args.c, measure, tuple(args.n), args.R, (z,), master_seed=args.seed)
    theory = kernel_C(z, zb, params).real
    print(f"Cov(gamma(z), gamma(conj z)) at z = {z}; limit C = {theory:.6e}")
    print(f"{'n':>4} {'estimate':>12} {'se':>10} {'z-score':>8}")
    est, ses = [], []
    for n in args.n:
        v, se = estimate_bilinear_cov(run_replicas(cfg, n, with_g=False, threads=args.threads), 0, 0, True)
        est.append(v.real)
        ses.append(se)
        print(f"{n:>4} {v.real:12.5e} {se:10.2e} {(v.real - theory) / se:8.2f}")
    a, sa = extrapolate(args.n, est, ses)
    print(f"a + b/n intercept: {a:.5e} +- {sa:.1e}  (limit {theory:.5e}, z = {(a - theory) / sa:.2f})\n")

    qcfg = ExperimentConfig(args.c, measure, tuple(args.kn), args.RK, (z,), master_seed=args.seed)
    K = kernel_K(z, zb, params).real
    print(f"n^2 K_n(z, conj z); limit K = {K:.6e}")
    print(f"{'n':>4} {'plain':>12} {'se':>10} {'conditional':>12} {'se':>10}")
    plain, psd, cond, csd = [], [], [], []
    for n in args.kn:
        qs = run_quadform_replicas(qcfg, n, args.RK, pairs=[(z, zb)], conditional=True, threads=args.threads)
        (row,) = kernel_Kn_estimate(qs, params)
        plain.append(row["estimate"].real)
        psd.append(row["se"])
        cond.append(row["conditional_estimate"].real)
        csd.append(row["conditional_se"])
        print(f"{n:>4} {plain[-1]:12.5e} {psd[-1]:10.2e} {cond[-1]:12.5e} {csd[-1]:10.2e}")
    for name, e, s in (("plain", plain, psd), ("conditional", cond, csd)):
        a, sa = extrapolate(args.kn, e, s)
        print(f"{name:>11} a + b/n intercept: {a:.5e} +- {sa:.1e}  (limit {K:.5e}, z = {(a - K) / sa:.2f})")


if __name__ == "__main__":
    main()
