"""Which power of tau belongs in the last term of the kernel K?

For a point mass at 1 the two candidate integrands coincide, so the choice
is only visible with non-unit weights.  This script takes a two-atom
measure, estimates ``n^2 Cov(A(z1), A(z2))`` (conditional estimator, which
has the smaller variance) over a few ``n``, extrapolates in ``1/n`` and
prints the limit under both candidates.

    python scripts/tau_power_check.py --n 6 8 12 --R 3000
"""
import argparse

from finite_size_study import extrapolate
from tensorclt.limit import LimitParams, kernel_K
from tensorclt.mc import ExperimentConfig, kernel_Kn_estimate, run_quadform_replicas
from tensorclt.measures import TauMeasure


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[6, 8, 12])
    ap.add_argument("--R", type=int, default=3000)
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)

    measure = TauMeasure.mixture([(0.25, 0.5), (1.0, 0.5)])
    params = LimitParams(args.c, measure)
    z1, z2 = params.eta0 * 1j, params.eta0 * -1j
    cfg = ExperimentConfig(args.c, measure, tuple(args.n), args.R, (z1,), master_seed=args.seed)
    K4 = kernel_K(z1, z2, params, tau_power=4).real
    K2 = kernel_K(z1, z2, params, tau_power=2).real
    print(f"weights {{0.25, 1}} (equal mass), c = {args.c}, z = {z1}, conj z")
    print(f"limit with tau^4: {K4:.6e}   with tau^2: {K2:.6e}")
    ests, ses = [], []
    for n in args.n:
        qs = run_quadform_replicas(cfg, n, args.R, pairs=[(z1, z2)], conditional=True, threads=args.threads)
        (row,) = kernel_Kn_estimate(qs, params)
        ests.append(row["conditional_estimate"].real)
        ses.append(row["conditional_se"])
        print(f"n = {n:>3}: n^2 K_n = {ests[-1]:.6e} +- {ses[-1]:.1e}")
    a, sa = extrapolate(args.n, ests, ses)
    print(f"1/n extrapolation: {a:.6e} +- {sa:.1e}")
    print(f"z-score vs tau^4: {(a - K4) / sa:+.2f}   vs tau^2: {(a - K2) / sa:+.2f}")


if __name__ == "__main__":
    main()
