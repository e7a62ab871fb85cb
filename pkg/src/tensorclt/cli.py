"""Command-line entry point: ``tensorclt {solve,kernels,simulate,verify}``.

Every command reads one YAML configuration (see :mod:`tensorclt.config`) and
writes into ``--out``; ``manifest.json`` is written last, so its presence
marks a completed run.  Exit codes: 0 success/pass, 1 statistical failure,
2 configuration or domain error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import re
import sys
import time
from dataclasses import replace
from importlib import metadata

import numpy as np

from .config import LabConfig, load_config
from .errors import DomainError
from .limit import covariance_matrix_sigma, kernel_K, solve_f
from .mc import (
    QuadFormSet,
    ReplicaSet,
    clt_report,
    higher_moment_diagnostic,
    kernel_Kn_estimate,
    lemma_checks,
    run_quadform_replicas,
    run_replicas,
    variance_scaling_study,
    _jsonable,
)
from .verification import (
    check_clt_covariance,
    check_gaussianity,
    check_kernel_K,
    check_lemma_corrections,
    check_mean_convergence,
    check_variance_scaling,
)

EXIT_PASS, EXIT_STAT_FAIL, EXIT_DOMAIN, EXIT_INTERNAL = 0, 1, 2, 3
THREADS_ENV = "TENSORCLT_THREADS"


def _version() -> str:
    try:
        return metadata.version("tensorclt")
    except metadata.PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "unknown"


class Run:
    """Bookkeeping for one command: emitted files and phase timings."""

    def __init__(self, command, args):
        self.command = command
        self.config_path = os.path.abspath(args.config)
        self.out = os.path.abspath(args.out)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()
        os.makedirs(self.out, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def emitted(self, name: str) -> None:
        if name not in self.files:
            self.files.append(name)

    def phase(self, name: str, t_start: float) -> None:
        self.timings[name] = time.perf_counter() - t_start

    def write_manifest(self, status: str) -> None:
        self.timings["total"] = time.perf_counter() - self._t0
        manifest = {
            "command": self.command,
            "config": self.config_path,
            "output_dir": self.out,
            "files": self.files,
            "timings_s": self.timings,
            "version": _version(),
            "status": status,
        }
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)


def _fmt(x) -> str:
    return repr(float(x))


def _write_table(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _apply_overrides(cfg: LabConfig, args) -> LabConfig:
    if getattr(args, "allow_small_eta", False):
        cfg = replace(cfg, limit=replace(cfg.limit, allow_small_eta=True))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, experiment=replace(cfg.experiment, master_seed=int(args.seed)))
    return cfg


def _threads(cfg: LabConfig, args) -> int:
    if args.threads is not None:
        return int(args.threads)
    if os.environ.get(THREADS_ENV):
        return int(os.environ[THREADS_ENV])
    return int(cfg.threads or 1)


# ---------------------------------------------------------------------------
# solve / kernels


def cmd_solve(cfg: LabConfig, run: Run) -> int:
    params = cfg.params
    header = ["z_re", "z_im", "f_re", "f_im", "fprime_re", "fprime_im", "residual", "iterations", "error"]
    rows, failed = [], False
    for z in cfg.z_grid:
        try:
            s = solve_f(z, params)
            rows.append([_fmt(z.real), _fmt(z.imag), _fmt(s.f.real), _fmt(s.f.imag), _fmt(s.f_prime.real),
                         _fmt(s.f_prime.imag), _fmt(s.residual), s.iterations, ""])
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            failed = True
            rows.append([_fmt(z.real), _fmt(z.imag)] + [""] * 6 + [f"{type(exc).__name__}: {exc}"])
    _write_table(run.path("solve.csv"), header, rows)
    run.emitted("solve.csv")
    return EXIT_DOMAIN if failed else EXIT_PASS


def cmd_kernels(cfg: LabConfig, run: Run) -> int:
    params = cfg.params
    allow = cfg.limit.allow_small_eta
    method = cfg.limit.kernel_method
    header = ["z_re", "z_im",
              "K_zzbar_re", "K_zzbar_im", "C_zz_re", "C_zz_im", "C_zzbar_re", "C_zzbar_im",
              "Sigma_11", "Sigma_12", "Sigma_22", "V", "precision_flags", "error"]
    rows, failed = [], False
    for z in cfg.z_grid:
        try:
            sig = covariance_matrix_sigma(z, params, allow_small_eta=allow, method=method)
            K = kernel_K(z, z.conjugate(), params, tau_power=cfg.limit.tau_power)
            S = sig.matrix
            flags = "; ".join(sig.warnings)
            if abs(z.imag) < params.eta0:
                flags = "; ".join(filter(None, ["below eta0", flags]))
            rows.append([_fmt(z.real), _fmt(z.imag), _fmt(K.real), _fmt(K.imag),
                         _fmt(sig.C_zz.real), _fmt(sig.C_zz.imag), _fmt(sig.C_zzbar.real), _fmt(sig.C_zzbar.imag),
                         _fmt(S[0, 0]), _fmt(S[0, 1]), _fmt(S[1, 1]), _fmt(sig.V), flags, ""])
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            failed = True
            rows.append([_fmt(z.real), _fmt(z.imag)] + [""] * 11 + [f"{type(exc).__name__}: {exc}"])
    _write_table(run.path("kernels.csv"), header, rows)
    run.emitted("kernels.csv")
    return EXIT_DOMAIN if failed else EXIT_PASS


# ---------------------------------------------------------------------------
# simulate / verify


def _plan(cfg: LabConfig, experiment: bool = True, verify: bool = True) -> dict[int, int]:
    """``n -> R`` for the resolvent-trace replicas of the experiment and/or the comparisons."""
    need: dict[int, int] = {}
    if experiment:
        ex = cfg.experiment
        need = {int(n): dict(ex.R_overrides).get(int(n), ex.R) for n in ex.n_list}
    if verify:
        for n, R in cfg.verify.sizes().items():
            need[n] = max(need.get(n, 0), R)
    return dict(sorted(need.items()))


def _g_sizes(cfg: LabConfig) -> set[int]:
    return {int(n) for n in (cfg.verify.lemma or {}).get("n_list", [])}


def _kk_points(cfg: LabConfig) -> tuple[complex, ...]:
    pts = []
    for a, b in cfg.verify.kernel_K["pairs"]:
        for z in (a, b):
            w = z if z.imag > 0 else z.conjugate()
            if w not in pts:
                pts.append(w)
    return tuple(pts)


def _replica_name(n, lo=None, hi=None):
    return f"replicas_n{n}.csv" if lo is None else f"replicas_n{n}.part{lo}-{hi}.csv"


def _quadform_name(n, lo=None, hi=None):
    return f"quadform_n{n}.csv" if lo is None else f"quadform_n{n}.part{lo}-{hi}.csv"


def _parse_range(text):
    if text is None:
        return None
    m = re.fullmatch(r"(\d+):(\d+)", text)
    if not m or int(m.group(1)) >= int(m.group(2)):
        raise DomainError(f"replica range must look like START:STOP with START < STOP, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _simulate_all(cfg: LabConfig, threads: int, rng_range=None, run: Run | None = None,
                  for_verify: bool = False):
    """Replica sets for ``simulate`` or for an inline ``verify``.

    ``simulate`` draws the experiment block, plus everything the comparisons
    need when ``verify`` is set to read files instead of simulating inline;
    an inline ``verify`` draws only what its comparisons use.
    """
    with_verify = for_verify or not cfg.verify.inline_simulation
    plan = _plan(cfg, experiment=not for_verify, verify=with_verify)
    ecfg = cfg.experiment_config(n_list=tuple(plan))
    gsizes = _g_sizes(cfg)
    sets, qsets = {}, {}
    for n, R in plan.items():
        lo, hi = (0, R) if rng_range is None else (rng_range[0], min(rng_range[1], R))
        if lo >= hi:
            continue
        t = time.perf_counter()
        sets[n] = run_replicas(ecfg, n, R=hi - lo, start=lo, threads=threads, with_g=n in gsizes)
        if run is not None:
            run.phase(f"simulate n={n}", t)
    kk = cfg.verify.kernel_K if with_verify else None
    if kk:
        n, R = int(kk["n"]), int(kk["R"])
        lo, hi = (0, R) if rng_range is None else (rng_range[0], min(rng_range[1], R))
        if lo < hi:
            qcfg = cfg.experiment_config(n_list=(n,), z_points=_kk_points(cfg))
            t = time.perf_counter()
            qsets[n] = run_quadform_replicas(qcfg, n, hi - lo, pairs=kk["pairs"], start=lo,
                                             conditional=bool(kk.get("conditional", False)), threads=threads)
            if run is not None:
                run.phase(f"quadform n={n}", t)
    return sets, qsets


def cmd_simulate(cfg: LabConfig, run: Run, threads: int, replica_range=None) -> int:
    sets, qsets = _simulate_all(cfg, threads, replica_range, run)
    shard = replica_range is not None
    for n, rs in sets.items():
        name = _replica_name(n, rs.start, rs.start + rs.R) if shard else _replica_name(n)
        rs.to_csv(run.path(name))
        run.emitted(name)
    for n, qs in qsets.items():
        name = _quadform_name(n, qs.start, qs.start + qs.R) if shard else _quadform_name(n)
        qs.to_csv(run.path(name))
        run.emitted(name)
    return EXIT_PASS


def _load(out, n, kind):
    cls, name = (ReplicaSet, _replica_name) if kind == "gamma" else (QuadFormSet, _quadform_name)
    full = os.path.join(out, name(n))
    if os.path.exists(full):
        return cls.from_csv(full)
    parts = sorted(glob.glob(os.path.join(out, name(n).replace(".csv", ".part*-*.csv"))))
    if not parts:
        raise FileNotFoundError(f"missing simulation output: expected {full} (or shard files next to it)")
    loaded = [cls.from_csv(p) for p in parts]
    if kind == "gamma":
        return ReplicaSet.concat(loaded)
    return _concat_quadform(loaded)


def _concat_quadform(parts):
    parts = sorted(parts, key=lambda p: p.start)
    for a, b in zip(parts, parts[1:]):
        if b.start != a.start + a.R:
            raise DomainError(f"quadratic-form shards are not contiguous: {a.start}+{a.R} != {b.start}")
    f = parts[0]
    cat = lambda name: None if getattr(f, name) is None else np.concatenate([getattr(p, name) for p in parts])
    return QuadFormSet(f.n, f.c, f.measure, f.z_points, cat("seeds"), cat("values"), f.pairs,
                       cat("conditional"), cat("traces"), f.start, f.master_seed)


def _check_replica_counts(cfg: LabConfig):
    v = cfg.verify
    floor = cfg.tolerances.min_replicas
    blocks = {"mean": v.mean, "clt": v.clt, "variance": v.variance, "kernel_K": v.kernel_K, "lemma": v.lemma}
    for name, block in blocks.items():
        if block and int(block["R"]) < floor:
            raise DomainError(
                f"verify.{name}.R = {block['R']} is below the statistical minimum of {floor} replicas"
            )
    if not any(blocks.values()):
        raise DomainError("verify needs at least one comparison block (mean, clt, variance, kernel_K, lemma)")


def cmd_verify(cfg: LabConfig, run: Run, threads: int) -> tuple[int, dict]:
    _check_replica_counts(cfg)
    v, tol, params = cfg.verify, cfg.tolerances, cfg.params
    method = cfg.limit.kernel_method
    allow = cfg.limit.allow_small_eta
    if v.inline_simulation:
        t = time.perf_counter()
        sets, qsets = _simulate_all(cfg, threads, None, run, for_verify=True)
        run.phase("simulation", t)
    else:
        sets = {n: _load(run.out, n, "gamma") for n in cfg.verify.sizes()}
        qsets = {int(v.kernel_K["n"]): _load(run.out, int(v.kernel_K["n"]), "quadform")} if v.kernel_K else {}

    def take(n, R):
        rs = sets[int(n)]
        return rs.head(int(R))

    i = v.z_index
    checks, report = [], {"config": cfg.to_dict(), "version": _version()}
    t = time.perf_counter()
    if v.mean:
        table = lemma_checks({n: take(n, v.mean["R"]) for n in v.mean["n_list"]}, params, i)
        checks.append(check_mean_convergence(table, tol))
    if v.kernel_K:
        qs = qsets[int(v.kernel_K["n"])]
        rows = kernel_Kn_estimate(qs, params, tau_power=cfg.limit.tau_power)
        checks.append(check_kernel_K(rows, tol))
    if v.clt:
        rs = take(v.clt["n"], v.clt["R"])
        rep = clt_report(rs, params, i, cfg.experiment.x_grid, allow_small_eta=allow, method=method)
        report["clt_report"] = rep.to_dict()
        report["higher_moments"] = higher_moment_diagnostic(rs, i)
        checks.append(check_clt_covariance(rep, tol))
        checks.append(check_gaussianity(rep, tol))
    if v.variance:
        study = variance_scaling_study({n: take(n, v.variance["R"]) for n in v.variance["n_list"]}, i,
                                       tol.variance_ratio, tol.se_multiple)
        checks.append(check_variance_scaling(study, tol))
    diagnostics = []
    if v.lemma:
        table = lemma_checks({n: take(n, v.lemma["R"]) for n in v.lemma["n_list"]}, params, i)
        diagnostics.append(check_lemma_corrections(table, tol))
    run.phase("comparisons", t)
    report["checks"] = [c.to_dict() for c in checks]
    report["diagnostics"] = [d.to_dict() for d in diagnostics]
    report["passed"] = all(c.passed for c in checks)
    with open(run.path("report.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(report), fh, indent=2)
    run.emitted("report.json")

    print(f"{'check':<22} {'result':<6} detail")
    for c in checks:
        print(f"{c.key:<22} {'PASS' if c.passed else 'FAIL':<6} {c.title}")
    for d in diagnostics:
        print(f"{d.key:<22} {'ok' if d.passed else 'note':<6} {d.title} (diagnostic)")
    return (EXIT_PASS if report["passed"] else EXIT_STAT_FAIL), report


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensorclt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "solve the functional equation on the configured z-grid"),
        ("kernels", "evaluate K, C, Sigma and V on the z-grid"),
        ("simulate", "draw replica ensembles and store them as CSV"),
        ("verify", "compare simulations with the limit theory"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="YAML configuration file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override experiment.master_seed (u64)")
        s.add_argument("--threads", type=int, default=None,
                       help=f"worker processes (default: ${THREADS_ENV} or config 'threads')")
        s.add_argument("--allow-small-eta", action="store_true", help="permit |Im z| < eta0")
        if name == "simulate":
            s.add_argument("--replica-range", default=None, metavar="START:STOP",
                           help="simulate only replicas START..STOP-1 (shard); verify concatenates shards")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise DomainError("--seed must be a 64-bit unsigned integer")
        run = Run(args.command, args)
        threads = _threads(cfg, args)
        if args.command == "solve":
            code = cmd_solve(cfg, run)
        elif args.command == "kernels":
            code = cmd_kernels(cfg, run)
        elif args.command == "simulate":
            code = cmd_simulate(cfg, run, threads, _parse_range(args.replica_range))
        else:
            code, _ = cmd_verify(cfg, run, threads)
    except (DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001 - anything else is a bug or a numerical breakdown
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    run.write_manifest("ok" if code == EXIT_PASS else f"exit {code}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
