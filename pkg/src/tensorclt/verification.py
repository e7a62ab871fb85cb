"""Pass/fail checks of the statistical comparisons.

Each check turns the output of an :mod:`tensorclt.mc` study into a
:class:`CheckResult` with a boolean verdict and the rows it was based on.
The command-line ``verify`` and the acceptance tests share these functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Tolerances
from .mc import CltReport, Comparison, _jsonable

__all__ = [
    "CheckResult",
    "check_mean_convergence",
    "check_kernel_K",
    "check_clt_covariance",
    "check_gaussianity",
    "check_variance_scaling",
    "check_lemma_corrections",
]


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    rows: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.key}: {self.title}"

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "title": self.title,
            "passed": bool(self.passed),
            "rows": [r.to_dict() if isinstance(r, Comparison) else _jsonable(r) for r in self.rows],
            "details": _jsonable(self.details),
        }


def _jsonable_row(row: dict) -> dict:
    return {k: _jsonable(v) for k, v in row.items()}


def check_mean_convergence(table: dict, tol: Tolerances = Tolerances()) -> CheckResult:
    """``|E g_n - f|`` decreases in ``n`` and ends below ``3 SE + 10 n^-2``."""
    rows = table["rows"]
    errs = [r["err_g"] for r in rows]
    decreasing = all(b < a or (a == 0 and b == 0) for a, b in zip(errs, errs[1:]))
    last = rows[-1]
    bound = tol.se_multiple * last["se_g"] + tol.mean_n2_coef * last["n"] ** -2.0
    ok = decreasing and last["err_g"] <= bound
    return CheckResult(
        "mean_convergence",
        "|E g_n - f| decreasing in n, final error below 3 SE + 10/n^2",
        bool(ok),
        [_jsonable_row(r) for r in rows],
        {"decreasing": decreasing, "final_bound": bound, "slope": table.get("slope_err_g")},
    )


def check_kernel_K(rows: list[dict], tol: Tolerances = Tolerances()) -> CheckResult:
    """``|n^2 K_n - K| <= 3 SE`` for every pair."""
    comps = [Comparison(f"n^2 K_n({r['z1']}, {r['z2']})", r["estimate"], r["theory"], r["se"]) for r in rows]
    ok = all(c.within(tol.se_multiple) for c in comps)
    return CheckResult("kernel_K", "n^2 K_n within 3 SE of K", bool(ok), comps,
                       {"raw": [_jsonable_row(r) for r in rows]})


def check_clt_covariance(rep: CltReport, tol: Tolerances = Tolerances()) -> CheckResult:
    """Entries of the 2x2 covariance and ``Cov(z, conj z)`` against the limit."""
    names = ["Sigma_11", "Sigma_12", "Sigma_22"]
    comps = [rep.row(k) for k in names]
    conj_row = rep.row("Cov(z, conj z)")
    comps.append(conj_row)
    imag = abs(complex(conj_row.estimate).imag)
    ok = all(c.within(tol.se_multiple) for c in comps) and imag <= tol.imag_tol
    return CheckResult(
        "clt_covariance",
        "empirical Sigma and Cov(z, conj z) within 3 SE; Cov(z, conj z) real",
        bool(ok),
        comps,
        {"imag_cov_z_zbar": imag, "n": rep.n, "R": rep.R},
    )


def check_gaussianity(rep: CltReport, tol: Tolerances = Tolerances()) -> CheckResult:
    """Characteristic function of ``Im gamma°`` against ``exp(-x^2 V/2)`` and moment z-scores."""
    sup = rep.char_sup_deviation
    bound = tol.char_se_coef / np.sqrt(rep.R) + tol.char_slack
    moments = [rep.row("skewness Im gamma"), rep.row("excess kurtosis Im gamma")]
    ok = sup <= bound and all(c.within(tol.moment_se_multiple) for c in moments)
    return CheckResult(
        "gaussianity",
        "sup |Z(x) - exp(-x^2 V/2)| <= 3/sqrt(R) + 0.02; skewness, excess kurtosis of Im gamma within 4 SE",
        bool(ok),
        moments,
        {"sup_deviation": sup, "bound": bound, "V": rep.V},
    )


def check_variance_scaling(study: dict, tol: Tolerances = Tolerances()) -> CheckResult:
    ok = not any(r["flag"] for r in study["ratios"])
    return CheckResult(
        "variance_scaling",
        "successive variance ratios within [1/1.5, 1.5] after 3 SE",
        bool(ok),
        [_jsonable_row(r) for r in study["ratios"]],
        {"variances": [_jsonable_row(r) for r in study["rows"]]},
    )


def check_lemma_corrections(table: dict, tol: Tolerances = Tolerances()) -> CheckResult:
    """Diagnostic: decreasing ``E g_n`` error and the effect of the ``1/n`` term in ``g1``.

    Passes when ``|E g_n - f|`` decreases beyond 2 SE between successive
    sizes and, at every size with ``g1`` data, the corrected prediction is
    closer than the leading term by more than 2 SE.
    """
    rows = table["rows"]
    k = tol.lemma_se_multiple
    dec = all(
        a["err_g"] - b["err_g"] > k * float(np.hypot(a["se_g"], b["se_g"]))
        or (a["err_g"] == 0 and b["err_g"] == 0)
        for a, b in zip(rows, rows[1:])
    )
    better = all(
        r["err_g1_leading"] - r["err_g1"] > k * r["se_g1"] or r["err_g1_leading"] == 0
        for r in rows if "err_g1" in r
    )
    return CheckResult(
        "lemma_corrections",
        "E g_n error decreasing beyond 2 SE; 1/n correction improves the g1 prediction",
        bool(dec and better),
        [_jsonable_row(r) for r in rows],
        {"decreasing": dec, "correction_helps": better, "slope": table.get("slope_err_g")},
    )
