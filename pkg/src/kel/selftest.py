"""Acceptance checks with frozen reference values.

Each ``criterion_*`` function returns an :class:`ExperimentReport` whose
``summary["passed"]`` is the verdict and ``summary["detail"]`` a one-line
explanation. :func:`run_selftest` runs them in order, writes every report
to an output directory and returns a table of verdicts and runtimes.
Runtimes are printed but never written, so the artifacts of two runs with
the same seed are byte-identical.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .entropy import dv_lower_bound, knn_kl
from .experiments import ExperimentReport, run_experiment
from .gramian import gramian_Q
from .model import granular_thetas, kappa, kinetic_ou, twisted_constants
from .transport import cost_matrix, w2_exact, w2_sinkhorn

__all__ = ["CRITERIA", "CriterionResult", "run_selftest", "format_table", "brute_force_w2"]

# reference values to 7 decimals, computed independently at high precision
KAPPA_1_0_0 = 0.2763932
TWISTED_1 = (1.2247449, 0.4082483)
THETAS_005_002_1 = (0.1368034, 0.0759017)


def _report(name: str, seed: int, passed: bool, detail: str, **summary) -> ExperimentReport:
    rep = ExperimentReport(name, {"criterion": name, "seed": seed}, seed, [])
    rep.summary = {"passed": bool(passed), "detail": detail, **summary}
    return rep


def criterion_constants(seed: int = 0, threads: int = 1) -> ExperimentReport:
    k = kappa(1.0, 0.0, 0.0)
    a, r = twisted_constants(1.0)
    th = granular_thetas(0.05, 0.02, 1.0)
    errs = [abs(k - KAPPA_1_0_0), abs(a - TWISTED_1[0]), abs(r - TWISTED_1[1]),
            abs(th[0] - THETAS_005_002_1[0]), abs(th[1] - THETAS_005_002_1[1])]
    ident = 0.0
    for beta in (0.5, 1.0, 2.0, 5.0):
        a_b, r_b = twisted_constants(beta)
        ident = max(ident, abs(a_b**2 - beta - r_b * a_b), abs(1 - r_b * a_b - beta / (1 + beta)))
    ok = max(errs) <= 1e-6 and ident <= 1e-12
    rep = _report("constants", seed, ok,
                  f"max error {max(errs):.2e} (tol 1e-6), identity residual {ident:.2e} (tol 1e-12)",
                  kappa=k, a=a, r=r, theta1=th[0], theta2=th[1], identity_residual=ident)
    return rep


def criterion_gramian(seed: int = 0, threads: int = 1) -> ExperimentReport:
    rel = 0.0
    for t in (0.1, 1.0, 10.0):
        Q = gramian_Q(kinetic_ou(), t, t, nodes=64).Q
        rel = max(rel, abs(Q[0, 0] / (t / 6) - 1.0))
    scal = run_experiment("gramian-scaling")
    s0, s1 = scal.summary["kinetic-ou"]["slope"], scal.summary["chain"]["slope"]
    ok = rel <= 1e-6 and abs(s0 - 2) <= 0.05 and abs(s1 - 4) <= 0.2
    scal.experiment = "gramian"
    scal.config = {"criterion": "gramian", "seed": seed, **scal.config}
    scal.summary.update(passed=bool(ok), relative_error_t_over_6=rel,
                        detail=f"Q(t,t) rel err {rel:.1e}; slopes {s0:.3f} (2+-0.05), {s1:.3f} (4+-0.2)")
    return scal


def criterion_entropy_inequality(seed: int = 0, threads: int = 1) -> ExperimentReport:
    rep = run_experiment("entropy-inequality")
    m = rep.summary["min_margin"]
    rep.summary.update(passed=bool(m > 0),
                       detail=f"min margin bound - KL = {m:.3e} over delta in (0.1, 0.5, 1), 50 times")
    return rep


def criterion_shorttime(seed: int = 0, threads: int = 1) -> ExperimentReport:
    rep = run_experiment("shorttime-scaling")
    s = rep.summary
    parts = [f"{name} {s[name]['slope']:.3f} (want {s[name]['expected_slope']})"
             for name in ("kinetic-position", "chain-far", "kinetic-velocity")]
    ok = (abs(s["kinetic-position"]["slope"] + 3) <= 0.3 and abs(s["chain-far"]["slope"] + 7) <= 0.7
          and abs(s["kinetic-velocity"]["slope"] + 1) <= 0.3)
    s.update(passed=bool(ok), detail="; ".join(parts))
    return rep


def brute_force_w2(X: np.ndarray, Y: np.ndarray) -> float:
    """Empirical W2 by enumerating every permutation (small N only)."""
    C = cost_matrix(X, Y)
    n = X.shape[0]
    perms = np.array(list(itertools.permutations(range(n))))
    return float(np.sqrt(C[np.arange(n), perms].sum(axis=1).min() / n))


def criterion_transport(seed: int = 0, threads: int = 1) -> ExperimentReport:
    g = np.random.default_rng([seed, 5])
    worst = 0.0
    for _ in range(50):
        n, d = int(g.integers(1, 9)), int(g.integers(1, 4))
        X, Y = g.normal(size=(n, d)), g.normal(size=(n, d)) + g.normal(size=d)
        worst = max(worst, abs(w2_exact(X, Y).value - brute_force_w2(X, Y)))
    X = g.normal(size=(256, 2))
    Y = g.normal(size=(256, 2)) * [1.0, 0.5] + [1.0, 0.0]
    ex = w2_exact(X, Y).value
    sk = w2_sinkhorn(X, Y)
    rel = abs(sk.value - ex) / ex
    ok = worst <= 1e-9 and rel <= 0.02
    return _report("transport", seed, ok,
                   f"exact vs brute force max diff {worst:.1e}; Sinkhorn rel. error {rel:.4f} (tol 0.02)",
                   brute_force_max_diff=worst, exact=ex, sinkhorn=sk.value, sinkhorn_rel_error=rel,
                   sinkhorn_iterations=sk.metadata["iterations"])


def criterion_entropy_estimators(seed: int = 0, threads: int = 1) -> ExperimentReport:
    g = np.random.default_rng([seed, 6])
    n = 20_000
    P = g.normal(size=(n, 2)) + [1.0, 0.0]
    Q = g.normal(size=(n, 2))
    truth = 0.5
    kn = knn_kl(P, Q, k=5, seed=seed, threads=threads)
    dv = dv_lower_bound(P, Q, seed=seed)
    ok = (abs(kn.value - truth) <= 0.08 and dv.value <= truth + 3 * dv.uncertainty
          and dv.value >= 0.35)
    return _report("entropy-estimators", seed, ok,
                   f"kNN {kn.value:.4f} (0.5 +- 0.08); DV {dv.value:.4f} in [0.35, 0.5 + 3 se = "
                   f"{truth + 3 * dv.uncertainty:.4f}]",
                   knn=kn.value, knn_se=kn.uncertainty, dv=dv.value, dv_se=dv.uncertainty)


def criterion_coupling(seed: int = 0, threads: int = 1) -> ExperimentReport:
    rep = run_experiment("coupling-contraction", {"seed": seed, "threads": threads})
    s = rep.summary
    s["detail"] = (f"rate {s['rate']:.4f} vs 2*0.9*kappa = {s['threshold']:.4f}; "
                   f"replay {'ok' if s['replay_ok'] else 'FAILED'}")
    return rep


def criterion_ergodicity(seed: int = 0, threads: int = 1) -> ExperimentReport:
    rep = run_experiment("ergodicity", {"seed": seed, "threads": threads})
    s = rep.summary
    s["detail"] = (f"W2^2 rate {s['w2_rate']:.4f} vs 2*0.8*kappa = {s['threshold']:.4f}; "
                   f"KL monotone within 2 se: {s['kl_monotone']}")
    return rep


CRITERIA: list[tuple[str, Callable[..., ExperimentReport]]] = [
    ("1-constants", criterion_constants),
    ("2-gramian", criterion_gramian),
    ("3-entropy-inequality", criterion_entropy_inequality),
    ("4-shorttime-scaling", criterion_shorttime),
    ("5-transport", criterion_transport),
    ("6-entropy-estimators", criterion_entropy_estimators),
    ("7-coupling-contraction", criterion_coupling),
    ("8-ergodicity", criterion_ergodicity),
]


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def run_selftest(outdir, seed: int = 0, threads: int = 1, only: Optional[list[str]] = None,
                 log: Optional[Callable[[str], None]] = None) -> list[CriterionResult]:
    """Run the acceptance checks and write ``<name>.json``/``<name>.csv`` per check."""
    outdir = Path(outdir)
    results = []
    for name, fn in CRITERIA:
        if only and name not in only and name.split("-", 1)[0] not in only:
            continue
        start = time.perf_counter()
        try:
            rep = fn(seed=seed, threads=threads)
            passed, detail = bool(rep.summary["passed"]), str(rep.summary["detail"])
            rep.write(outdir, stem=name)
        except Exception as exc:  # a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        res = CriterionResult(name, passed, detail, time.perf_counter() - start)
        results.append(res)
        if log:
            log(format_table([res], header=False))
    return results


def format_table(results: list[CriterionResult], header: bool = True) -> str:
    lines = [f"{'criterion':<26} {'result':<6} {'seconds':>8}  detail"] if header else []
    for r in results:
        lines.append(f"{r.name:<26} {'PASS' if r.passed else 'FAIL':<6} {r.seconds:>8.1f}  {r.detail}")
    return "\n".join(lines)
