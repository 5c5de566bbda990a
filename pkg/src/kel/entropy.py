"""Sample-based relative entropy estimators.

``knn_kl`` is the two-sample k-nearest-neighbour estimator; ``dv_lower_bound``
maximises the Donsker-Varadhan objective

    mean_P[log f] - log mean_Q[f]

over log-quadratic test functions, which is a lower bound on KL(P | Q) for
every admissible ``f``.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DegenerateGeometry, ValidationError
from .transport import DivergenceEstimate

__all__ = [
    "QuadraticTestFunction",
    "knn_kl",
    "dv_objective",
    "dv_lower_bound",
    "golden_section_max",
]

_ROWS = 512
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def _kth_distance(query: np.ndarray, ref: np.ndarray, k: int, exclude_self: bool,
                  threads: int) -> np.ndarray:
    """Distance from each query point to its k-th nearest point of ``ref`` (brute force)."""
    out = np.empty(query.shape[0])

    def block(a):
        b = min(a + _ROWS, query.shape[0])
        D = cdist(query[a:b], ref, "sqeuclidean")
        if exclude_self:
            D[np.arange(b - a), np.arange(a, b)] = np.inf
        out[a:b] = np.sqrt(np.partition(D, k - 1, axis=1)[:, k - 1])

    starts = range(0, query.shape[0], _ROWS)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(block, starts))
    else:
        for a in starts:
            block(a)
    return out


def _jitter_duplicates(P: np.ndarray, Q: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    both = np.vstack([P, Q])
    _, first, counts = np.unique(both, axis=0, return_index=True, return_counts=True)
    if np.all(counts == 1):
        return P, Q
    warnings.warn("duplicate sample points jittered by 1e-12", RuntimeWarning)
    rng = np.random.default_rng(seed)
    both = both + 1e-12 * rng.standard_normal(both.shape) * np.maximum(1.0, np.abs(both))
    return both[: P.shape[0]], both[P.shape[0]:]


def knn_kl(P_samples, Q_samples, k: int = 5, n_boot: int = 20, seed: int = 0,
           threads: int = 1) -> DivergenceEstimate:
    """k-NN estimate of KL(P | Q) from samples of both laws.

    The uncertainty is the bootstrap standard error of the mean of the
    per-sample log-ratio terms (neighbour radii are not recomputed).
    """
    P = np.atleast_2d(np.asarray(P_samples, dtype=float))
    Q = np.atleast_2d(np.asarray(Q_samples, dtype=float))
    N, d = P.shape
    M = Q.shape[0]
    if Q.shape[1] != d:
        raise ValidationError("sample sets must share the dimension")
    if not 1 <= k < min(N, M):
        raise ValidationError(f"k = {k} must satisfy 1 <= k < min(N, M) = {min(N, M)}")
    P, Q = _jitter_duplicates(P, Q, seed)
    rho = _kth_distance(P, P, k, True, threads)
    nu = _kth_distance(P, Q, k, False, threads)
    if np.any(rho <= 0) or np.any(nu <= 0):
        raise DegenerateGeometry("zero nearest-neighbour radius")
    terms = d * np.log(nu / rho)
    raw = terms.mean() + np.log(M / (N - 1.0))
    g = np.random.default_rng([seed, 1])
    boots = [terms[g.integers(0, N, N)].mean() for _ in range(n_boot)]
    se = float(np.std(boots, ddof=1)) if n_boot > 1 else None
    return DivergenceEstimate(float(max(raw, 0.0)), "knn_kl", se,
                              {"k": k, "raw": float(raw), "n": N, "m": M})


@dataclass
class QuadraticTestFunction:
    """log f(x) = x^T Q x + l^T x + c."""

    Q: np.ndarray
    l: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.Q = 0.5 * (self.Q + self.Q.T)
        self.l = np.atleast_1d(np.asarray(self.l, dtype=float))
        if not (np.all(np.isfinite(self.Q)) and np.all(np.isfinite(self.l)) and np.isfinite(self.c)):
            raise ValidationError("test function parameters must be finite")

    def log_f(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ij,nj->n", x, self.Q, x) + x @ self.l + self.c

    def integrable_under(self, cov: np.ndarray, margin: float = 1e-3) -> bool:
        """f is integrable under a Gaussian with covariance ``cov``."""
        w, V = np.linalg.eigh(cov)
        root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        return bool(np.linalg.eigvalsh(root @ self.Q @ root)[-1] < 0.5 - margin)


def dv_objective(f: QuadraticTestFunction, P: np.ndarray, Q: np.ndarray) -> float:
    """Empirical Donsker-Varadhan objective of one test function."""
    return float(f.log_f(P).mean() - (logsumexp(f.log_f(Q)) - np.log(Q.shape[0])))


def golden_section_max(fun, lo: float, hi: float, iters: int = 30) -> tuple[float, float]:
    """Maximise a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def _unpack(theta: np.ndarray, d: int, quadratic: bool) -> QuadraticTestFunction:
    l = theta[:d]
    Qm = np.zeros((d, d))
    if quadratic:
        iu = np.triu_indices(d)
        Qm[iu] = theta[d:]
        Qm = 0.5 * (Qm + Qm.T)
    return QuadraticTestFunction(Qm, l)


def _gaussian_start(P: np.ndarray, Q: np.ndarray, quadratic: bool) -> np.ndarray:
    """Log-ratio of moment-matched Gaussians, the exact optimiser in the Gaussian case."""
    d = P.shape[1]
    mp, mq = P.mean(0), Q.mean(0)
    Sp = np.atleast_2d(np.cov(P, rowvar=False))
    Sq = np.atleast_2d(np.cov(Q, rowvar=False))
    if not quadratic:
        l = np.linalg.solve(Sq, mp - mq)
        return l
    Pi, Qi = np.linalg.inv(Sp), np.linalg.inv(Sq)
    Qm = 0.5 * (Qi - Pi)
    l = Pi @ mp - Qi @ mq
    return np.concatenate([l, Qm[np.triu_indices(d)]])


def dv_lower_bound(P_samples, Q_samples, family: Optional[Iterable[QuadraticTestFunction]] = None,
                   quadratic: bool = True, budget: int = 4000, restarts: int = 3,
                   n_boot: int = 20, seed: int = 0) -> DivergenceEstimate:
    """Donsker-Varadhan lower-bound estimate of KL(P | Q).

    With ``family`` given, the best member of that explicit set is returned.
    Otherwise the objective is maximised over log-quadratic test functions
    (linear only when ``quadratic=False``) by cyclic golden-section line
    searches, started from the moment-matched Gaussian log-ratio, from f = 1
    and from ``restarts`` random points, until ``budget`` objective
    evaluations are spent. Parameters making f non-integrable under a
    Gaussian surrogate of Q are rejected. The uncertainty is the bootstrap
    standard error of the objective at the returned test function.
    """
    P = np.atleast_2d(np.asarray(P_samples, dtype=float))
    Q = np.atleast_2d(np.asarray(Q_samples, dtype=float))
    if P.shape[0] == 0 or Q.shape[0] == 0:
        raise ValidationError("sample sets must be non-empty")
    d = P.shape[1]
    covQ = np.atleast_2d(np.cov(Q, rowvar=False))
    evals = 0

    def objective(f: QuadraticTestFunction) -> float:
        nonlocal evals
        evals += 1
        if not f.integrable_under(covQ):
            return -np.inf
        return dv_objective(f, P, Q)

    best_f = QuadraticTestFunction(np.zeros((d, d)), np.zeros(d))
    best = 0.0  # f = 1 is always admissible

    if family is not None:
        for f in family:
            val = objective(f)
            if val > best:
                best, best_f = val, f
    else:
        n_par = d + (d * (d + 1) // 2 if quadratic else 0)
        rng = np.random.default_rng(seed)
        starts = [_gaussian_start(P, Q, quadratic), np.zeros(n_par)]
        scale = 1.0 / np.sqrt(np.mean(np.diag(covQ)))
        starts += [0.5 * scale * rng.standard_normal(n_par) for _ in range(restarts)]
        per_start = max(budget // len(starts), 1)
        for theta in starts:
            theta = theta.copy()
            cur = objective(_unpack(theta, d, quadratic))
            used = evals
            width = max(1.0, np.max(np.abs(theta))) * np.ones(n_par)
            while evals - used < per_start:
                before = cur
                for j in range(n_par):
                    def line(v, j=j):
                        trial = theta.copy()
                        trial[j] = v
                        return objective(_unpack(trial, d, quadratic))

                    v, val = golden_section_max(line, theta[j] - width[j], theta[j] + width[j])
                    if val > cur:
                        theta[j], cur = v, val
                        width[j] *= 1.5
                    else:
                        width[j] *= 0.5
                if cur - before < 1e-10 and np.max(width) < 1e-8:
                    break
            if cur > best:
                best, best_f = cur, _unpack(theta, d, quadratic)

    g = np.random.default_rng([seed, 2])
    boots = [dv_objective(best_f, P[g.integers(0, P.shape[0], P.shape[0])],
                          Q[g.integers(0, Q.shape[0], Q.shape[0])]) for _ in range(n_boot)]
    se = float(np.std(boots, ddof=1)) if n_boot > 1 else None
    return DivergenceEstimate(float(max(best, 0.0)), "dv_lower_bound", se,
                              {"evaluations": evals, "Q": best_f.Q, "l": best_f.l})
