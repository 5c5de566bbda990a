"""Wasserstein-2 distances between equal-size empirical measures."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import NotConverged, TooLarge, ValidationError
from .model import twisted_metric

__all__ = [
    "DiscreteCloud",
    "DivergenceEstimate",
    "TwistedCost",
    "cost_matrix",
    "w2_exact",
    "w2_sinkhorn",
    "bootstrap_w2",
    "EXACT_CAP",
]

EXACT_CAP = 2048
ESTIMATORS = ("exact_assignment", "sinkhorn", "gaussian_closed_form", "knn_kl", "dv_lower_bound")


@dataclass
class DiscreteCloud:
    """Uniformly weighted point cloud."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)


@dataclass
class DivergenceEstimate:
    value: float
    estimator: str
    uncertainty: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {self.estimator!r}")
        if not self.value >= 0:
            raise ValidationError("divergence values are non-negative")
        if self.uncertainty is not None and self.uncertainty < 0:
            raise ValidationError("uncertainty must be non-negative")

    def to_dict(self) -> dict:
        meta = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.metadata.items()}
        return {"value": self.value, "estimator": self.estimator,
                "uncertainty": self.uncertainty, "metadata": meta}


@dataclass(frozen=True)
class TwistedCost:
    beta: float
    B: tuple  # nested tuple, hashable

    @classmethod
    def of(cls, beta: float, B) -> "TwistedCost":
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return cls(float(beta), tuple(map(tuple, B)))


Cost = Union[None, str, TwistedCost]


def _points(X) -> np.ndarray:
    return X.points if isinstance(X, DiscreteCloud) else np.atleast_2d(np.asarray(X, dtype=float))


def cost_matrix(X, Y, cost: Cost = None) -> np.ndarray:
    """Pairwise squared ground cost."""
    X, Y = _points(X), _points(Y)
    if cost is None or cost == "euclidean":
        return cdist(X, Y, "sqeuclidean")
    if isinstance(cost, TwistedCost):
        B = np.asarray(cost.B)
        C = np.empty((X.shape[0], Y.shape[0]))
        for a in range(0, X.shape[0], 256):
            C[a:a + 256] = twisted_metric(X[a:a + 256, None, :], Y[None, :, :], cost.beta, B) ** 2
        return C
    raise ValidationError(f"unknown cost {cost!r}")


def w2_exact(X, Y, cost: Cost = None, cap: int = EXACT_CAP) -> DivergenceEstimate:
    """Exact empirical W2 by solving the assignment problem.

    ``metadata["matching"][i]`` is the index in ``Y`` matched to ``X[i]``.
    """
    X, Y = _points(X), _points(Y)
    if X.shape != Y.shape:
        raise ValidationError("clouds must have equal size and dimension")
    if X.shape[0] > cap:
        raise TooLarge(f"N = {X.shape[0]} exceeds the exact-solver cap {cap}; use w2_sinkhorn")
    C = cost_matrix(X, Y, cost)
    rows, cols = linear_sum_assignment(C)
    val = float(np.sqrt(max(C[rows, cols].mean(), 0.0)))
    return DivergenceEstimate(val, "exact_assignment", metadata={"matching": cols, "n": X.shape[0]})


def bootstrap_w2(X, Y, n_boot: int = 20, seed: int = 0, cost: Cost = None,
                 threads: int = 1) -> float:
    """Bootstrap standard error of the exact empirical W2."""
    X, Y = _points(X), _points(Y)
    n = X.shape[0]

    def one(b):
        g = np.random.default_rng([seed, b])
        return w2_exact(X[g.integers(0, n, n)], Y[g.integers(0, n, n)], cost).value

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(one, range(n_boot)))
    else:
        vals = [one(b) for b in range(n_boot)]
    return float(np.std(vals, ddof=1))


def _sinkhorn_potentials(C, eps_schedule, tol, max_iters, check_every=10):
    """Log-domain Sinkhorn with uniform weights and warm starts along the schedule."""
    n, m = C.shape
    loga, logb = -np.log(n), -np.log(m)
    f = np.zeros(n)
    g = np.zeros(m)
    iters = 0
    err = np.inf
    for eps in eps_schedule:
        for it in range(max_iters):
            f = -eps * logsumexp((g[None, :] - C) / eps + logb, axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + loga, axis=0)
            iters += 1
            if (it + 1) % check_every == 0 or it == max_iters - 1:
                # after the g-update column marginals are exact; check rows
                rows = logsumexp((f[:, None] + g[None, :] - C) / eps + logb, axis=1)
                err = np.abs(np.exp(rows) - 1.0).sum() / n
                if err < tol:
                    break
    eps = eps_schedule[-1]
    P = np.exp((f[:, None] + g[None, :] - C) / eps + loga + logb)
    return f, g, P, f.mean() + g.mean(), iters, err


def _sinkhorn_symmetric(C, eps_schedule, tol, max_iters):
    """Self-transport potential by the averaged fixed-point iteration."""
    n = C.shape[0]
    loga = -np.log(n)
    f = np.zeros(n)
    iters = 0
    err = np.inf
    for eps in eps_schedule:
        for _ in range(max_iters):
            fn = 0.5 * (f - eps * logsumexp((f[None, :] - C) / eps + loga, axis=1))
            iters += 1
            err = np.max(np.abs(fn - f)) / eps
            f = fn
            if err < tol:
                break
    eps = eps_schedule[-1]
    P = np.exp((f[:, None] + f[None, :] - C) / eps + 2 * loga)
    return f, f, P, 2.0 * f.mean(), iters, err


def w2_sinkhorn(X, Y, epsilon: Optional[float] = None, max_iters: int = 20_000, tol: float = 1e-4,
                stages: int = 4, rel_epsilon: float = 0.01, strict: bool = False,
                cost: Cost = None) -> DivergenceEstimate:
    """Debiased entropic estimate of W2.

    ``epsilon`` defaults to ``rel_epsilon`` times the median pairwise cost and
    is reached by geometric annealing from the median cost over ``stages``
    stages. The returned value is the square root of the Sinkhorn divergence
    OT(X, Y) - (OT(X, X) + OT(Y, Y)) / 2, clipped at 0, where OT is the
    entropic dual value. ``tol`` bounds the mean absolute relative row-marginal
    violation (potential change for the self terms). Non-convergence sets
    ``metadata["converged"] = False`` (or raises with ``strict=True``).
    """
    X, Y = _points(X), _points(Y)
    Cxy = cost_matrix(X, Y, cost)
    med = float(np.median(Cxy))
    if epsilon is None:
        epsilon = rel_epsilon * med
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    start = max(med, epsilon)
    schedule = np.geomspace(start, epsilon, stages) if stages > 1 else np.array([epsilon])

    parts = {}
    converged = True
    total_iters = 0
    for key, C in (("xy", Cxy), ("xx", cost_matrix(X, X, cost)), ("yy", cost_matrix(Y, Y, cost))):
        solver = _sinkhorn_potentials if key == "xy" else _sinkhorn_symmetric
        f, g, P, dual, iters, err = solver(C, schedule, tol, max_iters)
        parts[key] = (dual, float((P * C).sum()))
        total_iters += iters
        converged &= err < tol
    div = parts["xy"][0] - 0.5 * (parts["xx"][0] + parts["yy"][0])
    meta = {
        "epsilon": float(epsilon), "median_cost": med, "stages": int(len(schedule)),
        "iterations": total_iters, "converged": bool(converged),
        "raw_dual": parts["xy"][0], "raw_primal": parts["xy"][1],
    }
    if not converged:
        if strict:
            raise NotConverged(f"Sinkhorn did not reach tol={tol} in {max_iters} iterations per stage")
        warnings.warn("Sinkhorn did not converge; returning the last iterate", RuntimeWarning)
    return DivergenceEstimate(float(np.sqrt(max(div, 0.0))), "sinkhorn", metadata=meta)
