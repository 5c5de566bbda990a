"""Exact Gaussian laws of linear block models.

For a linear model the law from a Gaussian start stays Gaussian; mean and
covariance follow the moment ODEs

    m' = F m + u,      S' = F S + S F^T + G G^T,

integrated here with fixed-step classical RK4.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotLinear, SingularReference, ValidationError
from .model import BlockModel

__all__ = [
    "GaussianState",
    "linear_coefficients",
    "propagate_linear",
    "propagate_linear_path",
    "gaussian_kl",
    "gaussian_w2",
    "sqrtm_psd",
    "entropy_cost_curve",
]

COND_CAP = 1e12
SUBSTEPS_PER_UNIT = 10_000
MIN_SUBSTEPS = 200


@dataclass
class GaussianState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValidationError("covariance shape does not match the mean")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValidationError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        w, V = np.linalg.eigh(cov)
        if w[0] < -1e-12 * max(1.0, w[-1]):
            raise ValidationError(f"covariance has a negative eigenvalue {w[0]:.3e}")
        if w[0] < 0:
            cov = (V * np.clip(w, 0.0, None)) @ V.T
        self.cov = cov

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def point(cls, x) -> "GaussianState":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, np.zeros((x.size, x.size)))


def linear_coefficients(model: BlockModel, t: float = 0.0, probes: int = 16,
                        seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (F, G, u) of a linear model, with drift F x + u and noise G dW.

    The affine parts are read off by evaluating the drift at 0 and at the unit
    vectors, then confirmed at random probe states.
    """
    D = model.dim
    pts = np.vstack([np.zeros(D), np.eye(D)])
    try:
        vals = model.drift(t, pts, None)
    except ValidationError as exc:
        raise NotLinear(f"model drift needs a measure: {exc}") from None
    u = vals[0]
    F = (vals[1:] - u).T
    x = np.random.default_rng(seed).uniform(-3, 3, (probes, D))
    resid = model.drift(t, x, None) - (x @ F.T + u)
    if np.max(np.abs(resid)) > 1e-9 * max(1.0, np.max(np.abs(F))) * 10:
        raise NotLinear("drift is not affine in the state")
    s0 = model.sigma_at(t)
    for tt in (t + 0.37, t + 1.91):
        if not np.allclose(model.sigma_at(tt), s0, rtol=0, atol=1e-14):
            raise NotLinear("sigma depends on time")
    G = np.zeros((D, model.d2))
    G[model.d1:] = s0
    return F, G, u


def _rk4_step_maps(F, GG, u, dt):
    """Affine maps of one classical RK4 step for the mean and the vectorised covariance.

    For an autonomous linear ODE y' = L y + c a single RK4 step is exactly
    y -> P4(dt L) y + dt P3(dt L) c with the truncated exponential series
    P4 = I + X + X^2/2 + X^3/6 + X^4/24 and P3 = I + X/2 + X^2/6 + X^3/24.
    """
    def maps(L, c):
        X = dt * L
        I = np.eye(L.shape[0])
        X2 = X @ X
        X3 = X2 @ X
        P4 = I + X + X2 / 2 + X3 / 6 + X3 @ X / 24
        P3 = I + X / 2 + X2 / 6 + X3 / 24
        return P4, dt * (P3 @ c)

    D = F.shape[0]
    I = np.eye(D)
    Rm, cm = maps(F, u)
    # row-major vec: vec(F S + S F^T) = (F kron I + I kron F) vec(S)
    RS, cS = maps(np.kron(F, I) + np.kron(I, F), GG.reshape(-1))
    return Rm, cm, RS, cS


def _rk4(F, GG, u, m, S, dt, n):
    Rm, cm, RS, cS = _rk4_step_maps(F, GG, u, dt)
    v = S.reshape(-1)
    for _ in range(n):
        m = Rm @ m + cm
        v = RS @ v + cS
    S = v.reshape(S.shape)
    return m, 0.5 * (S + S.T)


def _coefficients(F, G, u):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    G = np.asarray(G, dtype=float).reshape(F.shape[0], -1)
    u = np.zeros(F.shape[0]) if u is None else np.asarray(u, dtype=float)
    return F, G, u


def propagate_linear(F, G, u, init: GaussianState, t: float,
                     substeps: int = SUBSTEPS_PER_UNIT) -> GaussianState:
    """Law at time ``t`` of dX = (F X + u) dt + G dW started from ``init``.

    ``substeps`` is per unit time; at least ``MIN_SUBSTEPS`` steps are taken so
    that very short horizons are still resolved.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    F, G, u = _coefficients(F, G, u)
    n = max(MIN_SUBSTEPS, int(np.ceil(substeps * t)))
    m, S = _rk4(F, G @ G.T, u, init.mean.copy(), init.cov.copy(), t / n, n)
    return GaussianState(m, S)


def propagate_linear_path(F, G, u, init: GaussianState, times: Sequence[float],
                          substeps: int = SUBSTEPS_PER_UNIT) -> list[GaussianState]:
    """Laws at increasing ``times`` in one pass; each interval gets its own step count."""
    F, G, u = _coefficients(F, G, u)
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValidationError("times must be positive and strictly increasing")
    GG = G @ G.T
    m, S = init.mean.copy(), init.cov.copy()
    prev = 0.0
    out = []
    for t in times:
        n = max(MIN_SUBSTEPS, int(np.ceil(substeps * (t - prev))))
        m, S = _rk4(F, GG, u, m, S, (t - prev) / n, n)
        out.append(GaussianState(m, S))
        prev = t
    return out


def _scaled_factor(S: np.ndarray):
    """Cholesky factor of the diagonally rescaled covariance, plus the scaling.

    Condition numbers are judged after rescaling to unit diagonal, so that
    covariances whose blocks live on very different scales (the short-time
    kinetic case) are not mistaken for singular ones.
    """
    d = np.sqrt(np.diag(S))
    if np.any(d <= 0):
        raise SingularReference("reference covariance has a zero variance")
    C = S / np.outer(d, d)
    if np.linalg.cond(C) > COND_CAP:
        raise SingularReference("reference covariance is numerically singular")
    return np.linalg.cholesky(C), d


def gaussian_kl(p: GaussianState, q: GaussianState) -> float:
    """Relative entropy KL(p | q) of two Gaussians; ``q`` is the reference."""
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.cov, q.cov):
        return 0.0
    L, d = _scaled_factor(q.cov)
    k = p.dim
    # work in the coordinates x / d where q has covariance C = L L^T
    Sp = p.cov / np.outer(d, d)
    dm = (q.mean - p.mean) / d
    Linv_Sp = np.linalg.solve(L, Sp)
    trace = np.trace(np.linalg.solve(L.T, Linv_Sp))
    z = np.linalg.solve(L, dm)
    logdet_q = 2.0 * np.sum(np.log(np.diag(L)))
    sign, logdet_p = np.linalg.slogdet(Sp)
    if sign <= 0:
        return float("inf")
    val = 0.5 * (trace - k + z @ z + logdet_q - logdet_p)
    return float(max(val, 0.0))


def sqrtm_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def gaussian_w2(p: GaussianState, q: GaussianState) -> float:
    """Closed-form W2 between Gaussians (Bures term via eigen square roots)."""
    rq = sqrtm_psd(q.cov)
    cross = sqrtm_psd(rq @ p.cov @ rq)
    bures = np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(cross)
    val = np.sum((p.mean - q.mean) ** 2) + max(bures, 0.0)
    return float(np.sqrt(val))


def entropy_cost_curve(model: BlockModel, x, y, t_grid: Sequence[float],
                       substeps: int = SUBSTEPS_PER_UNIT) -> list[tuple[float, float]]:
    """Exact KL between the transition laws from ``x`` and from ``y``.

    Times where the shared covariance is numerically singular are skipped.
    """
    F, G, u = linear_coefficients(model)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = []
    for t in t_grid:
        px = propagate_linear(F, G, u, GaussianState.point(x), t, substeps)
        my = propagate_linear(F, G, u, GaussianState.point(y), t, substeps).mean
        try:
            kl = gaussian_kl(px, GaussianState(my, px.cov))
        except SingularReference:
            continue
        out.append((float(t), kl))
    return out
