"""Flow matrices and the weighted controllability Gramian of the noise-free block.

For times 0 <= r <= t the flow ``K(t, r)`` solves ``dK/dt = (A + D1 b(X_t)) K``
with ``K(r, r) = I``, where ``D1 b`` is the Jacobian of ``b`` in the first
block. The Gramian is

    Q(t, s) = int_0^s r (t - r) / t^2  K(t, r) B B^T K(t, r)^T dr.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import NotPositiveDefinite, ValidationError
from .model import BlockModel, kalman_index
from .sde import measure_summary

__all__ = ["GramianResult", "flow_K", "gramian_Q", "verify_gramian_scaling", "ScalingFit"]

STEPS_PER_UNIT = 2000
PD_RTOL = 1e-13

Trajectory = Callable[[float], np.ndarray]


@dataclass
class GramianResult:
    Q: np.ndarray
    t: float
    s: float
    lambda_min: float
    nodes: int

    @property
    def lambda_max(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])


@dataclass
class ScalingFit:
    slope: float
    c0: float
    r2: float
    margins: np.ndarray
    lambda_min: np.ndarray
    expected_slope: int


def _noise_free_drift(model: BlockModel, x: np.ndarray) -> np.ndarray:
    pts = x[None, :]
    return model.drift(0.0, pts, measure_summary(model, pts))[0]


def _block1_jacobian(model: BlockModel, x: np.ndarray) -> np.ndarray:
    return model.jacobian_b(x[None, :])[0, :, : model.d1]


def _fundamental(model: BlockModel, times: np.ndarray, along: Optional[Trajectory],
                 x0: Optional[np.ndarray], steps_per_unit: int) -> list[np.ndarray]:
    """Fundamental matrix of the linearised block-1 flow at sorted ``times``, from 0."""
    d1 = model.d1
    A = model.A
    x = np.zeros(model.dim) if x0 is None else np.asarray(x0, dtype=float).copy()

    def rhs(tau, x, P):
        y = along(tau) if along is not None else x
        M = A + _block1_jacobian(model, np.asarray(y, dtype=float))
        dx = _noise_free_drift(model, x) if along is None else np.zeros_like(x)
        return dx, M @ P

    P = np.eye(d1)
    tau = 0.0
    out = []
    for target in times:
        n = max(1, int(np.ceil((target - tau) * steps_per_unit)))
        dt = (target - tau) / n
        for _ in range(n):
            k1x, k1P = rhs(tau, x, P)
            k2x, k2P = rhs(tau + dt / 2, x + dt / 2 * k1x, P + dt / 2 * k1P)
            k3x, k3P = rhs(tau + dt / 2, x + dt / 2 * k2x, P + dt / 2 * k2P)
            k4x, k4P = rhs(tau + dt, x + dt * k3x, P + dt * k3P)
            x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
            P = P + dt / 6 * (k1P + 2 * k2P + 2 * k3P + k4P)
            tau += dt
        tau = float(target)
        out.append(P.copy())
    return out


def _flows_to(model: BlockModel, t: float, starts: np.ndarray, along, x0,
              steps_per_unit: int) -> list[np.ndarray]:
    """K(t, r) for every r in ``starts``."""
    if model.b is None and along is None:
        return [expm(model.A * (t - r)) for r in starts]
    order = np.argsort(starts)
    times = np.append(np.asarray(starts)[order], t)
    Ps = _fundamental(model, times, along, x0, steps_per_unit)
    Pt = Ps[-1]
    Ks = [None] * len(starts)
    for j, i in enumerate(order):
        Ks[i] = np.linalg.solve(Ps[j].T, Pt.T).T
    return Ks


def flow_K(model: BlockModel, t: float, s: float, along: Optional[Trajectory] = None,
           x0=None, steps_per_unit: int = STEPS_PER_UNIT) -> np.ndarray:
    """Flow matrix K(t, s) of the linearised noise-free block.

    With ``b`` absent and no trajectory this is ``expm(A (t - s))``. Otherwise
    the Jacobian of ``b`` is evaluated along ``along`` (a callable of time) or,
    by default, along the noise-free trajectory started at ``x0`` (zero by
    default) at time 0, and the flow is integrated with RK4.
    """
    if not 0 <= s <= t:
        raise ValidationError("flow_K needs 0 <= s <= t")
    return _flows_to(model, t, np.array([s]), along, x0, steps_per_unit)[0]


def gramian_Q(model: BlockModel, t: float, s: float, nodes: int = 64,
              along: Optional[Trajectory] = None, x0=None,
              steps_per_unit: int = STEPS_PER_UNIT) -> GramianResult:
    """Weighted Gramian Q(t, s) by Gauss-Legendre quadrature on [0, s]."""
    if not 0 < s <= t:
        raise ValidationError("gramian_Q needs 0 < s <= t")
    if nodes < 16:
        raise ValidationError("at least 16 quadrature nodes are required")
    z, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * s * (z + 1.0)
    w = 0.5 * s * w
    BBt = model.B @ model.B.T
    Ks = _flows_to(model, t, r, along, x0, steps_per_unit)
    Q = np.zeros((model.d1, model.d1))
    for ri, wi, K in zip(r, w, Ks):
        Q += wi * ri * (t - ri) / t**2 * (K @ BBt @ K.T)
    Q = 0.5 * (Q + Q.T)
    return GramianResult(Q, float(t), float(s), float(np.linalg.eigvalsh(Q)[0]), nodes)


def verify_gramian_scaling(model: BlockModel, t: float, s_grid: Sequence[float],
                           nodes: int = 64, **kw) -> ScalingFit:
    """Fit log lambda_min(Q(t, s)) against log s.

    ``c0`` is the largest constant with ``lambda_min >= c0 s^(2(k+1)) / t`` on
    every grid point, where k is the Kalman index of (A, B); ``margins`` are
    ``lambda_min - c0 s^(2(k+1)) / t``.
    """
    s = np.asarray(s_grid, dtype=float)
    if s.size < 6 or np.any(s <= 0) or np.any(s > t):
        raise ValidationError("s_grid needs at least 6 points in (0, t]")
    if np.log10(s.max() / s.min()) < 1.5:
        raise ValidationError("s_grid must span at least 1.5 decades")
    lam = np.empty(s.size)
    for i, si in enumerate(s):
        res = gramian_Q(model, t, si, nodes, **kw)
        ev = np.linalg.eigvalsh(res.Q)
        if ev[0] <= PD_RTOL * max(ev[-1], np.finfo(float).tiny):
            raise NotPositiveDefinite(f"Q(t={t}, s={si}) is not positive definite")
        lam[i] = ev[0]
    k = kalman_index(model.A, model.B)
    p = 2 * (k + 1)
    X, Y = np.log(s), np.log(lam)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 0.0
    scaled = lam * t / s**p
    c0 = float(scaled.min())
    return ScalingFit(float(slope), c0, float(r2), lam - c0 * s**p / t, lam, p)
