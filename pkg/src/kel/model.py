"""Degenerate two-block SDE models, presets and structural constants.

A :class:`BlockModel` describes

    dX1 = (A X1 + B X2 + b(X, mu)) dt
    dX2 = Z(t, X, mu) dt + sigma(t, mu) dW

with noise on the second block only. Coefficient maps are vectorised: they
receive an ``(N, d1 + d2)`` array of states and return one row per state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import (
    NonPositiveForm,
    NotControllable,
    RateNotPositive,
    ValidationError,
)

__all__ = [
    "MeasureSummary",
    "MeanFieldSpec",
    "BlockModel",
    "ConditionReport",
    "DissipativityResult",
    "ProbePlan",
    "kalman_index",
    "check_dissipativity",
    "kappa",
    "twisted_constants",
    "twisted_form_matrix",
    "granular_thetas",
    "twisted_metric",
    "equivalence_constant",
    "condition_report",
    "kinetic_ou",
    "chain",
    "granular",
    "preset",
    "PRESETS",
]

RANK_RTOL = 1e-10
SIGMA_COND_CAP = 1e12


class MeasureSummary:
    """Statistics of the current ensemble handed to law-dependent coefficients.

    ``interaction`` holds the kernel average ``mu(grad_W(x1_i, .))`` for every
    particle, row-aligned with the state array being evaluated. The covariance
    is computed on first access.
    """

    def __init__(self, states: np.ndarray, interaction: Optional[np.ndarray] = None,
                 mean: Optional[np.ndarray] = None):
        self.states = states
        self.mean = states.mean(axis=0) if mean is None else mean
        self.interaction = interaction

    @cached_property
    def cov(self) -> np.ndarray:
        if self.states.shape[0] < 2:
            return np.zeros((self.states.shape[1],) * 2)
        return np.atleast_2d(np.cov(self.states, rowvar=False, bias=True))

    def rows(self, a: int, b: int) -> "MeasureSummary":
        """View restricted to particles a:b (only the interaction term is row-aligned)."""
        if self.interaction is None:
            return self
        out = MeasureSummary.__new__(MeasureSummary)
        out.states, out.mean, out.interaction = self.states, self.mean, self.interaction[a:b]
        if "cov" in self.__dict__:
            out.__dict__["cov"] = self.__dict__["cov"]
        return out


@dataclass
class MeanFieldSpec:
    """Interaction descriptors of a distribution-dependent model.

    grad_W(v, z) must broadcast: ``v`` has shape ``(..., d1)`` and ``z`` shape
    ``(..., d1 + d2)``. ``averaged`` is an optional exact shortcut for
    ``mean_j grad_W(v_i, z_j)``; when absent the pairwise average is used.
    """

    grad_W: Callable[[np.ndarray, np.ndarray], np.ndarray]
    beta: float
    theta: float
    sigma_of_measure: Optional[Callable[[MeasureSummary], np.ndarray]] = None
    averaged: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def audit_theta(self, d1: int, d2: int, n: int = 2000, scale: float = 3.0,
                    seed: int = 0) -> float:
        """Largest sampled difference quotient of ``grad_W``.

        Uses the metric ``|v - v'| + |z - z'|`` from the Lipschitz condition on
        the kernel; the result should not exceed the declared ``theta``.
        """
        rng = np.random.default_rng(seed)
        v, vb = rng.uniform(-scale, scale, (2, n, d1))
        z, zb = rng.uniform(-scale, scale, (2, n, d1 + d2))
        num = np.linalg.norm(self.grad_W(v, z) - self.grad_W(vb, zb), axis=-1)
        den = np.linalg.norm(v - vb, axis=-1) + np.linalg.norm(z - zb, axis=-1)
        return float(np.max(num / den))


def _const_sigma(mat: np.ndarray) -> Callable:
    mat = np.array(mat, dtype=float)

    def sigma(t, summary=None):
        return mat

    return sigma


@dataclass
class BlockModel:
    d1: int
    d2: int
    A: np.ndarray
    B: np.ndarray
    Z: Callable[[float, np.ndarray, Optional[MeasureSummary]], np.ndarray]
    sigma: Callable[[float, Optional[MeasureSummary]], np.ndarray]
    b: Optional[Callable[[np.ndarray, Optional[MeasureSummary]], np.ndarray]] = None
    jac_b: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jac_Z: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    mean_field: Optional[MeanFieldSpec] = None
    nondegenerate_noise: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.d1, self.d2)
        if self.A.shape != (self.d1, self.d1):
            raise ValidationError(f"A must be {self.d1}x{self.d1}, got {self.A.shape}")
        if not callable(self.sigma):
            self.sigma = _const_sigma(np.asarray(self.sigma, dtype=float).reshape(self.d2, self.d2))

    @property
    def dim(self) -> int:
        return self.d1 + self.d2

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[..., : self.d1], x[..., self.d1:]

    def drift1(self, x: np.ndarray, summary: Optional[MeasureSummary] = None) -> np.ndarray:
        x1, x2 = self.split(x)
        out = x1 @ self.A.T + x2 @ self.B.T
        if self.b is not None:
            out = out + self.b(x, summary)
        return out

    def drift2(self, t: float, x: np.ndarray,
               summary: Optional[MeasureSummary] = None) -> np.ndarray:
        return self.Z(t, x, summary)

    def drift(self, t: float, x: np.ndarray,
              summary: Optional[MeasureSummary] = None) -> np.ndarray:
        return np.concatenate([self.drift1(x, summary), self.drift2(t, x, summary)], axis=-1)

    def sigma_at(self, t: float, summary: Optional[MeasureSummary] = None) -> np.ndarray:
        s = np.asarray(self.sigma(t, summary), dtype=float).reshape(self.d2, self.d2)
        if self.nondegenerate_noise:
            key = s.tobytes()
            if self.__dict__.get("_sigma_ok") != key:
                if np.linalg.cond(s) > SIGMA_COND_CAP:
                    raise ValidationError(f"sigma({t}) is numerically singular")
                self.__dict__["_sigma_ok"] = key
        return s

    def diffusion_matrix(self, t: float, summary: Optional[MeasureSummary] = None) -> np.ndarray:
        """a = sigma sigma^T / 2 on the noisy block."""
        s = self.sigma_at(t, summary)
        return 0.5 * s @ s.T

    def jacobian_b(self, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
        """Jacobian of b with respect to the full state, shape (N, d1, d1 + d2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.b is None:
            return np.zeros((x.shape[0], self.d1, self.dim))
        if self.jac_b is not None:
            return self.jac_b(x)
        return central_jacobian(lambda y: self.b(y, None), x, rel_step)

    def jacobian_Z(self, t: float, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.jac_Z is not None:
            return self.jac_Z(t, x)
        return central_jacobian(lambda y: self.Z(t, y, None), x, rel_step)


def central_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                     rel_step: float = 1e-5) -> np.ndarray:
    """Row-wise central finite-difference Jacobian of a vectorised map."""
    n, D = x.shape
    cols = []
    for j in range(D):
        hj = rel_step * np.maximum(1.0, np.abs(x[:, j]))
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += hj
        xm[:, j] -= hj
        cols.append((fun(xp) - fun(xm)) / (2.0 * hj)[:, None])
    return np.stack(cols, axis=-1)


# ----------------------------------------------------------------------------
# structural conditions

def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def kalman_index(A, B) -> int:
    """Smallest k with rank [B, AB, ..., A^k B] equal to the row dimension.

    Raises
    ------
    NotControllable
        If the rank never reaches ``d1`` for ``k <= d1 - 1``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d1 = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(d1, -1)
    if A.shape != (d1, d1):
        raise ValidationError("A must be square with as many rows as B")
    blocks = [B]
    for k in range(d1):
        if _rank(np.hstack(blocks)) == d1:
            return k
        blocks.append(A @ blocks[-1])
    raise NotControllable(f"rank of the Kalman matrix stays below {d1}")


@dataclass(frozen=True)
class ProbePlan:
    n_states: int = 10_000
    n_dirs: int = 100
    low: float = -5.0
    high: float = 5.0
    seed: int = 0
    rel_step: float = 1e-5


@dataclass
class DissipativityResult:
    passed: bool
    delta: float
    worst_margin: float
    witness_x: np.ndarray
    witness_v: np.ndarray
    delta_min: float  # smallest delta satisfied on the probe set

    @property
    def dissipativity_delta(self):
        return self.delta_min if self.delta_min < 1.0 else "violated"


def check_dissipativity(model: BlockModel, delta: float,
                        probes: ProbePlan = ProbePlan()) -> DissipativityResult:
    """Probe <(grad_2 b(x)) B^T v, v> + delta |B^T v|^2 >= 0 on random states.

    The Jacobian in the second block comes from ``model.jacobian_b`` (central
    differences unless an analytic Jacobian is attached). Directions ``v`` are
    uniform on the unit sphere of R^{d1}.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    rng = np.random.default_rng(probes.seed)
    xs = rng.uniform(probes.low, probes.high, (probes.n_states, model.dim))
    vs = rng.standard_normal((probes.n_dirs, model.d1))
    vs /= np.linalg.norm(vs, axis=1, keepdims=True)

    J2 = model.jacobian_b(xs, probes.rel_step)[:, :, model.d1:]  # (n, d1, d2)
    Btv = vs @ model.B  # rows are B^T v, shape (m, d2)
    quad = np.einsum("nij,mj,mi->nm", J2, Btv, vs)
    sq = np.sum(Btv ** 2, axis=1)[None, :]
    margin = quad + delta * sq
    i, j = np.unravel_index(np.argmin(margin), margin.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(sq > 0, -quad / sq, 0.0)
    delta_min = float(max(0.0, np.max(need)))
    return DissipativityResult(
        passed=bool(margin[i, j] >= 0.0),
        delta=delta,
        worst_margin=float(margin[i, j]),
        witness_x=xs[i],
        witness_v=vs[j],
        delta_min=delta_min,
    )


# ----------------------------------------------------------------------------
# closed-form constants of the granular/contraction analysis

def kappa(beta: float, theta1: float, theta2: float) -> float:
    """Contraction rate 2(beta - theta1 - theta2) / (2 + 2 beta + beta^2 + sqrt(beta^4 + 4))."""
    if beta <= 0:
        raise ValidationError("beta must be positive")
    if theta1 + theta2 >= beta:
        raise RateNotPositive(f"theta1 + theta2 = {theta1 + theta2} >= beta = {beta}")
    return 2.0 * (beta - theta1 - theta2) / (2.0 + 2.0 * beta + beta ** 2 + np.sqrt(beta ** 4 + 4.0))


def twisted_constants(beta: float) -> tuple[float, float]:
    """Return (a, r) with a^2 = (1+b+b^2)/(1+b) and r = a - b/a."""
    if beta <= 0:
        raise ValidationError("beta must be positive")
    a = np.sqrt((1.0 + beta + beta ** 2) / (1.0 + beta))
    r = 1.0 / np.sqrt((1.0 + beta) * (1.0 + beta + beta ** 2))
    return float(a), float(r)


def granular_thetas(theta: float, alpha: float, beta: float) -> tuple[float, float]:
    root = np.sqrt(2.0 + 2.0 * beta + beta ** 2)
    theta1 = theta * (0.5 + root)
    theta2 = 0.5 * theta * root + alpha * (beta + 1.0) / (2.0 * beta)
    return float(theta1), float(theta2)


def twisted_form_matrix(beta: float, B) -> np.ndarray:
    """Symmetric matrix M with psi_bar(x, y)^2 = (x - y)^T M (x - y)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    a, r = twisted_constants(beta)
    d1, d2 = B.shape
    M = np.empty((d1 + d2, d1 + d2))
    M[:d1, :d1] = a * a * np.eye(d1)
    M[:d1, d1:] = r * a * B
    M[d1:, :d1] = r * a * B.T
    M[d1:, d1:] = B.T @ B
    return M


def twisted_metric(x, y, beta: float, B) -> np.ndarray | float:
    """Twisted distance between states (rows of ``x`` and ``y`` broadcast)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d1 = B.shape[0]
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    a, r = twisted_constants(beta)
    e1 = diff[..., :d1]
    Be2 = diff[..., d1:] @ B.T
    sq = (a * a * np.sum(e1 * e1, axis=-1) + np.sum(Be2 * Be2, axis=-1)
          + 2.0 * r * a * np.sum(e1 * Be2, axis=-1))
    if np.any(sq < -1e-12):
        raise NonPositiveForm("negative radicand in twisted metric")
    out = np.sqrt(np.maximum(sq, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def equivalence_constant(beta: float, B) -> float:
    """C >= 1 with |x - y| / C <= psi_bar(x, y) <= C |x - y|."""
    ev = np.linalg.eigvalsh(twisted_form_matrix(beta, B))
    if ev[0] <= 0:
        raise NonPositiveForm("twisted form is not positive definite")
    return float(max(np.sqrt(ev[-1]), 1.0 / np.sqrt(ev[0]), 1.0))


@dataclass
class ConditionReport:
    kalman_index: int | str
    dissipativity_delta: float | str | None
    theta1: float
    theta2: float
    kappa: Optional[float]
    twisted_a: float
    twisted_r: float
    beta: float

    def to_dict(self) -> dict:
        return {
            "kalman_index": self.kalman_index,
            "dissipativity_delta": self.dissipativity_delta,
            "theta1": self.theta1,
            "theta2": self.theta2,
            "kappa": self.kappa,
            "twisted_a": self.twisted_a,
            "twisted_r": self.twisted_r,
            "beta": self.beta,
        }


def condition_report(model: BlockModel, delta: float = 0.5,
                     probes: ProbePlan = ProbePlan(n_states=2000, n_dirs=50)) -> ConditionReport:
    """Collect Kalman index, dissipativity and contraction constants of a model.

    Constants depending on ``beta`` use the model's mean-field spec; for
    models without one, beta defaults to 1 with zero interaction.
    """
    try:
        k: int | str = kalman_index(model.A, model.B)
    except NotControllable:
        k = "not controllable"
    if model.b is None:
        diss: float | str | None = 0.0
    else:
        diss = check_dissipativity(model, delta, probes).dissipativity_delta
    mf = model.mean_field
    beta = mf.beta if mf else float(model.params.get("beta", 1.0))
    theta = mf.theta if mf else 0.0
    alpha = float(model.params.get("alpha", 0.0))
    th1, th2 = granular_thetas(theta, alpha, beta)
    try:
        kap: Optional[float] = kappa(beta, th1, th2)
    except RateNotPositive:
        kap = None
    a, r = twisted_constants(beta)
    return ConditionReport(k, diss, th1, th2, kap, a, r, beta)


# ----------------------------------------------------------------------------
# presets

def kinetic_ou(d: int = 1) -> BlockModel:
    """Kinetic Ornstein-Uhlenbeck: dX1 = X2 dt, dX2 = -(X1 + X2) dt + sqrt(2) dW."""

    def Z(t, x, summary=None):
        return -x[..., :d] - x[..., d:]

    def jac_Z(t, x):
        J = np.hstack([-np.eye(d), -np.eye(d)])
        return np.broadcast_to(J, (x.shape[0], d, 2 * d)).copy()

    return BlockModel(
        d1=d, d2=d, A=np.zeros((d, d)), B=np.eye(d), Z=Z, jac_Z=jac_Z,
        sigma=np.sqrt(2.0) * np.eye(d), name="kinetic-ou", params={"d": d},
    )


def chain() -> BlockModel:
    """Three-state integrator chain with Kalman index 1 (d1 = 2, d2 = 1).

    dX1a = X1b dt, dX1b = X2 dt, dX2 = -(X1a + 2 X1b + 2 X2) dt + sqrt(2) dW.
    The characteristic polynomial (s + 1)(s^2 + s + 1) is stable.
    """
    coef = np.array([-1.0, -2.0, -2.0])

    def Z(t, x, summary=None):
        return (x @ coef)[..., None]

    def jac_Z(t, x):
        return np.broadcast_to(coef, (x.shape[0], 1, 3)).copy()

    return BlockModel(
        d1=2, d2=1, A=np.array([[0.0, 1.0], [0.0, 0.0]]), B=np.array([[0.0], [1.0]]),
        Z=Z, jac_Z=jac_Z, sigma=np.sqrt(2.0) * np.eye(1), name="chain", params={},
    )


def granular(beta: float = 1.0, theta: float = 0.05, alpha: float = 0.0, d: int = 1,
             B=None, sigma0: float = np.sqrt(2.0),
             b: Optional[Callable] = None) -> BlockModel:
    """Degenerate granular-media particle model with quadratic attraction.

    Interaction kernel gradient ``grad_W(v, z) = theta (v - z1)``, so the mean
    field term is ``theta (x1 - mean(x1))``. The noise is
    ``sigma(mu) = sigma0 I + sqrt(alpha) diag(tanh(mean of x1 under mu))``,
    which satisfies ``||sigma(mu) - sigma(nu)||_HS^2 <= alpha W2(mu, nu)^2``.
    """
    if beta <= 0 or theta < 0 or alpha < 0:
        raise ValidationError("granular preset needs beta > 0, theta >= 0, alpha >= 0")
    B = np.eye(d) if B is None else np.asarray(B, dtype=float).reshape(d, d)
    Bt = B.T
    BtBBinv = B.T @ np.linalg.inv(B @ B.T)
    if alpha > 0 and sigma0 <= np.sqrt(alpha):
        raise ValidationError("sigma0 must exceed sqrt(alpha) to keep sigma invertible")

    def grad_W(v, z):
        return theta * (v - z[..., :d])

    def averaged(v, states):
        return theta * (v - states[:, :d].mean(axis=0))

    def sigma_of_measure(summary: MeasureSummary):
        s = sigma0 * np.eye(d)
        if alpha > 0:
            s = s + np.sqrt(alpha) * np.diag(np.tanh(summary.mean[:d]))
        return s

    mf = MeanFieldSpec(grad_W=grad_W, beta=beta, theta=theta,
                       sigma_of_measure=sigma_of_measure, averaged=averaged)

    def Z(t, x, summary=None):
        x1 = x[..., :d]
        out = -(beta * (x1 @ BtBBinv.T) + x[..., d:])
        if theta != 0.0:
            if summary is None or summary.interaction is None:
                raise ValidationError("granular drift with theta > 0 needs a measure summary")
            out = out - summary.interaction @ Bt.T
        return out

    def sigma(t, summary=None):
        if alpha == 0.0 or summary is None:
            return sigma0 * np.eye(d)
        return sigma_of_measure(summary)

    return BlockModel(
        d1=d, d2=d, A=np.zeros((d, d)), B=B, Z=Z, sigma=sigma, b=b, mean_field=mf,
        name="granular",
        params={"beta": beta, "theta": theta, "alpha": alpha, "d": d, "sigma0": float(sigma0)},
    )


PRESETS = {"kinetic-ou": kinetic_ou, "chain": chain, "granular": granular}


def preset(name: str, **params) -> BlockModel:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
