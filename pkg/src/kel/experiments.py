"""Numerical experiments built from the library modules.

Each experiment returns an :class:`ExperimentReport` whose ``config`` holds
every resolved parameter, so that :func:`run_experiment` on that config
reproduces the report bit for bit. Reports serialise to JSON and to a flat
CSV with columns ``t,quantity,value,stderr``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
import os
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .entropy import knn_kl
from .errors import (DegenerateSeries, DriftDifferenceOutsideRange, NonPositiveValue,
                     NotStationary, ValidationError)
from .gaussian import (GaussianState, entropy_cost_curve, gaussian_kl, linear_coefficients,
                       propagate_linear_path)
from .model import BlockModel, granular_thetas, kalman_index, kappa, preset
from .sde import couple_simulate, coupled_init, replay_audit, simulate
from .transport import w2_exact

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentReport",
    "RateFit",
    "rate_fit",
    "shift_drift",
    "entropy_cost_bound",
    "verify_entropy_inequality_gaussian",
    "shorttime_scaling",
    "coupling_contraction",
    "ergodicity_experiment",
    "EXPERIMENTS",
    "run_experiment",
    "version_string",
    "config_hash",
]

SCHEMA_VERSION = 1


# ----------------------------------------------------------------------------
# reports

def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        desc = out.stdout.strip() if out.returncode == 0 else ""
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        if not math.isfinite(val):
            raise ValidationError(f"report field is not finite: {val}")
        return val
    return obj


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentReport:
    """Result of one experiment.

    ``records`` are ``(t, quantity, value, stderr)`` rows, with ``stderr``
    None where no uncertainty applies. Margins are always bound minus
    measured value. ``wall_clock`` is kept in memory only so that written
    files are byte-identical across reruns.
    """

    experiment: str
    config: dict
    seed: int
    t_grid: list
    records: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def add(self, t, quantity: str, value, stderr=None) -> None:
        self.records.append((float(t), quantity, float(value),
                             None if stderr is None else float(stderr)))

    def series(self, quantity: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [(t, v) for t, q, v, _ in self.records if q == quantity]
        if not rows:
            return np.empty(0), np.empty(0)
        t, v = zip(*rows)
        return np.array(t), np.array(v)

    def stderr(self, quantity: str) -> np.ndarray:
        return np.array([np.nan if s is None else s for _, q, _, s in self.records if q == quantity])

    @property
    def passed(self) -> Optional[bool]:
        return self.summary.get("passed")

    def to_dict(self) -> dict:
        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "version": version_string(),
            "config_hash": config_hash(self.config),
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "t_grid": list(self.t_grid),
            "fit": self.fit,
            "summary": self.summary,
            "records": [{"t": t, "quantity": q, "value": v, "stderr": s}
                        for t, q, v, s in self.records],
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# experiment={self.experiment} version={version_string()} "
                  f"config_hash={config_hash(self.config)} seed={self.seed}\n")
        buf.write("t,quantity,value,stderr\n")
        for t, q, v, s in self.records:
            buf.write(f"{t!r},{q},{v!r},{'' if s is None else repr(s)}\n")
        return buf.getvalue()

    def write(self, outdir, stem: Optional[str] = None, svg: bool = False) -> list[Path]:
        """Write ``<stem>.json`` and ``<stem>.csv`` (and ``<stem>.svg``) to ``outdir``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stem = stem or self.experiment
        paths = [outdir / f"{stem}.json", outdir / f"{stem}.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.to_csv())
        if svg:
            paths.append(self.write_svg(outdir / f"{stem}.svg"))
        return paths

    def write_svg(self, path) -> Path:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        matplotlib.rcParams["svg.hashsalt"] = "kel"
        fig, ax = plt.subplots(figsize=(6, 4))
        for q in dict.fromkeys(q for _, q, _, _ in self.records):
            t, v = self.series(q)
            if v.size > 1 and np.all(v > 0):
                ax.plot(t, v, marker=".", label=q)
        scale = self.summary.get("axes", "semilogy")
        if scale in ("semilogy", "loglog"):
            ax.set_yscale("log")
        if scale == "loglog":
            ax.set_xscale("log")
        ax.set_xlabel("t")
        ax.set_title(self.experiment)
        if ax.lines:
            ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
        return Path(path)


# ----------------------------------------------------------------------------
# fitting

@dataclass
class RateFit:
    slope: float
    intercept: float
    r2: float
    n: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def rate_fit(t, values, mode: str = "exp", window: Optional[tuple] = None) -> RateFit:
    """Least-squares line through ``(t, log v)`` (``mode="exp"``) or ``(log t, log v)``.

    ``window`` restricts the fit to ``window[0] <= t <= window[1]``. A series
    with no spread in log v gets R^2 = 0 by convention.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if t.size < 4:
        raise ValidationError(f"rate fit needs at least 4 points, got {t.size}")
    if np.any(v <= 0):
        raise NonPositiveValue("rate fit needs strictly positive values")
    if mode == "exp":
        X = t
    elif mode == "loglog":
        if np.any(t <= 0):
            raise NonPositiveValue("log-log fit needs positive times")
        X = np.log(t)
    else:
        raise ValidationError(f"unknown fit mode {mode!r}")
    Y = np.log(v)
    if np.ptp(Y) <= 4 * np.finfo(float).eps * max(1.0, np.max(np.abs(Y))):
        return RateFit(0.0, float(Y.mean()), 0.0, int(t.size))
    Xc = X - X.mean()
    slope = float(np.dot(Xc, Y - Y.mean()) / np.dot(Xc, Xc))
    intercept = float(Y.mean() - slope * X.mean())
    ss = float(np.sum((Y - Y.mean()) ** 2))
    resid = Y - (slope * X + intercept)
    return RateFit(slope, intercept, float(1.0 - np.sum(resid**2) / ss), int(t.size))


def _tgrid(spec) -> np.ndarray:
    """Times from a list or from ``{"start", "stop", "num", "spacing"}``."""
    if isinstance(spec, dict):
        unknown = set(spec) - {"start", "stop", "num", "spacing"}
        if unknown:
            raise ValidationError(f"unknown t_grid keys {sorted(unknown)}")
        if spec.get("spacing", "linear") == "log":
            return np.geomspace(spec["start"], spec["stop"], int(spec["num"]))
        return np.linspace(spec["start"], spec["stop"], int(spec["num"]))
    return np.asarray(spec, dtype=float)


# ----------------------------------------------------------------------------
# entropy inequality

def shift_drift(model: BlockModel, block2=None, block1=None) -> BlockModel:
    """Copy of ``model`` with constant vectors added to the block drifts."""
    Z0, b0 = model.Z, model.b
    new = dataclasses.replace(model, name=f"{model.name}+shift", params=dict(model.params))
    if block2 is not None:
        d2v = np.broadcast_to(np.asarray(block2, dtype=float), (model.d2,)).copy()
        new.Z = lambda t, x, s=None: Z0(t, x, s) + d2v
        new.jac_Z = model.jac_Z
    if block1 is not None:
        d1v = np.broadcast_to(np.asarray(block1, dtype=float), (model.d1,)).copy()
        new.b = (lambda x, s=None: d1v + np.zeros(x.shape[:-1] + (model.d1,))) if b0 is None \
            else (lambda x, s=None: b0(x, s) + d1v)
        new.jac_b = model.jac_b if b0 is not None else (
            lambda x: np.zeros((np.atleast_2d(x).shape[0], model.d1, model.dim)))
    new.__dict__.pop("_sigma_ok", None)
    return new


def _weighted_norm(root: np.ndarray, v: np.ndarray, what: str) -> np.ndarray:
    """Norm of the minimal preimage of each row of ``v`` under ``root``."""
    pinv = np.linalg.pinv(root, rcond=1e-12)
    u = v @ pinv.T
    resid = np.linalg.norm(u @ root.T - v, axis=-1)
    if np.any(resid > 1e-9 * np.maximum(1.0, np.linalg.norm(v, axis=-1))):
        raise DriftDifferenceOutsideRange(f"{what} leaves the range of the reference noise")
    return np.linalg.norm(u, axis=-1)


def _default_grid(dim: int, width: float = 3.0, per_axis: int = 7) -> np.ndarray:
    if per_axis ** dim <= 20_000:
        axes = [np.linspace(-width, width, per_axis)] * dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, dim)
    return np.random.default_rng(0).uniform(-width, width, (20_000, dim))


def entropy_cost_bound(m1: BlockModel, m2: BlockModel, t: float, nodes: int = 32,
                        grid: Optional[np.ndarray] = None,
                        xi: Optional[Callable[[float], float]] = None) -> float:
    """Right-hand side of the entropy-cost inequality between two models.

    Returns ``(1/4) int_0^t (sup_x |a2^{-1/2} (Z1 - Z2)(s, x)| + xi(s) h(s))^2 ds``
    where ``a2 = sigma2 sigma2^T / 2`` and ``h(s)`` is the Hilbert-Schmidt
    norm of ``a2^{-1/2} (a1 - a2)``. The supremum is taken over ``grid``
    (a tensor grid on [-3, 3]^D by default). ``a2^{-1/2}`` acts through the
    minimal preimage, so a degenerate ``a2`` is allowed while the differences
    stay in its range. A difference in the noise-free block makes the bound
    infinite and raises :class:`DriftDifferenceOutsideRange`.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    if (m1.d1, m1.d2) != (m2.d1, m2.d2):
        raise ValidationError("models must share block sizes")
    X = _default_grid(m1.dim) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    diff1 = m1.drift1(X) - m2.drift1(X)
    if np.max(np.abs(diff1)) > 1e-12 * max(1.0, np.max(np.abs(m2.drift1(X)))):
        raise DriftDifferenceOutsideRange("drifts differ in the noise-free block")

    z, w = np.polynomial.legendre.leggauss(nodes)
    s_nodes = 0.5 * t * (z + 1.0)
    w = 0.5 * t * w
    total = 0.0
    for s, ws in zip(s_nodes, w):
        a1 = m1.diffusion_matrix(s)
        a2 = m2.diffusion_matrix(s)
        wv, V = np.linalg.eigh(a2)
        root = (V * np.sqrt(np.clip(wv, 0.0, None))) @ V.T
        dz = m1.drift2(s, X) - m2.drift2(s, X)
        term = float(np.max(_weighted_norm(root, dz, "drift difference")))
        if not np.allclose(a1, a2, rtol=0.0, atol=1e-14):
            if xi is None:
                raise ValidationError("noise coefficients differ; supply the xi rate")
            cols = _weighted_norm(root, (a1 - a2).T, "noise difference")
            term += float(xi(s)) * float(np.sqrt(np.sum(cols**2)))
        total += ws * term**2
    return 0.25 * total


def verify_entropy_inequality_gaussian(m1: BlockModel, m2: BlockModel, nu: GaussianState,
                                       t_grid: Sequence[float], nodes: int = 32,
                                       grid: Optional[np.ndarray] = None) -> ExperimentReport:
    """Exact Gaussian KL(law1_t | law2_t) against the entropy-cost bound."""
    F1, G1, u1 = linear_coefficients(m1)
    F2, G2, u2 = linear_coefficients(m2)
    if not np.allclose(G1, G2, rtol=0, atol=1e-14):
        raise ValidationError("both models must share the noise coefficient")
    t_grid = [float(t) for t in t_grid]
    rep = ExperimentReport("entropy-inequality", {}, 0, t_grid)
    worst = np.inf
    ratios = []
    laws1 = propagate_linear_path(F1, G1, u1, nu, t_grid)
    laws2 = propagate_linear_path(F2, G2, u2, nu, t_grid)
    for t, p1, p2 in zip(t_grid, laws1, laws2):
        kl = gaussian_kl(p1, p2)
        bound = entropy_cost_bound(m1, m2, t, nodes, grid)
        rep.add(t, "kl_exact", kl)
        rep.add(t, "bound", bound)
        rep.add(t, "margin", bound - kl)
        worst = min(worst, bound - kl)
        if bound > 0:
            ratios.append(kl / bound)
            rep.add(t, "ratio", kl / bound)
    rep.summary = {"min_margin": worst, "max_ratio": max(ratios) if ratios else 0.0,
                   "passed": bool(worst >= 0), "axes": "linear"}
    return rep


# ----------------------------------------------------------------------------
# short-time scaling

def shorttime_scaling(model: BlockModel, x, y, t_grid: Sequence[float],
                      tolerance: float = 0.1, expected: Optional[float] = None) -> ExperimentReport:
    """Log-log slope of the exact kernel KL between starts ``x`` and ``y``.

    The reference exponent defaults to ``-(4k + 3)`` with k the Kalman index
    of the model, or to -1 when the starts differ only in the noisy block.
    The pass flag uses a relative ``tolerance`` on it.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        raise ValidationError("starting points must differ")
    k = kalman_index(model.A, model.B)
    curve = entropy_cost_curve(model, x, y, t_grid)
    rep = ExperimentReport("shorttime-scaling", {}, 0, [float(t) for t in t_grid])
    for t, v in curve:
        rep.add(t, "kl_exact", v)
    ts, vs = rep.series("kl_exact")
    fit = rate_fit(ts, vs, mode="loglog")
    if expected is None:
        expected = -1 if np.array_equal(x[: model.d1], y[: model.d1]) else -(4 * k + 3)
    rep.fit = fit.as_dict()
    rep.summary = {"kalman_index": k, "expected_slope": expected, "slope": fit.slope,
                   "passed": bool(abs(fit.slope - expected) <= tolerance * abs(expected)),
                   "axes": "loglog"}
    return rep


# ----------------------------------------------------------------------------
# simulations

def _gaussian_sampler(mean, std) -> Callable:
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)

    def draw(gen: np.random.Generator, n: int) -> np.ndarray:
        return mean + std * gen.standard_normal((n, mean.size))

    return draw


def _record_grid(T: float, h: float, every: float) -> np.ndarray:
    stride = max(1, int(round(every / h)))
    n_steps = int(round(T / h))
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx * h


def coupling_contraction(beta: float = 1.0, theta: float = 0.05, alpha: float = 0.0,
                         N: int = 4096, h: float = 1e-3, T: float = 20.0, seed: int = 0,
                         x_mean=(2.0, 0.0), x_std=1.0, y_mean=(-1.0, 0.0), y_std=0.5,
                         coupling: str = "independent", record_every: float = 0.1,
                         burn_in: float = 0.1, safety: float = 0.9, replay_fraction: float = 0.05,
                         threads: int = 1, replay_threads: Optional[int] = None) -> ExperimentReport:
    """Synchronous coupling of two granular particle systems.

    Fits the exponential decay rate of the mean squared twisted distance
    after dropping the first ``burn_in`` fraction of the horizon and passes
    when it is at least ``2 * safety * kappa``. The replay check reruns the
    first ``replay_fraction`` of the horizon with a different thread count
    and requires bitwise-equal states, and audits that both copies consume
    the same noise block.
    """
    model = preset("granular", beta=beta, theta=theta, alpha=alpha)
    th1, th2 = granular_thetas(theta, alpha, beta)
    kap = kappa(beta, th1, th2)
    init = coupled_init(_gaussian_sampler(x_mean, x_std), _gaussian_sampler(y_mean, y_std),
                        N, coupling, seed)
    grid = _record_grid(T, h, record_every)
    snaps = couple_simulate(model, init, h, grid, seed, 0, threads=threads)
    rep = ExperimentReport("coupling-contraction", {}, seed, grid.tolist())
    for snap in snaps:
        rep.add(snap.time, "psi_bar_sq", snap.mean_psi_bar_sq)
        rep.add(snap.time, "euclid_sq", snap.mean_sq_diff)
    t, v = rep.series("psi_bar_sq")
    if np.all(v == 0):
        raise DegenerateSeries("coupled copies coincide; the decay rate is undefined")
    keep = (t >= burn_in * T) & (v > 0)
    fit = rate_fit(t[keep], v[keep], mode="exp")
    rate = -fit.slope

    rt = replay_threads if replay_threads is not None else (1 if threads > 1 else 3)
    rgrid = _record_grid(replay_fraction * T, h, replay_fraction * T)
    a = couple_simulate(model, init, h, rgrid, seed, 0, threads=threads)[-1]
    b = couple_simulate(model, init, h, rgrid, seed, 0, threads=rt)[-1]
    replay_ok = bool(np.array_equal(a.x.states, b.x.states) and np.array_equal(a.y.states, b.y.states)
                     and replay_audit(snaps[-1], model.d2))
    rep.fit = fit.as_dict()
    rep.summary = {"rate": rate, "kappa": kap, "theta1": th1, "theta2": th2,
                   "threshold": 2 * safety * kap, "rate_ok": bool(rate >= 2 * safety * kap),
                   "replay_ok": replay_ok, "passed": bool(rate >= 2 * safety * kap and replay_ok),
                   "axes": "semilogy"}
    return rep


def _halves_floor(X: np.ndarray, n_splits: int, seed: int) -> tuple[float, float]:
    """Mean and s.d. of W2 between random halves of a cloud."""
    g = np.random.default_rng([seed, 7])
    vals = []
    n = X.shape[0] // 2
    for _ in range(n_splits):
        perm = g.permutation(X.shape[0])
        vals.append(w2_exact(X[perm[:n]], X[perm[n:2 * n]]).value)
    return float(np.mean(vals)), float(np.std(vals, ddof=1))


def ergodicity_experiment(beta: float = 1.0, theta: float = 0.05, alpha: float = 0.0,
                          N: int = 2048, h: float = 1e-3, T: float = 12.0, seed: int = 0,
                          start=(2.0, 0.0), record_every: float = 0.5, burn_in: float = 0.1,
                          safety: float = 0.8, floor_factor: float = 2.0, audit_factor: float = 1.5,
                          n_splits: int = 20, k: int = 5, kl_boot: int = 20,
                          threads: int = 1) -> ExperimentReport:
    """Convergence of a granular particle system from a point mass to equilibrium.

    The equilibrium proxy is the terminal ensemble of an independent run
    (noise stream 1). It passes the stationarity audit when W2 between its
    snapshots at 0.8 T and T is at most ``audit_factor`` times the mean W2
    between random halves of the terminal ensemble. The W2^2 rate is fitted
    from the end of burn-in up to the first grid time where W2^2 falls below
    ``floor_factor`` times the squared floor, and compared against ``2 * safety * kappa``. The k-NN KL
    curve after burn-in must not rise by more than twice the combined
    bootstrap standard error between consecutive grid points.
    """
    model = preset("granular", beta=beta, theta=theta, alpha=alpha)
    kap = kappa(beta, *granular_thetas(theta, alpha, beta))
    x0 = np.asarray(start, dtype=float)
    grid = _record_grid(T, h, record_every)
    rep = ExperimentReport("ergodicity", {}, seed, grid.tolist())

    ref = simulate(model, x0, N, h, [0.8 * T, T] if 0.8 * T > 0 else [T], seed, 1, threads)
    ref_late, ref_T = ref[0].states, ref[-1].states
    floor, floor_sd = _halves_floor(ref_T, n_splits, seed)
    drift_w2 = w2_exact(ref_late, ref_T).value
    rep.summary = {"kappa": kap, "floor": floor, "floor_sd": floor_sd, "audit_w2": drift_w2,
                   "audit_limit": audit_factor * floor, "axes": "semilogy"}
    if drift_w2 > audit_factor * floor:
        rep.summary.update(stationary=False, passed=False)
        raise NotStationary(f"W2(0.8T, T) = {drift_w2:.4g} exceeds {audit_factor} x floor "
                            f"{floor:.4g}; lengthen T")
    rep.summary["stationary"] = True

    snaps = simulate(model, x0, N, h, grid, seed, 0, threads)
    for snap in snaps:
        w2 = w2_exact(snap.states, ref_T).value
        rep.add(snap.time, "w2_sq", w2**2)
        if snap.time >= burn_in * T:
            est = knn_kl(snap.states, ref_T, k=k, n_boot=kl_boot, seed=seed)
            rep.add(snap.time, "kl_knn", est.value, est.uncertainty)

    t, w2sq = rep.series("w2_sq")
    below = np.nonzero((t >= burn_in * T) & (w2sq < floor_factor * floor**2))[0]
    stop = t[below[0]] if below.size else np.inf
    keep = (t >= burn_in * T) & (t < stop)
    w_fit = rate_fit(t[keep], w2sq[keep], mode="exp")
    w_rate = -w_fit.slope

    tk, kl = rep.series("kl_knn")
    se = rep.stderr("kl_knn")
    rises = np.diff(kl) - 2.0 * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    monotone = bool(np.all(rises <= 0))
    kl_keep = kl > np.maximum(2 * se, 1e-12)
    kl_rate = None
    if kl_keep.sum() >= 4:
        kl_rate = -rate_fit(tk[kl_keep], kl[kl_keep], mode="exp").slope

    rep.fit = {"w2_sq": w_fit.as_dict(), "w2_window": [float(t[keep][0]), float(t[keep][-1])]}
    rep.summary.update({
        "w2_rate": w_rate, "threshold": 2 * safety * kap, "w2_rate_ok": bool(w_rate >= 2 * safety * kap),
        "kl_monotone": monotone, "kl_max_excess_rise": float(rises.max()) if rises.size else 0.0,
        "kl_rate": kl_rate,
        "kl_rate_within_factor_2": (None if kl_rate is None
                                    else bool(0.5 * w_rate <= kl_rate <= 2.0 * w_rate)),
        "passed": bool(w_rate >= 2 * safety * kap and monotone),
    })
    return rep


# ----------------------------------------------------------------------------
# config-driven entry points

def _entropy_inequality_cfg(preset_name: str = "kinetic-ou", deltas=(0.1, 0.5, 1.0),
                            t_grid=None, start=None, nodes: int = 32) -> ExperimentReport:
    base = preset(preset_name)
    t_grid = _tgrid(t_grid if t_grid is not None else {"start": 0.1, "stop": 5.0, "num": 50})
    x = np.zeros(base.dim) if start is None else np.asarray(start, dtype=float)
    nu = GaussianState.point(x)
    rep = ExperimentReport("entropy-inequality", {}, 0, t_grid.tolist())
    worst, passed = np.inf, True
    for d in deltas:
        sub = verify_entropy_inequality_gaussian(shift_drift(base, block2=d), base, nu, t_grid, nodes)
        for t, q, v, s in sub.records:
            rep.records.append((t, f"{q}[delta={d}]", v, s))
        worst = min(worst, sub.summary["min_margin"])
        passed &= sub.summary["passed"] and sub.summary["min_margin"] > 0
    rep.summary = {"min_margin": worst, "passed": bool(passed), "axes": "linear"}
    return rep


def _shorttime_cfg(cases=None, t_grid=None, tolerance: float = 0.1) -> ExperimentReport:
    cases = cases if cases is not None else [
        {"name": "kinetic-position", "preset": "kinetic-ou", "x": [0, 0], "y": [1, 0]},
        {"name": "kinetic-velocity", "preset": "kinetic-ou", "x": [0, 0], "y": [0, 1]},
        {"name": "chain-far", "preset": "chain", "x": [0, 0, 0], "y": [1, 0, 0]},
    ]
    t_grid = _tgrid(t_grid if t_grid is not None else
                    {"start": 1e-3, "stop": 1e-2, "num": 12, "spacing": "log"})
    rep = ExperimentReport("shorttime-scaling", {}, 0, t_grid.tolist())
    passed = True
    for case in cases:
        sub = shorttime_scaling(preset(case["preset"]), case["x"], case["y"], t_grid, tolerance)
        for t, q, v, s in sub.records:
            rep.records.append((t, f"{q}[{case['name']}]", v, s))
        rep.fit[case["name"]] = sub.fit
        rep.summary[case["name"]] = {key: sub.summary[key]
                                     for key in ("slope", "expected_slope", "kalman_index", "passed")}
        passed &= sub.summary["passed"]
    rep.summary.update(passed=bool(passed), axes="loglog")
    return rep


def _gramian_cfg(cases=None, t: float = 1.0, s_min: float = 1e-3, s_max: float = 1e-1,
                 num: int = 8, nodes: int = 64) -> ExperimentReport:
    from .gramian import verify_gramian_scaling

    cases = cases if cases is not None else ["kinetic-ou", "chain"]
    s_grid = np.geomspace(s_min, s_max, num)
    rep = ExperimentReport("gramian-scaling", {}, 0, s_grid.tolist())
    passed = True
    for name in cases:
        fit = verify_gramian_scaling(preset(name), t, s_grid, nodes)
        for si, lam in zip(s_grid, fit.lambda_min):
            rep.add(si, f"lambda_min[{name}]", lam)
        ok = abs(fit.slope - fit.expected_slope) <= 0.05 * fit.expected_slope
        rep.summary[name] = {"slope": fit.slope, "expected_slope": fit.expected_slope,
                             "c0": fit.c0, "r2": fit.r2, "passed": bool(ok)}
        passed &= ok
    rep.summary.update(passed=bool(passed), axes="loglog")
    return rep


EXPERIMENTS: dict[str, Callable[..., ExperimentReport]] = {
    "entropy-inequality": _entropy_inequality_cfg,
    "shorttime-scaling": _shorttime_cfg,
    "gramian-scaling": _gramian_cfg,
    "coupling-contraction": coupling_contraction,
    "ergodicity": ergodicity_experiment,
}


def _defaults(fn: Callable) -> dict:
    import inspect

    return {name: p.default for name, p in inspect.signature(fn).parameters.items()
            if p.default is not inspect.Parameter.empty}


def resolve_config(experiment: str, overrides: Optional[dict] = None) -> dict:
    """Full parameter set of an experiment; unknown keys are rejected."""
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    defaults = _defaults(EXPERIMENTS[experiment])
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown keys for {experiment}: {sorted(unknown)}")
    cfg = {**defaults, **overrides}
    return _jsonable(cfg)


_NOT_ECHOED = ("threads", "replay_threads")


def run_experiment(experiment: str, overrides: Optional[dict] = None) -> ExperimentReport:
    """Run an experiment by name; the report echoes the resolved config.

    Thread counts change neither results nor the echoed config.
    """
    cfg = resolve_config(experiment, overrides)
    start = time.perf_counter()
    rep = EXPERIMENTS[experiment](**cfg)
    rep.wall_clock = time.perf_counter() - start
    rep.config = {"experiment": experiment,
                  **{k: v for k, v in cfg.items() if k not in _NOT_ECHOED}}
    rep.seed = int(cfg.get("seed", 0))
    return rep


def default_threads() -> int:
    env = os.environ.get("KEL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"KEL_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError("KEL_THREADS must be positive")
        return n
    return os.cpu_count() or 1
