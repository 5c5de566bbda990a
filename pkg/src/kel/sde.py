"""Euler-Maruyama integration of block models.

Particles are advanced in fixed-size chunks. Gaussian increments come from
:mod:`kel.rng` keyed by (seed, stream, step, particle), and mean-field
summaries are computed once per step from the pre-step ensemble, so the
output is bit-identical for any number of worker threads.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import rng as _rng
from .errors import GridMismatch, NonFiniteState, ValidationError
from .model import BlockModel, MeasureSummary, twisted_metric

__all__ = [
    "Ensemble",
    "CoupledEnsemble",
    "measure_summary",
    "step",
    "simulate",
    "couple_step",
    "couple_simulate",
    "coupled_init",
    "replay_audit",
    "write_snapshots_csv",
    "write_snapshots_binary",
    "read_snapshots_binary",
]

CHUNK = 2048
PAIRWISE_CAP = 20_000
DEFAULT_SUBSAMPLE = 2048
GRID_TOL = 1e-12

Init = Union[np.ndarray, Callable[[np.random.Generator, int], np.ndarray]]


@dataclass
class Ensemble:
    """N particle states plus the descriptors that fix their random streams.

    ``step_index`` is the shared per-particle counter: particle ``i`` at step
    ``n`` draws from the Philox block addressed by ``(seed, stream, n, i)``.
    """

    states: np.ndarray
    time: float = 0.0
    seed: int = 0
    stream: int = 0
    step_index: int = 0

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def copy(self) -> "Ensemble":
        return replace(self, states=self.states.copy())


@dataclass
class CoupledEnsemble:
    x: Ensemble
    y: Ensemble
    metric: Optional[tuple] = field(default=None, repr=False)  # (beta, B)

    @property
    def time(self) -> float:
        return self.x.time

    @property
    def diff(self) -> np.ndarray:
        return self.x.states - self.y.states

    @property
    def mean_sq_diff(self) -> float:
        return float(np.mean(np.sum(self.diff ** 2, axis=1)))

    @property
    def mean_psi_bar_sq(self) -> Optional[float]:
        if self.metric is None:
            return None
        beta, B = self.metric
        return float(np.mean(twisted_metric(self.x.states, self.y.states, beta, B) ** 2))


def _as_states(init: Init, n: Optional[int], dim: int, seed: int, stream: int) -> np.ndarray:
    if callable(init):
        if n is None:
            raise ValidationError("N is required with an initial sampler")
        states = np.asarray(init(_rng.init_rng(seed, stream), n), dtype=float)
    else:
        states = np.array(init, dtype=float)
        if states.ndim == 1:
            if n is None:
                raise ValidationError("N is required with a single initial point")
            states = np.tile(states, (n, 1))
    if states.ndim != 2 or states.shape[1] != dim:
        raise ValidationError(f"initial states must have shape (N, {dim}), got {states.shape}")
    if n is not None and states.shape[0] != n:
        raise ValidationError(f"expected {n} initial states, got {states.shape[0]}")
    return states


def measure_summary(model: BlockModel, states: np.ndarray, seed: int = 0, stream: int = 0,
                    step_index: int = 0, subsample: int = DEFAULT_SUBSAMPLE) -> Optional[MeasureSummary]:
    """Empirical summary used in place of the law of the solution.

    Kernel averages are exact pairwise means up to ``PAIRWISE_CAP`` particles;
    above it, a deterministic subsample of ``subsample`` partners is used.
    """
    mf = model.mean_field
    if mf is None:
        return None
    x1 = states[:, : model.d1]
    if mf.averaged is not None:
        inter = mf.averaged(x1, states)
    else:
        partners = states
        if states.shape[0] > PAIRWISE_CAP:
            g = np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 1, step_index, stream]))
            partners = states[np.sort(g.choice(states.shape[0], subsample, replace=False))]
        inter = np.empty_like(x1)
        for a in range(0, x1.shape[0], 256):
            inter[a:a + 256] = mf.grad_W(x1[a:a + 256, None, :], partners[None, :, :]).mean(axis=1)
    return MeasureSummary(states, interaction=inter)


def _row_summary(summary: Optional[MeasureSummary], a: int, b: int) -> Optional[MeasureSummary]:
    return None if summary is None else summary.rows(a, b)


def _map_chunks(fn, n: int, threads: int):
    bounds = [(a, min(a + CHUNK, n)) for a in range(0, n, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda ab: fn(*ab), bounds))
    else:
        for a, b in bounds:
            fn(a, b)


def _advance(models: Sequence[BlockModel], ensembles: Sequence[Ensemble], h: float,
             threads: int) -> list[Ensemble]:
    """One EM step for one ensemble, or several driven by the first one's noise."""
    if h <= 0:
        raise ValidationError("step size must be positive")
    lead = ensembles[0]
    t = lead.time
    sq = np.sqrt(h)
    summaries = [measure_summary(m, e.states, e.seed, e.stream, e.step_index)
                 for m, e in zip(models, ensembles)]
    sigmas = [m.sigma_at(t, s) for m, s in zip(models, summaries)]
    outs = [np.empty_like(e.states) for e in ensembles]
    d2 = models[0].d2

    def chunk(a, b):
        xi = _rng.normals(lead.seed, lead.stream, lead.step_index, a, b, d2)
        for m, e, s, sig, out in zip(models, ensembles, summaries, sigmas, outs):
            x = e.states[a:b]
            rs = _row_summary(s, a, b)
            out[a:b, : m.d1] = x[:, : m.d1] + h * m.drift1(x, rs)
            out[a:b, m.d1:] = x[:, m.d1:] + h * m.drift2(t, x, rs) + sq * (xi @ sig.T)

    _map_chunks(chunk, lead.n, threads)
    for out in outs:
        if not np.all(np.isfinite(out)):
            raise NonFiniteState(f"non-finite state after step {lead.step_index} (t={t})")
    return [Ensemble(out, t + h, e.seed, e.stream, e.step_index + 1) for out, e in zip(outs, ensembles)]


def step(model: BlockModel, ens: Ensemble, h: float, threads: int = 1) -> Ensemble:
    """Single Euler-Maruyama step; returns a new ensemble."""
    if ens.states.shape[1] != model.dim:
        raise ValidationError("ensemble dimension does not match the model")
    return _advance([model], [ens], h, threads)[0]


def _grid_steps(t_grid, t0: float, h: float) -> list[int]:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise GridMismatch("t_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(t_grid) <= 0):
        raise GridMismatch("t_grid must be strictly increasing")
    steps = []
    for t in t_grid:
        n = round((t - t0) / h)
        if n < 0 or abs(t0 + n * h - t) > GRID_TOL * max(1.0, abs(t)):
            raise GridMismatch(f"time {t} is not reachable from {t0} in whole steps of {h}")
        steps.append(int(n))
    return steps


def simulate(model: BlockModel, init: Init, N: Optional[int] = None, h: float = 1e-3,
             t_grid: Sequence[float] = (0.0, 1.0), seed: int = 0, stream: int = 0,
             threads: int = 1) -> list[Ensemble]:
    """Integrate from time 0 and return snapshots at the requested times."""
    states = _as_states(init, N, model.dim, seed, stream)
    steps = _grid_steps(t_grid, 0.0, h)
    ens = Ensemble(states, 0.0, seed, stream, 0)
    out = []
    for n, t in zip(steps, t_grid):
        while ens.step_index < n:
            ens = step(model, ens, h, threads)
        out.append(replace(ens.copy(), time=float(t)))
    return out


def couple_step(model_x: BlockModel, model_y: BlockModel, pair: CoupledEnsemble, h: float,
                threads: int = 1) -> CoupledEnsemble:
    ex, ey = _advance([model_x, model_y], [pair.x, pair.y], h, threads)
    return CoupledEnsemble(ex, ey, pair.metric)


def coupled_init(mu: Init, nu: Init, N: int, kind: str = "independent", seed: int = 0,
                 dim: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample a coupling of two initial laws.

    kinds: ``same-point`` (Y0 = X0, ``nu`` ignored), ``independent``,
    ``comonotone-by-index`` (both clouds sorted by their first coordinate,
    exact for one-dimensional laws) and ``optimal`` (exact assignment,
    N <= 2048).
    """
    def draw(init, stream):
        if callable(init):
            return np.asarray(init(_rng.init_rng(seed, stream), N), dtype=float)
        arr = np.array(init, dtype=float)
        return np.tile(arr, (N, 1)) if arr.ndim == 1 else arr

    X0 = draw(mu, 0)
    if kind == "same-point":
        return X0, X0.copy()
    Y0 = draw(nu, 1)
    if kind == "independent":
        return X0, Y0
    if kind == "comonotone-by-index":
        return X0[np.argsort(X0[:, 0], kind="stable")], Y0[np.argsort(Y0[:, 0], kind="stable")]
    if kind == "optimal":
        from .transport import w2_exact

        est = w2_exact(X0, Y0)
        return X0, Y0[est.metadata["matching"]]
    raise ValidationError(f"unknown coupling kind {kind!r}")


def couple_simulate(model: BlockModel, init_pair: tuple[np.ndarray, np.ndarray], h: float = 1e-3,
                    t_grid: Sequence[float] = (0.0, 1.0), seed: int = 0, stream: int = 0,
                    model_y: Optional[BlockModel] = None, metric: Optional[tuple] = None,
                    threads: int = 1) -> list[CoupledEnsemble]:
    """Synchronous coupling: both copies consume the same Gaussian increments.

    ``metric`` is ``(beta, B)`` for the twisted distance; it defaults to the
    model's mean-field beta and coupling matrix when the model has one.
    """
    model_y = model if model_y is None else model_y
    X0, Y0 = (np.asarray(a, dtype=float) for a in init_pair)
    if X0.shape != Y0.shape or X0.shape[1] != model.dim:
        raise ValidationError("initial pair must be two (N, dim) arrays of equal shape")
    if metric is None and model.mean_field is not None and model.d1 == model.d2:
        metric = (model.mean_field.beta, model.B)
    steps = _grid_steps(t_grid, 0.0, h)
    pair = CoupledEnsemble(Ensemble(X0.copy(), 0.0, seed, stream, 0),
                           Ensemble(Y0.copy(), 0.0, seed, stream, 0), metric)
    out = []
    for n, t in zip(steps, t_grid):
        while pair.x.step_index < n:
            pair = couple_step(model, model_y, pair, h, threads)
        out.append(CoupledEnsemble(replace(pair.x.copy(), time=float(t)),
                                   replace(pair.y.copy(), time=float(t)), metric))
    return out


def replay_audit(pair: CoupledEnsemble, d2: int) -> bool:
    """Check that both members address the same noise block at their current step."""
    ex, ey = pair.x, pair.y
    if (ex.seed, ex.stream, ex.step_index, ex.n) != (ey.seed, ey.stream, ey.step_index, ey.n):
        return False
    nx = _rng.normals(ex.seed, ex.stream, ex.step_index, 0, ex.n, d2)
    ny = _rng.normals(ey.seed, ey.stream, ey.step_index, 0, ey.n, d2)
    return bool(np.array_equal(nx, ny))


# ----------------------------------------------------------------------------
# snapshot dumps

def write_snapshots_csv(path, snapshots: Sequence[Ensemble], d1: int, header_comment: str = "") -> None:
    """CSV with columns t,particle,block,coord (block is 1 or 2, coord within block)."""
    with open(path, "w", newline="\n") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write("t,particle,block,coord,value\n")
        for ens in snapshots:
            t = repr(float(ens.time))
            for i, row in enumerate(ens.states.tolist()):
                for j, value in enumerate(row):
                    block, coord = (1, j) if j < d1 else (2, j - d1)
                    fh.write(f"{t},{i},{block},{coord},{value!r}\n")


_MAGIC = b"KELSNAP1"


def write_snapshots_binary(path, snapshots: Sequence[Ensemble], d1: int, meta: Optional[dict] = None) -> None:
    """Binary dump: magic, uint32 header length, JSON header, float64 LE payload.

    The payload is a C-ordered ``(n_snapshots, N, d1 + d2)`` array.
    """
    arr = np.stack([e.states for e in snapshots]).astype("<f8")
    header = dict(meta or {})
    header.update({"times": [float(e.time) for e in snapshots], "shape": list(arr.shape), "d1": d1})
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(arr.tobytes(order="C"))


def read_snapshots_binary(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValidationError("not a snapshot file")
        (hl,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hl))
        arr = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"])
    return header, arr
