"""Counter-based Gaussian increments.

Every (seed, stream, step, particle) tuple addresses a fixed block of the
Philox stream, so any subset of particles can be generated independently and
the result never depends on how particles are split across workers.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def _blocks_per_particle(width: int) -> int:
    # one Philox block yields four 64-bit words, i.e. four normals via Box-Muller
    return -(-width // 4)


def normals(seed: int, stream: int, step: int, start: int, stop: int, width: int) -> np.ndarray:
    """Standard normals for particles ``start:stop``, shape ``(stop - start, width)``."""
    n = stop - start
    if n <= 0:
        return np.empty((0, width))
    bpp = _blocks_per_particle(width)
    bg = np.random.Philox(key=int(seed) & (2 ** 128 - 1),
                          counter=[start * bpp, 0, int(step), int(stream)])
    pairs = -(-width // 2)
    raw = bg.random_raw(n * bpp * 4).reshape(n, bpp * 2, 2)[:, :pairs]
    u1 = ((raw[..., 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
    u2 = (raw[..., 1] >> np.uint64(11)).astype(np.float64) * _INV_2_53
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = _TWO_PI * u2
    if width == 1:
        return (rad * np.cos(ang)).reshape(n, 1)
    z = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1).reshape(n, 2 * pairs)
    return z[:, :width]


def init_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for initial-condition sampling, disjoint from the step streams."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 2 ** 63, int(stream)]))
