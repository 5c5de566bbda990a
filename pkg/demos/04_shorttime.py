"""Blow-up of the transition-kernel relative entropy as t -> 0.

A displacement in the noisy block costs t^-1, one in the position block of
the kinetic model t^-3, and one in the far coordinate of the three-state
chain t^-5. The general exponent 4k+3 (k the Kalman index) is matched at
k = 0 and is an upper bound at k = 1.
"""
import numpy as np

from kel.experiments import shorttime_scaling
from kel.model import chain, kinetic_ou

grid = np.geomspace(1e-3, 1e-2, 12)
cases = [("kinetic, velocity", kinetic_ou(), [0, 0], [0, 1]),
         ("kinetic, position", kinetic_ou(), [0, 0], [1, 0]),
         ("chain, far coordinate", chain(), [0, 0, 0], [1, 0, 0])]
for label, model, x, y in cases:
    s = shorttime_scaling(model, x, y, grid).summary
    print(f"{label:<22} slope {s['slope']:+.3f}   reference {s['expected_slope']:+d}")
