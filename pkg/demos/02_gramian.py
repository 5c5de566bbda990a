"""Small-range behaviour of the weighted controllability Gramian.

For the kinetic model the smallest eigenvalue grows like s^2, for the
three-state chain like s^4; the fitted exponents are printed next to the
exponent implied by the Kalman index.
"""
import numpy as np

from kel.gramian import gramian_Q, verify_gramian_scaling
from kel.model import chain, kinetic_ou

print("Q(t, t) for the kinetic model against t/6:")
for t in (0.1, 1.0, 10.0):
    print(f"  t={t:<5} Q={gramian_Q(kinetic_ou(), t, t).Q[0, 0]:.10f}  t/6={t / 6:.10f}")

grid = np.geomspace(1e-3, 1e-1, 8)
for name, model in (("kinetic-ou", kinetic_ou()), ("chain", chain())):
    fit = verify_gramian_scaling(model, 1.0, grid)
    print(f"{name:<11} slope {fit.slope:.3f} (expected {fit.expected_slope}), c0={fit.c0:.4g}, R2={fit.r2:.6f}")
